"""Command line front end.

    rwprune <train|prune|prune-multistep|admm|report|eval> --config PATH [overrides]

Outputs land under the config's ``out_dir`` in ``checkpoints/``, ``reports/``
and ``logs/``. Exit codes: 0 ok, 2 config error, 3 data error, 4 step
failure (accuracy collapse, last good checkpoint retained), 5 ADMM
divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import admm as admm_mod
from .checkpoint import install_checkpoint, load_checkpoint, save_checkpoint
from .config import (
    RunConfig,
    build_admm_config,
    build_layer_specs,
    build_optimizer,
    build_prune_config,
    build_threshold_policy,
    config_to_dict,
    load_config,
    override,
    parse_reg_kind,
    stage_rng,
)
from .datasets import Dataset, generate_digits, load_mnist
from .errors import (
    AdmmDivergenceError,
    ConfigError,
    DataError,
    RwpruneError,
    StepFailureError,
)
from .nn.network import Network
from .nn.training import dataset_loss, train_epochs
from .pipeline import run_multistep
from .report import (
    compression_model_from_net,
    compression_rates,
    low_decile_boundary,
    magnitude_histogram,
    surviving_low_magnitude_fraction,
    write_compression_csv,
    write_csv,
    write_histogram_csv,
    write_layer_rates_csv,
    write_step_layers_csv,
    write_step_reports_csv,
)

EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    StepFailureError: 4,
    AdmmDivergenceError: 5,
}


def _out_dirs(cfg: RunConfig) -> dict[str, Path]:
    root = Path(cfg.out_dir)
    dirs = {name: root / name for name in ("checkpoints", "reports", "logs")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _load_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    ds = cfg.dataset
    if ds.kind == "mnist-idx":
        if not ds.path:
            raise DataError("dataset.path is required for kind 'mnist-idx'")
        return load_mnist(ds.path)
    if ds.kind == "digits28":
        return generate_digits(
            ds.n_train,
            ds.n_test,
            cfg.seed,
            train_strength=ds.train_strength,
            test_strength=ds.test_strength,
        )
    raise ConfigError(f"unknown dataset kind '{ds.kind}'")


def _build_network(cfg: RunConfig, train_data: Dataset) -> Network:
    specs = build_layer_specs(cfg.model)
    input_shape = train_data.inputs.shape[1:]
    return Network.from_specs(specs, input_shape, stage_rng(cfg.seed, "init"))


def _load_network(cfg: RunConfig, train_data: Dataset) -> Network:
    if not cfg.checkpoint:
        raise ConfigError("a checkpoint path is required (config 'checkpoint' or --checkpoint)")
    net = _build_network(cfg, train_data)
    ckpt = load_checkpoint(cfg.checkpoint, expected=net)
    install_checkpoint(net, ckpt)
    return net


def _metadata(cfg: RunConfig, metrics: dict) -> dict:
    return {"config": config_to_dict(cfg), "metrics": metrics}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    dirs = _out_dirs(cfg)
    train_data, test_data = _load_dataset(cfg)
    net = _build_network(cfg, train_data)
    history = train_epochs(
        net,
        train_data,
        cfg.train.epochs,
        build_optimizer(cfg.optimizer),
        stage_rng(cfg.seed, "train"),
        batch_size=cfg.train.batch_size,
    )
    accuracy = net.evaluate(test_data)
    loss = dataset_loss(net, train_data)
    path = dirs["checkpoints"] / "baseline.ckpt"
    save_checkpoint(path, net, _metadata(cfg, {"accuracy": accuracy, "train_loss": loss}))
    write_csv(
        dirs["logs"] / "train.csv",
        ["epoch", "loss"],
        [(i + 1, l) for i, l in enumerate(history)],
    )
    print(f"accuracy={accuracy:.4f} train_loss={loss:.6f} checkpoint={path}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    train_data, test_data = _load_dataset(cfg)
    net = _load_network(cfg, train_data)
    accuracy = net.evaluate(test_data)
    print(f"accuracy={accuracy:.4f}")
    return 0


def cmd_prune(cfg: RunConfig, steps: int) -> int:
    dirs = _out_dirs(cfg)
    train_data, test_data = _load_dataset(cfg)
    net = _load_network(cfg, train_data)
    kind = parse_reg_kind(cfg.prune.kind)
    step_cfg = build_prune_config(cfg)
    rng = stage_rng(cfg.seed, "prune")

    reports = []

    def on_step(step: int, result):
        reports.append(result.report)
        if result.report.success:
            save_checkpoint(
                dirs["checkpoints"] / f"step{step}.ckpt",
                result.net,
                _metadata(
                    cfg,
                    {
                        "accuracy": result.report.accuracy_after,
                        "overall_rate": result.report.overall_rate,
                        "step": step,
                    },
                ),
            )
            postreg = result.net.copy()
            for name, w in result.postreg_weights.items():
                postreg.parametric[name].W = w.copy()
            postreg.masks = {}
            save_checkpoint(
                dirs["checkpoints"] / f"step{step}_postreg.ckpt",
                postreg,
                _metadata(cfg, {"step": step, "snapshot": "post-regularization"}),
            )
        write_step_layers_csv(dirs["reports"] / f"step{step}_layers.csv", result.report)
        if result.report.lam_interval is not None:
            lo, hi = result.report.lam_interval
            print(f"lambda={result.report.lam:.6g} interval=[{lo:.6g}, {hi:.6g}]")

    outcome = run_multistep(
        net, train_data, test_data, step_cfg, kind, steps, rng, on_step=on_step
    )
    write_step_reports_csv(dirs["reports"] / "steps_summary.csv", reports)
    for report in reports:
        status = "ok" if report.success else "failed"
        print(
            f"step={report.step} {status} rate={report.overall_rate:.2f}x "
            f"accuracy={report.accuracy_after:.4f}"
        )
    if outcome.failed:
        print("step failed: accuracy collapse, last good checkpoint retained", file=sys.stderr)
        return 4
    return 0


def _residual_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    f = open(path, "w", newline="")
    writer = csv.writer(f)
    writer.writerow(["k", "primal_residual", "loss", "accuracy"])

    def sink(k, residual, loss, accuracy):
        writer.writerow([k, residual, loss, accuracy])
        f.flush()

    return sink, f


def cmd_admm(cfg: RunConfig) -> int:
    dirs = _out_dirs(cfg)
    train_data, test_data = _load_dataset(cfg)
    net = _load_network(cfg, train_data)
    admm_cfg = build_admm_config(cfg)
    rng = stage_rng(cfg.seed, "admm")
    sink, handle = _residual_writer(dirs["logs"] / "admm_residuals.csv")

    try:
        if cfg.admm.task == "pattern-kernel":
            final, report = admm_mod.pattern_kernel_task(
                net,
                train_data,
                test_data,
                admm_cfg,
                rng,
                kernel_threshold=build_threshold_policy(cfg.prune.threshold),
                residual_sink=sink,
            )
            save_checkpoint(
                dirs["checkpoints"] / "admm_final.ckpt",
                final,
                _metadata(
                    cfg,
                    {
                        "accuracy": report.accuracy_after,
                        "pattern_rate": report.pattern_rate,
                        "kernel_rate": report.kernel_rate,
                        "conv_rate": report.conv_rate,
                    },
                ),
            )
            write_layer_rates_csv(dirs["reports"] / "admm_rates.csv", final)
            print(
                f"pattern_rate={report.pattern_rate:.2f}x kernel_rate={report.kernel_rate:.2f}x "
                f"conv_rate={report.conv_rate:.2f}x accuracy={report.accuracy_after:.4f}"
            )
        elif cfg.admm.task == "prune-quant":
            prune_cfg = build_prune_config(cfg)
            final, report = admm_mod.prune_quant_task(
                net,
                train_data,
                test_data,
                prune_cfg,
                admm_cfg,
                rng,
                conv_bits=cfg.admm.conv_bits,
                fc_bits=cfg.admm.fc_bits,
                residual_sink=sink,
            )
            model = compression_model_from_net(final, report.layer_bits)
            rates = compression_rates(model)
            save_checkpoint(
                dirs["checkpoints"] / "admm_final.ckpt",
                final,
                _metadata(
                    cfg,
                    {
                        "accuracy": report.admm_result.accuracy_after,
                        "data_rate": rates.data_rate,
                        "model_rate": rates.model_rate,
                    },
                ),
            )
            write_compression_csv(
                dirs["reports"] / "compression.csv", model, list(final.parametric)
            )
            print(
                f"data_rate={rates.data_rate:.1f}x model_rate={rates.model_rate:.1f}x "
                f"accuracy={report.admm_result.accuracy_after:.4f}"
            )
        else:
            raise ConfigError(f"unknown admm task '{cfg.admm.task}'")
    finally:
        handle.close()
    return 0


def cmd_report(cfg: RunConfig, baseline: str | None, conv_bits: int | None, fc_bits: int | None) -> int:
    dirs = _out_dirs(cfg)
    if not cfg.checkpoint:
        raise DataError("report requires a checkpoint (--checkpoint)")
    ckpt = load_checkpoint(cfg.checkpoint)

    rows = []
    for name, payload in ckpt.layers.items():
        mask = payload.mask
        nnz = int(mask.sum()) if mask is not None else int(np.count_nonzero(payload.weights))
        rows.append((name, payload.weights.size, nnz, payload.weights.size / nnz if nnz else float("inf"), nnz == 0))
        write_histogram_csv(
            dirs["reports"] / f"hist_{name}.csv", magnitude_histogram(payload.weights)
        )
    total = sum(r[1] for r in rows)
    nnz = sum(r[2] for r in rows)
    rows.append(("overall", total, nnz, total / nnz if nnz else float("inf"), nnz == 0))
    write_csv(dirs["reports"] / "pruning_rates.csv", ["layer", "total", "nonzero", "rate", "all_zero"], rows)

    if conv_bits is not None or fc_bits is not None:
        from .report import CompressionModel, LayerBits

        layers = []
        names = []
        for name, payload in ckpt.layers.items():
            bits = (conv_bits or 32) if payload.weights.ndim == 4 else (fc_bits or 32)
            mask = payload.mask
            layer_nnz = int(mask.sum()) if mask is not None else int(np.count_nonzero(payload.weights))
            layers.append(LayerBits(payload.weights.size, layer_nnz, bits))
            names.append(name)
        write_compression_csv(
            dirs["reports"] / "compression.csv", CompressionModel(tuple(layers)), names
        )

    if baseline is not None:
        base = load_checkpoint(baseline)
        shared = [name for name in ckpt.layers if name in base.layers]
        if not shared:
            raise DataError("checkpoints share no layers to compare")
        boundary = low_decile_boundary([base.layers[n].weights for n in shared])
        weights = [ckpt.layers[n].weights for n in shared]
        masks = [
            ckpt.layers[n].mask
            if ckpt.layers[n].mask is not None
            else (ckpt.layers[n].weights != 0.0).astype(float)
            for n in shared
        ]
        fraction = surviving_low_magnitude_fraction(weights, masks, boundary)
        write_csv(
            dirs["reports"] / "critical_weights.csv",
            ["decile_boundary", "surviving_fraction_below"],
            [(boundary, fraction)],
        )
        print(f"decile_boundary={boundary:.6g} surviving_fraction_below={fraction:.4f}")
    print(f"reports written to {dirs['reports']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the global seed")
    parser.add_argument("--out-dir", default=None, help="override the output directory")
    parser.add_argument("--checkpoint", default=None, help="input checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a baseline model")
    _add_common(p_train)
    p_train.add_argument("--epochs", type=int, default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p_eval)

    for name in ("prune", "prune-multistep"):
        p = sub.add_parser(name, help="reweighted pruning pipeline")
        _add_common(p)
        p.add_argument("--kind", default=None, help="nonstructured|filter|shape|kernel")
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument(
            "--lambda-auto",
            action="store_true",
            help="force band auto-tuning even if the config sets lambda",
        )
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--epochs-per-iteration", type=int, default=None)
        p.add_argument("--retrain-epochs", type=int, default=None)

    p_admm = sub.add_parser("admm", help="hard-constraint compression via ADMM")
    _add_common(p_admm)
    p_admm.add_argument("--task", default=None, help="pattern-kernel|prune-quant")
    p_admm.add_argument("--rho", type=float, default=None)
    p_admm.add_argument("--iterations", type=int, default=None)
    p_admm.add_argument("--inner-epochs", type=int, default=None)
    p_admm.add_argument("--conv-bits", type=int, default=None)
    p_admm.add_argument("--fc-bits", type=int, default=None)

    p_report = sub.add_parser("report", help="tables from checkpoints")
    _add_common(p_report)
    p_report.add_argument("--baseline", default=None, help="reference checkpoint for comparison")
    p_report.add_argument("--conv-bits", type=int, default=None)
    p_report.add_argument("--fc-bits", type=int, default=None)

    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    cfg = override(cfg, seed=args.seed, out_dir=args.out_dir, checkpoint=args.checkpoint)
    if args.command == "train" and args.epochs is not None:
        cfg = override(cfg, train=override(cfg.train, epochs=args.epochs))
    if args.command in ("prune", "prune-multistep"):
        prune = override(
            cfg.prune,
            kind=args.kind,
            lam=args.lam,
            steps=args.steps,
            iterations=args.iterations,
            epochs_per_iteration=args.epochs_per_iteration,
            retrain_epochs=args.retrain_epochs,
        )
        if args.lambda_auto:
            prune = replace(prune, lam=None)
        cfg = override(cfg, prune=prune)
    if args.command == "admm":
        cfg = override(
            cfg,
            admm=override(
                cfg.admm,
                task=args.task,
                rho=args.rho,
                iterations=args.iterations,
                inner_epochs=args.inner_epochs,
                conv_bits=args.conv_bits,
                fc_bits=args.fc_bits,
            ),
        )
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "prune":
            return cmd_prune(cfg, steps=1)
        if args.command == "prune-multistep":
            return cmd_prune(cfg, steps=cfg.prune.steps)
        if args.command == "admm":
            return cmd_admm(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.baseline, args.conv_bits, args.fc_bits)
        raise ConfigError(f"unknown command '{args.command}'")
    except RwpruneError as exc:
        for err_type, code in EXIT_CODES.items():
            if isinstance(exc, err_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
