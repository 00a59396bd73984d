"""Pruning and compression accounting, histograms, and the two reference
baselines (iterative magnitude pruning, static l1 regularization).

All tables are plain CSV with stable column names; see the README for the
full column reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nn.training import train_epochs
from .pipeline import (
    LOG_BIN_WIDTH,
    PruneStepConfig,
    StepReport,
    StepResult,
    ThresholdPolicy,
    log_bin_index,
    run_reweighted_step,
)
from .regularizers import RegKind
from .tensors import merge_masks

DENSE_BITS = 32
DEFAULT_INDEX_BITS = 5


# ---------------------------------------------------------------------------
# pruning rates
# ---------------------------------------------------------------------------


def _layer_counts(net, scope: str = "overall") -> list[tuple[str, int, int]]:
    rows = []
    for name, layer in net.parametric.items():
        if scope == "conv" and layer.W.ndim != 4:
            continue
        if scope == "dense" and layer.W.ndim != 2:
            continue
        mask = net.masks.get(name)
        nnz = int(mask.sum()) if mask is not None else int(np.count_nonzero(layer.W))
        rows.append((name, layer.W.size, nnz))
    return rows


def pruning_rate(net, scope: str = "overall") -> float:
    """Total weights divided by surviving nonzeros over the scope.

    Returns inf when nothing survives; biases never count.
    """
    rows = _layer_counts(net, scope)
    total = sum(r[1] for r in rows)
    nnz = sum(r[2] for r in rows)
    return total / nnz if nnz else float("inf")


def layer_pruning_rates(net) -> list[dict]:
    rows = []
    for name, total, nnz in _layer_counts(net):
        rows.append(
            {
                "layer": name,
                "total": total,
                "nonzero": nnz,
                "rate": total / nnz if nnz else float("inf"),
                "all_zero": nnz == 0,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# compression accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerBits:
    total: int
    nonzero: int
    bits: int

    def __post_init__(self):
        if self.nonzero > self.total:
            raise ConfigError("nonzero count exceeds total")
        if not 1 <= self.bits <= DENSE_BITS:
            raise ConfigError(f"bit width must be in [1, {DENSE_BITS}]")


@dataclass(frozen=True)
class CompressionModel:
    layers: tuple[LayerBits, ...]
    index_bits: int = DEFAULT_INDEX_BITS


@dataclass(frozen=True)
class CompressionRates:
    data_rate: float
    model_rate: float


def compression_rates(model: CompressionModel) -> CompressionRates:
    """Storage ratio vs dense float32, without (data) and with (model) the
    per-nonzero index cost."""
    dense = DENSE_BITS * sum(l.total for l in model.layers)
    data_bits = sum(l.bits * l.nonzero for l in model.layers)
    model_bits = sum((l.bits + model.index_bits) * l.nonzero for l in model.layers)
    return CompressionRates(
        data_rate=dense / data_bits if data_bits else float("inf"),
        model_rate=dense / model_bits if model_bits else float("inf"),
    )


def compression_model_from_net(
    net, layer_bits: dict[str, int], index_bits: int = DEFAULT_INDEX_BITS
) -> CompressionModel:
    layers = []
    for name, total, nnz in _layer_counts(net):
        layers.append(LayerBits(total, nnz, layer_bits.get(name, DENSE_BITS)))
    return CompressionModel(tuple(layers), index_bits)


# ---------------------------------------------------------------------------
# magnitude histograms
# ---------------------------------------------------------------------------


@dataclass
class MagnitudeHistogram:
    rows: list[tuple[float, float, int]]  # (bin_lo, bin_hi, count)
    zero_count: int
    total: int


def magnitude_histogram(w: np.ndarray, bin_width: float = LOG_BIN_WIDTH) -> MagnitudeHistogram:
    """log10-magnitude histogram of the nonzero entries plus a zero count.

    Bins are aligned to multiples of ``bin_width`` decades; empty interior
    bins are emitted so gaps are visible in the table.
    """
    flat = np.abs(np.asarray(w).ravel())
    zero_count = int(np.count_nonzero(flat == 0.0))
    nonzero = flat[flat > 0.0]
    if nonzero.size == 0:
        return MagnitudeHistogram([], zero_count, flat.size)
    bins = log_bin_index(nonzero, bin_width)
    lo, hi = int(bins.min()), int(bins.max())
    counts = np.bincount(bins - lo, minlength=hi - lo + 1)
    rows = [
        (10.0 ** (bin_width * (lo + i)), 10.0 ** (bin_width * (lo + i + 1)), int(c))
        for i, c in enumerate(counts)
    ]
    return MagnitudeHistogram(rows, zero_count, flat.size)


# ---------------------------------------------------------------------------
# critical-weight distribution statistic
# ---------------------------------------------------------------------------


def low_decile_boundary(reference_weights: list[np.ndarray], decile: float = 0.1) -> float:
    """Magnitude below which the lowest ``decile`` of reference weights falls."""
    mags = np.concatenate([np.abs(w).ravel() for w in reference_weights])
    return float(np.quantile(mags, decile))


def surviving_low_magnitude_fraction(
    weights: list[np.ndarray], masks: list[np.ndarray], boundary: float
) -> float:
    """Fraction of surviving weights whose magnitude is at or below the
    reference boundary: how many survivors were pushed into the lowest
    decile of the original distribution."""
    survived = []
    for w, m in zip(weights, masks):
        keep = m > 0.0
        survived.append(np.abs(w[keep]).ravel())
    pool = np.concatenate(survived)
    if pool.size == 0:
        return 0.0
    return float(np.mean(pool <= boundary))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


@dataclass
class BaselineReport:
    target_rate: float
    achieved_rate: float
    accuracy_before: float
    accuracy_after: float
    rounds: int


def _global_keep_mask(net, keep: int) -> dict[str, np.ndarray]:
    """Keep the ``keep`` largest magnitudes across all weight tensors.

    Ties are masked at the lowest flat index (concatenating layers in
    network order), i.e. the higher index survives.
    """
    names = list(net.parametric)
    mags = np.concatenate([np.abs(net.parametric[n].W).ravel() for n in names])
    order = np.lexsort((-np.arange(mags.size), -mags))
    keep_flags = np.zeros(mags.size)
    keep_flags[order[:keep]] = 1.0
    out = {}
    offset = 0
    for n in names:
        w = net.parametric[n].W
        out[n] = keep_flags[offset : offset + w.size].reshape(w.shape)
        offset += w.size
    return out


def baseline_magnitude_prune(
    net,
    train_data,
    test_data,
    target_rate: float,
    rng: np.random.Generator,
    *,
    rounds: int = 5,
    retrain_epochs: int = 4,
    optimizer=None,
    batch_size: int = 128,
):
    """Iterative magnitude pruning: geometric rate schedule, prune lowest
    magnitudes globally, retrain between rounds."""
    from .nn.optim import SGD

    if target_rate < 1.0:
        raise ConfigError(f"target rate must be >= 1, got {target_rate}")
    optimizer = optimizer or SGD()
    acc_before = net.evaluate(test_data)
    if target_rate == 1.0:
        return net, BaselineReport(1.0, pruning_rate(net), acc_before, acc_before, 0)

    total = net.num_weights()
    final_keep = int(round(total / target_rate))
    if final_keep < 1:
        raise ConfigError(f"target rate {target_rate} leaves no weights")

    work = net.copy()
    for r in range(1, rounds + 1):
        rate = target_rate ** (r / rounds)
        keep = final_keep if r == rounds else int(round(total / rate))
        masks = _global_keep_mask(work, keep)
        for name, mask in masks.items():
            work.masks[name] = merge_masks(work.masks.get(name), mask)
        work.apply_masks()
        train_epochs(
            work, train_data, retrain_epochs, optimizer, rng, batch_size=batch_size
        )
    report = BaselineReport(
        target_rate=target_rate,
        achieved_rate=pruning_rate(work),
        accuracy_before=acc_before,
        accuracy_after=work.evaluate(test_data),
        rounds=rounds,
    )
    return work, report


def baseline_static_l1(
    net,
    train_data,
    test_data,
    lam: float | None,
    epochs: int,
    policy: ThresholdPolicy,
    rng: np.random.Generator,
    *,
    retrain_epochs: int = 20,
    optimizer=None,
    batch_size: int = 128,
    max_accuracy_drop: float = 1.0,
) -> StepResult:
    """One regularized-train/prune/retrain pass with penalties fixed at one:
    the classic uniform l1 regularization baseline."""
    from .nn.optim import SGD

    cfg = PruneStepConfig(
        reweight_iterations=1,
        epochs_per_iteration=epochs,
        retrain_epochs=retrain_epochs,
        lam=lam,
        threshold=policy,
        batch_size=batch_size,
        max_accuracy_drop=max_accuracy_drop,
        optimizer=optimizer or SGD(),
        static_unit_penalties=True,
    )
    return run_reweighted_step(net, train_data, test_data, cfg, RegKind.NONSTRUCTURED, rng)


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def write_layer_rates_csv(path, net) -> None:
    rows = [
        (r["layer"], r["total"], r["nonzero"], r["rate"], r["all_zero"])
        for r in layer_pruning_rates(net)
    ]
    total = sum(r[1] for r in rows)
    nnz = sum(r[2] for r in rows)
    rows.append(("overall", total, nnz, total / nnz if nnz else float("inf"), nnz == 0))
    write_csv(path, ["layer", "total", "nonzero", "rate", "all_zero"], rows)


def write_histogram_csv(path, hist: MagnitudeHistogram) -> None:
    rows = [(lo, hi, count, hist.zero_count) for lo, hi, count in hist.rows]
    if not rows:
        rows = [("", "", 0, hist.zero_count)]
    write_csv(path, ["bin_lo", "bin_hi", "count", "zero_count"], rows)


def write_step_reports_csv(path, reports: list[StepReport]) -> None:
    rows = [
        (
            r.step,
            r.kind.value,
            r.success,
            r.lam,
            r.accuracy_before,
            r.accuracy_after,
            r.overall_rate,
            r.conv_rate if r.conv_rate is not None else "",
            r.epochs_consumed,
        )
        for r in reports
    ]
    write_csv(
        path,
        [
            "step",
            "kind",
            "success",
            "lambda",
            "accuracy_before",
            "accuracy_after",
            "overall_rate",
            "conv_rate",
            "epochs",
        ],
        rows,
    )


def write_step_layers_csv(path, report: StepReport) -> None:
    rows = [
        (s.name, s.total, s.nonzero, s.rate, s.threshold if s.threshold is not None else "")
        for s in report.layers
    ]
    write_csv(path, ["layer", "total", "nonzero", "rate", "threshold"], rows)


def write_compression_csv(path, model: CompressionModel, names: list[str]) -> None:
    rates = compression_rates(model)
    rows = [
        (name, l.total, l.nonzero, l.bits)
        for name, l in zip(names, model.layers)
    ]
    rows.append(("data_rate", "", "", rates.data_rate))
    rows.append(("model_rate", "", "", rates.model_rate))
    write_csv(path, ["layer", "total", "nonzero", "bits_or_rate"], rows)
