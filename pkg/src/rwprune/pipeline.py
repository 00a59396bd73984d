"""Reweighted pruning pipeline: regularized training, thresholding, retraining.

One step runs T reweighted iterations of regularized training, picks a
per-layer magnitude threshold, zeroes and masks everything below it (whole
groups for structured kinds), then retrains the survivors with masked
gradients. Steps chain: masks only ever grow, and a step that drops accuracy
beyond the configured budget reports failure and hands back its input model
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .nn.optim import SGD, OptimizerConfig
from .nn.training import dataset_loss, train_epochs
from .regularizers import (
    DEFAULT_EPS,
    LambdaChoice,
    Penalties,
    RegKind,
    init_penalties,
    reg_gradient,
    reg_value,
    tune_lambda,
    unit_penalties,
    update_penalties,
)
from .tensors import group_norms_sq, mask_is_subset, merge_masks

LOG_BIN_WIDTH = 0.25          # decades per histogram bin
MIN_GAP_DECADES = 1.0         # an empty run must span at least one decade
FALLBACK_TAU = 1e-4


# ---------------------------------------------------------------------------
# threshold selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapDetect:
    """Split at the widest empty decade-run of the log-magnitude histogram.

    ``fallback`` is the absolute threshold used when no qualifying gap
    exists; None disables the fallback (nothing is pruned).
    """

    fallback: float | None = FALLBACK_TAU


@dataclass(frozen=True)
class Absolute:
    tau: float


@dataclass(frozen=True)
class RelativeToMax:
    fraction: float


ThresholdPolicy = GapDetect | Absolute | RelativeToMax


def log_bin_index(magnitudes: np.ndarray, width: float = LOG_BIN_WIDTH) -> np.ndarray:
    """Histogram bin index b covering [10^(width*b), 10^(width*(b+1)))."""
    return np.floor(np.log10(magnitudes) / width).astype(int)


def _gap_threshold(magnitudes: np.ndarray) -> float | None:
    """Geometric midpoint of the widest interior empty run, or None."""
    bins = np.unique(log_bin_index(magnitudes))
    if len(bins) < 2:
        return None
    min_len = int(round(MIN_GAP_DECADES / LOG_BIN_WIDTH))
    best_len = 0
    best_edges = None
    for lo, hi in zip(bins[:-1], bins[1:]):
        run = hi - lo - 1
        if run >= min_len and run > best_len:
            best_len = run
            best_edges = (LOG_BIN_WIDTH * (lo + 1), LOG_BIN_WIDTH * hi)
    if best_edges is None:
        return None
    return float(10.0 ** ((best_edges[0] + best_edges[1]) / 2.0))


def select_threshold(magnitudes: np.ndarray, policy: ThresholdPolicy) -> float:
    """Per-layer pruning threshold; entries strictly below it are pruned.

    An all-zero layer yields 0.0 (nothing further to prune).
    """
    if isinstance(policy, Absolute):
        return float(policy.tau)
    nonzero = magnitudes[magnitudes > 0.0]
    if nonzero.size == 0:
        return 0.0
    if isinstance(policy, RelativeToMax):
        return float(policy.fraction * nonzero.max())
    tau = _gap_threshold(nonzero)
    if tau is not None:
        return tau
    return float(policy.fallback) if policy.fallback is not None else 0.0


# ---------------------------------------------------------------------------
# step configuration and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PruneStepConfig:
    reweight_iterations: int = 4
    epochs_per_iteration: int = 25
    retrain_epochs: int = 20
    lam: float | None = None            # None: tune from the 4x..8x loss band
    eps: float = DEFAULT_EPS
    threshold: ThresholdPolicy = GapDetect()
    batch_size: int = 128
    max_accuracy_drop: float = 0.02     # step fails beyond this drop
    optimizer: OptimizerConfig = SGD()
    static_unit_penalties: bool = False  # P fixed at 1: plain l1 baseline mode

    def __post_init__(self):
        if self.reweight_iterations < 1:
            raise ConfigError("reweight_iterations must be >= 1")
        if self.epochs_per_iteration < 1:
            raise ConfigError("epochs_per_iteration must be >= 1")
        if self.lam is not None and self.lam < 0.0:
            raise ConfigError("lam must be nonnegative")


@dataclass
class LayerPruneStats:
    name: str
    total: int
    nonzero: int
    threshold: float | None

    @property
    def rate(self) -> float:
        return self.total / self.nonzero if self.nonzero else float("inf")


@dataclass
class StepReport:
    step: int
    kind: RegKind
    success: bool
    lam: float
    lam_interval: tuple[float, float] | None
    accuracy_before: float
    accuracy_after: float
    epochs_consumed: int
    layers: list[LayerPruneStats] = field(default_factory=list)

    @property
    def overall_rate(self) -> float:
        total = sum(s.total for s in self.layers)
        nnz = sum(s.nonzero for s in self.layers)
        return total / nnz if nnz else float("inf")

    @property
    def conv_rate(self) -> float | None:
        conv = [s for s in self.layers if s.name.startswith("conv")]
        if not conv:
            return None
        nnz = sum(s.nonzero for s in conv)
        return sum(s.total for s in conv) / nnz if nnz else float("inf")


@dataclass
class StepResult:
    net: object
    report: StepReport
    penalties: dict[str, Penalties]
    postreg_weights: dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def regularized_layers(net, kind: RegKind) -> list[str]:
    """Layers the regularizer applies to: all for the element kind, 4-D only
    for group kinds."""
    if kind is RegKind.NONSTRUCTURED:
        return list(net.parametric)
    names = net.conv_layer_names()
    if not names:
        raise ConfigError("group kind requires conv layers")
    return names


def make_reg_extras(names: list[str], penalties: dict[str, Penalties], lam: float):
    def extras(net):
        return {
            name: reg_gradient(penalties[name], net.parametric[name].W, lam) for name in names
        }

    return extras


def net_reg_value(net, names: list[str], penalties: dict[str, Penalties], lam: float) -> float:
    return sum(reg_value(penalties[name], net.parametric[name].W, lam) for name in names)


def tune_lambda_for(net, data, kind: RegKind, eps: float, batch_size: int = 512) -> LambdaChoice:
    """lam from the loss-ratio band, using fresh penalties on current weights."""
    names = regularized_layers(net, kind)
    loss = dataset_loss(net, data, batch_size)
    penalties = {n: init_penalties(kind, net.parametric[n].W, eps) for n in names}
    r1 = net_reg_value(net, names, penalties, 1.0)
    return tune_lambda(loss, r1)


def _layer_magnitudes(w: np.ndarray, kind: RegKind) -> np.ndarray:
    """Element magnitudes, or group Frobenius norms for structured kinds."""
    gk = kind.group_kind
    if gk is None:
        return np.abs(w).ravel()
    return np.sqrt(group_norms_sq(w, gk)).ravel()


def _keep_mask(w: np.ndarray, kind: RegKind, tau: float) -> np.ndarray:
    """1.0 where the element (or its whole group) survives |.| >= tau."""
    gk = kind.group_kind
    if gk is None:
        return (np.abs(w) >= tau).astype(float)
    from .tensors import broadcast_group_values

    group_keep = (np.sqrt(group_norms_sq(w, gk)) >= tau).astype(float)
    return broadcast_group_values(group_keep, gk, w.shape).copy()


def _layer_stats(net, thresholds: dict[str, float]) -> list[LayerPruneStats]:
    stats = []
    for name, layer in net.parametric.items():
        mask = net.masks.get(name)
        nnz = int(mask.sum()) if mask is not None else int(np.count_nonzero(layer.W))
        stats.append(LayerPruneStats(name, layer.W.size, nnz, thresholds.get(name)))
    return stats


def run_reweighted_step(
    net,
    train_data,
    test_data,
    cfg: PruneStepConfig,
    kind: RegKind,
    rng: np.random.Generator,
    *,
    step_index: int = 1,
    epoch_callback=None,
) -> StepResult:
    """One full prune step; on accuracy collapse the input net is returned
    unchanged with ``report.success`` False."""
    names = regularized_layers(net, kind)
    work = net.copy()
    acc_before = work.evaluate(test_data)

    if cfg.lam is None:
        choice = tune_lambda_for(work, train_data, kind, cfg.eps, cfg.batch_size)
        lam, interval = choice.value, (choice.lower, choice.upper)
    else:
        lam, interval = cfg.lam, None

    if cfg.static_unit_penalties:
        penalties = {n: unit_penalties(kind, work.parametric[n].W) for n in names}
    else:
        penalties = {n: init_penalties(kind, work.parametric[n].W, cfg.eps) for n in names}

    for it in range(cfg.reweight_iterations):
        train_epochs(
            work,
            train_data,
            cfg.epochs_per_iteration,
            cfg.optimizer,
            rng,
            batch_size=cfg.batch_size,
            grad_extras=make_reg_extras(names, penalties, lam),
            epoch_callback=epoch_callback,
        )
        if not cfg.static_unit_penalties:
            penalties = {
                n: update_penalties(kind, work.parametric[n].W, cfg.eps, iteration=it + 2)
                for n in names
            }

    postreg = {n: layer.W.copy() for n, layer in work.parametric.items()}

    thresholds: dict[str, float] = {}
    for name in names:
        w = work.parametric[name].W
        tau = select_threshold(_layer_magnitudes(w, kind), cfg.threshold)
        thresholds[name] = tau
        new_mask = merge_masks(work.masks.get(name), _keep_mask(w, kind, tau))
        assert mask_is_subset(new_mask, work.masks.get(name))
        work.masks[name] = new_mask
    work.apply_masks()

    train_epochs(
        work,
        train_data,
        cfg.retrain_epochs,
        cfg.optimizer,
        rng,
        batch_size=cfg.batch_size,
        epoch_callback=epoch_callback,
    )

    acc_after = work.evaluate(test_data)
    epochs = cfg.reweight_iterations * cfg.epochs_per_iteration + cfg.retrain_epochs
    success = acc_after >= acc_before - cfg.max_accuracy_drop
    result_net = work if success else net
    report = StepReport(
        step=step_index,
        kind=kind,
        success=success,
        lam=lam,
        lam_interval=interval,
        accuracy_before=acc_before,
        accuracy_after=acc_after if success else acc_before,
        epochs_consumed=epochs,
        layers=_layer_stats(result_net, thresholds if success else {}),
    )
    return StepResult(result_net, report, penalties, postreg)


@dataclass
class MultiStepResult:
    net: object
    reports: list[StepReport]

    @property
    def failed(self) -> bool:
        return bool(self.reports) and not self.reports[-1].success


def run_multistep(
    net,
    train_data,
    test_data,
    cfg: PruneStepConfig,
    kind: RegKind,
    steps: int,
    rng: np.random.Generator,
    *,
    on_step=None,
    epoch_callback=None,
) -> MultiStepResult:
    """Chain prune steps, carrying masks forward; stops early on failure."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    reports = []
    current = net
    for step in range(1, steps + 1):
        result = run_reweighted_step(
            current, train_data, test_data, cfg, kind, rng,
            step_index=step, epoch_callback=epoch_callback,
        )
        reports.append(result.report)
        if on_step is not None:
            on_step(step, result)
        if not result.report.success:
            break
        current = result.net
    return MultiStepResult(current, reports)


def lambda_override(cfg: PruneStepConfig, lam: float | None) -> PruneStepConfig:
    return replace(cfg, lam=lam)
