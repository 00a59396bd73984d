"""ADMM splitting for hard-constrained compression combined with reweighted
regularization.

The training subproblem minimizes loss + reweighted regularizer + proximal
terms by SGD/Adam; the constraint subproblem is a closed-form Euclidean
projection per layer; the scaled dual variables accumulate the gap. Layers
without an assigned constraint set (or with a Wholespace set) carry no
proximal term.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmmDivergenceError, ConfigError, ShapeError
from .nn.optim import Adam, OptimizerConfig
from .nn.training import dataset_loss, train_epochs
from .pipeline import (
    PruneStepConfig,
    ThresholdPolicy,
    GapDetect,
    _keep_mask,
    _layer_magnitudes,
    make_reg_extras,
    net_reg_value,
    regularized_layers,
    run_reweighted_step,
    select_threshold,
    tune_lambda_for,
)
from .regularizers import (
    DEFAULT_EPS,
    Penalties,
    RegKind,
    init_penalties,
    reg_gradient,
    reg_value,
    update_penalties,
)
from .tensors import merge_masks

PATTERN_KERNEL_SHAPE = (3, 3)


# ---------------------------------------------------------------------------
# constraint sets and projections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatternSet:
    """Per-kernel constraint: nonzeros must fit one mask from the library."""

    masks: np.ndarray  # (L, C, D), entries in {0.0, 1.0}

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=float)
        if m.ndim != 3:
            raise ConfigError(f"pattern library must be (L, C, D), got {m.shape}")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ConfigError("pattern masks must be binary")
        nnz = m.sum(axis=(1, 2))
        if len(set(nnz.tolist())) != 1:
            raise ConfigError("all pattern masks must have the same nonzero count")
        flat = {tuple(row) for row in m.reshape(len(m), -1)}
        if len(flat) != len(m):
            raise ConfigError("pattern masks must be distinct")
        object.__setattr__(self, "masks", m)

    def choose(self, w: np.ndarray) -> np.ndarray:
        """Per-kernel full-shape mask with maximal retained energy
        (ties go to the lowest library index)."""
        if w.ndim != 4 or w.shape[2:] != self.masks.shape[1:]:
            raise ShapeError(
                f"pattern library {self.masks.shape[1:]} does not match kernels {w.shape}"
            )
        energies = np.einsum("abcd,lcd->abl", np.square(w), self.masks)
        best = energies.argmax(axis=-1)
        return self.masks[best]

    def project(self, w: np.ndarray) -> np.ndarray:
        return w * self.choose(w)


@dataclass(frozen=True)
class QuantLevels:
    """Symmetric uniform levels k*delta, |k| <= 2^(bits-1)-1, zero included."""

    bits: int
    delta: float

    def __post_init__(self):
        if self.bits < 2 or self.bits > 32:
            raise ConfigError(f"quantization bits must be in [2, 32], got {self.bits}")
        if self.delta < 0.0:
            raise ConfigError("level spacing must be nonnegative")

    @classmethod
    def from_weights(cls, w: np.ndarray, bits: int) -> "QuantLevels":
        # spacing frozen from the entering model so the level set stays fixed
        peak = float(np.max(np.abs(w))) if w.size else 0.0
        return cls(bits, peak / (2 ** (bits - 1) - 1))

    def levels(self) -> np.ndarray:
        half = 2 ** (self.bits - 1) - 1
        return np.arange(-half, half + 1) * self.delta

    def project(self, w: np.ndarray) -> np.ndarray:
        if self.delta == 0.0:
            return np.zeros_like(w)
        half = 2 ** (self.bits - 1) - 1
        # ceil(|w|/delta - 0.5) rounds to the nearest level with ties toward zero
        k = np.minimum(np.ceil(np.abs(w) / self.delta - 0.5), half)
        return np.sign(w) * k * self.delta


@dataclass(frozen=True)
class L0Budget:
    """Keep at most ``max_nonzeros`` entries, the largest magnitudes first."""

    max_nonzeros: int

    def __post_init__(self):
        if self.max_nonzeros < 0:
            raise ConfigError("nonzero budget must be nonnegative")

    def project(self, w: np.ndarray) -> np.ndarray:
        if self.max_nonzeros >= w.size:
            return w.copy()
        flat = w.ravel()
        # stable sort keeps ties at the lowest flat index
        order = np.argsort(-np.abs(flat), kind="stable")
        out = np.zeros_like(flat)
        keep = order[: self.max_nonzeros]
        out[keep] = flat[keep]
        return out.reshape(w.shape)


@dataclass(frozen=True)
class Wholespace:
    """Vacuous constraint: the projection is the identity and no proximal
    pull is applied, so the training subproblem is plain reweighted training."""

    def project(self, w: np.ndarray) -> np.ndarray:
        return w.copy()


ConstraintSet = PatternSet | QuantLevels | L0Budget | Wholespace


def project(point: np.ndarray, cset) -> np.ndarray:
    """Euclidean-nearest member of the constraint set."""
    return cset.project(point)


def constraint_satisfied(w: np.ndarray, cset) -> bool:
    return bool(np.array_equal(project(w, cset), w))


# ---------------------------------------------------------------------------
# pattern library construction
# ---------------------------------------------------------------------------


def _top_k_mask(kernel_flat: np.ndarray, k: int) -> tuple[int, ...]:
    order = np.argsort(-np.abs(kernel_flat), kind="stable")
    mask = np.zeros(kernel_flat.size, dtype=int)
    mask[order[:k]] = 1
    return tuple(mask.tolist())


def build_pattern_library(
    conv_weights: list[np.ndarray], library_size: int = 8, pattern_nnz: int = 4
) -> PatternSet:
    """Most frequent top-``pattern_nnz`` kernel masks across all conv layers.

    Ties in frequency go to the lexicographically smaller mask. If fewer
    distinct masks were observed than requested, the library is padded with
    the unused masks retaining the most total energy.
    """
    kernels = []
    for w in conv_weights:
        if w.ndim != 4 or w.shape[2:] != PATTERN_KERNEL_SHAPE:
            raise ShapeError(f"pattern library needs 3x3 kernels, got shape {w.shape}")
        kernels.append(w.reshape(-1, 9))
    if not kernels:
        raise ConfigError("no conv layers to build a pattern library from")
    flat = np.concatenate(kernels, axis=0)

    counts: dict[tuple[int, ...], int] = {}
    for row in flat:
        key = _top_k_mask(row, pattern_nnz)
        counts[key] = counts.get(key, 0) + 1
    ranked = sorted(counts, key=lambda m: (-counts[m], m))
    chosen = ranked[:library_size]

    if len(chosen) < library_size:
        used = set(chosen)
        sq = np.square(flat)
        candidates = []
        for ones in itertools.combinations(range(9), pattern_nnz):
            mask = tuple(1 if i in ones else 0 for i in range(9))
            if mask in used:
                continue
            energy = float(sq[:, list(ones)].sum())
            candidates.append((-energy, mask))
        candidates.sort()
        chosen += [mask for _, mask in candidates[: library_size - len(chosen)]]

    lib = np.array(chosen, dtype=float).reshape(-1, *PATTERN_KERNEL_SHAPE)
    return PatternSet(lib)


# ---------------------------------------------------------------------------
# ADMM state and configuration
# ---------------------------------------------------------------------------


@dataclass
class AdmmState:
    """Per-layer auxiliary variables Z, scaled duals U, penalty rho, iteration."""

    Z: dict[str, np.ndarray]
    U: dict[str, np.ndarray]
    rho: float
    iteration: int = 0


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1e-3
    iterations: int = 12
    inner_epochs: int = 10
    lam: float | None = None
    eps: float = DEFAULT_EPS
    kind: RegKind = RegKind.NONSTRUCTURED
    residual_tol: float = 1e-2          # 0 disables early stopping
    batch_size: int = 128
    optimizer: OptimizerConfig = Adam()
    retrain_epochs: int = 20

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.residual_tol < 0.0:
            raise ConfigError("residual tolerance must be nonnegative")


@dataclass
class AdmmResult:
    net: object
    state: AdmmState
    residuals: list[float]
    accuracy_before: float
    accuracy_after: float
    converged: bool
    feasible: bool
    lam: float


def _has_proximal(cset) -> bool:
    return not isinstance(cset, Wholespace)


def augmented_loss(
    net, inputs, labels, penalties: dict[str, Penalties], lam: float, state: AdmmState, sets=None
) -> tuple[float, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Value and exact gradients of loss + regularizer + proximal terms.

    The proximal gradient for a constrained layer is rho * (W - Z + U); it
    vanishes for Wholespace sets where Z tracks W exactly.
    """
    sets = sets or {}
    loss, _ = net.forward_loss(inputs, labels)
    grads = net.backward()
    value = loss
    for name, p in penalties.items():
        w = net.parametric[name].W
        value += reg_value(p, w, lam)
        dw, db = grads[name]
        grads[name] = (dw + reg_gradient(p, w, lam), db)
    for name in state.Z:
        if name in sets and not _has_proximal(sets[name]):
            continue
        w = net.parametric[name].W
        gap = w - state.Z[name] + state.U[name]
        if gap.shape != w.shape:
            raise ShapeError("ADMM state shape does not match weights")
        value += 0.5 * state.rho * float(np.sum(np.square(gap)))
        dw, db = grads[name]
        grads[name] = (dw + state.rho * gap, db)
    return value, grads


def _admm_extras(names, penalties, lam, state: AdmmState, proximal_names):
    reg = make_reg_extras(names, penalties, lam)

    def extras(net):
        out = reg(net)
        for name in proximal_names:
            add = state.rho * (net.parametric[name].W - state.Z[name] + state.U[name])
            if name in out:
                out[name] = out[name] + add
            else:
                out[name] = add
        return out

    return extras


def _primal_residual(net, state: AdmmState) -> float:
    num = 0.0
    den = 0.0
    for name in state.Z:
        w = net.parametric[name].W
        num += float(np.sum(np.square(w - state.Z[name])))
        den += float(np.sum(np.square(w)))
    if den == 0.0:
        return 0.0
    return float(np.sqrt(num) / np.sqrt(den))


def admm_run(
    net,
    train_data,
    test_data,
    sets: dict[str, ConstraintSet],
    cfg: AdmmConfig,
    rng: np.random.Generator,
    *,
    finalize_retrain: bool = True,
    residual_sink=None,
    iteration_callback=None,
) -> AdmmResult:
    """Full ADMM loop plus finalization.

    Finalization hard-projects W to Z, installs the masks implied by pattern
    and budget constraints, freezes quantized layers and retrains whatever
    remains trainable under the masks.
    """
    for name in sets:
        if name not in net.parametric:
            raise ConfigError(f"constraint assigned to unknown layer '{name}'")
    work = net.copy()
    acc_before = work.evaluate(test_data)
    soft = regularized_layers(work, cfg.kind)

    if cfg.lam is None:
        lam = tune_lambda_for(work, train_data, cfg.kind, cfg.eps, cfg.batch_size).value
    else:
        lam = cfg.lam

    penalties = {n: init_penalties(cfg.kind, work.parametric[n].W, cfg.eps) for n in soft}
    state = AdmmState(
        Z={n: project(work.parametric[n].W, s) for n, s in sets.items()},
        U={n: np.zeros_like(work.parametric[n].W) for n in sets},
        rho=cfg.rho,
    )
    proximal_names = [n for n, s in sets.items() if _has_proximal(s)]

    residuals: list[float] = []
    grew = 0
    converged = False
    for k in range(1, cfg.iterations + 1):
        train_epochs(
            work,
            train_data,
            cfg.inner_epochs,
            cfg.optimizer,
            rng,
            batch_size=cfg.batch_size,
            grad_extras=_admm_extras(soft, penalties, lam, state, proximal_names),
        )
        penalties = {
            n: update_penalties(cfg.kind, work.parametric[n].W, cfg.eps, iteration=k + 1)
            for n in soft
        }
        for name, cset in sets.items():
            w = work.parametric[name].W
            state.Z[name] = project(w + state.U[name], cset)
            state.U[name] = state.U[name] + w - state.Z[name]
        state.iteration = k

        residual = _primal_residual(work, state)
        residuals.append(residual)
        if residual_sink is not None:
            residual_sink(
                k, residual, dataset_loss(work, train_data), work.evaluate(test_data)
            )
        if iteration_callback is not None:
            iteration_callback(k, work, state)
        if cfg.residual_tol > 0.0 and residual < cfg.residual_tol:
            converged = True
            break
        if len(residuals) >= 2 and residual > residuals[-2]:
            grew += 1
            if grew >= 3:
                raise AdmmDivergenceError(
                    f"primal residual grew for 3 consecutive iterations "
                    f"(last values {residuals[-4:]})"
                )
        else:
            grew = 0

    frozen = set()
    for name, cset in sets.items():
        if isinstance(cset, Wholespace):
            continue
        layer = work.parametric[name]
        layer.W = state.Z[name].copy()
        if isinstance(cset, PatternSet):
            work.masks[name] = merge_masks(work.masks.get(name), cset.choose(layer.W))
        elif isinstance(cset, L0Budget):
            work.masks[name] = merge_masks(
                work.masks.get(name), (layer.W != 0.0).astype(float)
            )
        else:
            frozen.add(name)
    work.apply_masks()

    trainable = [n for n in work.parametric if n not in frozen]
    if finalize_retrain and trainable and cfg.retrain_epochs > 0:
        train_epochs(
            work,
            train_data,
            cfg.retrain_epochs,
            cfg.optimizer,
            rng,
            batch_size=cfg.batch_size,
            frozen=frozenset(frozen),
        )

    feasible = all(
        constraint_satisfied(work.parametric[n].W, s)
        for n, s in sets.items()
        if not isinstance(s, Wholespace)
    )
    return AdmmResult(
        net=work,
        state=state,
        residuals=residuals,
        accuracy_before=acc_before,
        accuracy_after=work.evaluate(test_data),
        converged=converged,
        feasible=feasible,
        lam=lam,
    )


# ---------------------------------------------------------------------------
# task presets
# ---------------------------------------------------------------------------


@dataclass
class PatternKernelReport:
    pattern_rate: float
    kernel_rate: float
    conv_rate: float
    accuracy_before: float
    accuracy_after: float
    residuals: list[float]
    converged: bool


def pattern_kernel_task(
    net,
    train_data,
    test_data,
    cfg: AdmmConfig,
    rng: np.random.Generator,
    *,
    library: PatternSet | None = None,
    kernel_threshold: ThresholdPolicy = GapDetect(),
    retrain_epochs: int | None = None,
    residual_sink=None,
):
    """Pattern hard constraint on all 3x3 conv layers plus reweighted
    kernel-shrinking regularization, then kernel pruning and one retrain."""
    conv_names = net.conv_layer_names()
    if not conv_names:
        raise ConfigError("pattern task requires conv layers")
    if library is None:
        library = build_pattern_library([net.parametric[n].W for n in conv_names])
    sets = {n: library for n in conv_names}

    result = admm_run(
        net, train_data, test_data, sets, cfg, rng,
        finalize_retrain=False, residual_sink=residual_sink,
    )
    work = result.net

    # pattern rate comes from the pattern masks alone, before kernel pruning
    pattern_total = sum(work.parametric[n].W.size for n in conv_names)
    pattern_nnz = sum(int(work.masks[n].sum()) for n in conv_names)
    pattern_rate = pattern_total / pattern_nnz

    kernels_total = 0
    kernels_kept = 0
    for name in conv_names:
        w = work.parametric[name].W
        mags = _layer_magnitudes(w, RegKind.KERNEL)
        tau = select_threshold(mags, kernel_threshold)
        keep = _keep_mask(w, RegKind.KERNEL, tau)
        kernels_total += int(np.prod(w.shape[:2]))
        kernels_kept += int(np.count_nonzero(keep[:, :, 0, 0]))
        work.masks[name] = merge_masks(work.masks.get(name), keep)
    work.apply_masks()

    epochs = cfg.retrain_epochs if retrain_epochs is None else retrain_epochs
    if epochs > 0:
        train_epochs(
            work, train_data, epochs, cfg.optimizer, rng, batch_size=cfg.batch_size
        )

    conv_total = sum(work.parametric[n].W.size for n in conv_names)
    conv_nnz = sum(int(work.masks[n].sum()) for n in conv_names)
    report = PatternKernelReport(
        pattern_rate=pattern_rate,
        kernel_rate=kernels_total / kernels_kept if kernels_kept else float("inf"),
        conv_rate=conv_total / conv_nnz if conv_nnz else float("inf"),
        accuracy_before=result.accuracy_before,
        accuracy_after=work.evaluate(test_data),
        residuals=result.residuals,
        converged=result.converged,
    )
    return work, report


@dataclass
class PruneQuantReport:
    prune_report: object
    admm_result: AdmmResult
    layer_bits: dict[str, int]


def prune_quant_task(
    net,
    train_data,
    test_data,
    prune_cfg: PruneStepConfig,
    admm_cfg: AdmmConfig,
    rng: np.random.Generator,
    *,
    conv_bits: int = 3,
    fc_bits: int = 2,
    residual_sink=None,
):
    """Sequential combination: reweighted pruning first, then ADMM
    quantization of the surviving weights on all layers."""
    step = run_reweighted_step(net, train_data, test_data, prune_cfg, RegKind.NONSTRUCTURED, rng)
    pruned = step.net

    layer_bits = {
        name: (conv_bits if layer.W.ndim == 4 else fc_bits)
        for name, layer in pruned.parametric.items()
    }
    sets = {
        name: QuantLevels.from_weights(pruned.parametric[name].W, bits)
        for name, bits in layer_bits.items()
    }
    result = admm_run(
        pruned, train_data, test_data, sets, admm_cfg, rng, residual_sink=residual_sink
    )
    return result.net, PruneQuantReport(step.report, result, layer_bits)
