"""Differentiable classification losses over (features, class-embedding) pairs.

Four losses share one calling convention: model outputs for a batch plus
1-based integer labels, with class embeddings supplying the target rows.

* cosine: 1 - <phi(y), psi(f)> with psi the L2 normalizer; bounded in
  [0, 2] and invariant to positive scaling of f.
* cross_entropy: softmax cross-entropy on raw logits, with optional
  label smoothing (true class 1-eps, rest eps/(n-1)).
* mse: squared Euclidean distance to the target row.
* cosine_plus_xent: cosine term plus combo_weight times cross-entropy on
  an auxiliary linear head applied to the normalized features.

Batch reduction is always the arithmetic mean. The same quantities are
also available as plain per-sample numpy evaluations (no tape), used for
loss-surface grids and as a cross-check of the differentiable path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .embeddings import EmbeddingMatrix
from .errors import ConfigError, DimensionError, LabelError
from .tensor import Tensor

LOSS_KINDS = ("cosine", "cross_entropy", "mse", "cosine_plus_xent")


@dataclass(frozen=True)
class LossSpec:
    """Which loss to run and its hyperparameters."""

    kind: str
    num_classes: int
    label_smoothing_eps: float = 0.0
    combo_weight: float = 0.1  # weight of the cross-entropy term in cosine_plus_xent

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if not 0.0 <= self.label_smoothing_eps < 1.0:
            raise ConfigError(f"label_smoothing_eps must be in [0, 1), got {self.label_smoothing_eps}")
        if self.combo_weight < 0.0:
            raise ConfigError(f"combo_weight must be nonnegative, got {self.combo_weight}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")


class AuxHead:
    """Linear d->n classification head used by the combined loss.

    Weights start uniform in [-1/sqrt(d), 1/sqrt(d)], bias at zero.
    Arrays are owned by the head so optimizer updates persist across
    steps; :meth:`bind` registers them on a tape for one forward/backward.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise DimensionError(
                f"head weight {weight.shape} and bias {bias.shape} do not line up"
            )
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, feature_dim: int, num_classes: int, seed) -> "AuxHead":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(feature_dim)
        weight = rng.uniform(-bound, bound, size=(feature_dim, num_classes))
        return cls(weight, np.zeros(num_classes))

    def bind(self, tape: T.Tape) -> tuple[Tensor, Tensor]:
        return tape.parameter(self.weight), tape.parameter(self.bias)

    def logits(self, normalized: np.ndarray) -> np.ndarray:
        return normalized @ self.weight + self.bias


def _check_labels(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > n):
        bad = labels[(labels < 1) | (labels > n)][0]
        raise LabelError(f"label {bad} outside 1..{n}")
    return labels


def _as_batch(f: Tensor | np.ndarray) -> Tensor:
    t = f if isinstance(f, Tensor) else T.tensor(f)
    if t.ndim == 1:
        # a single feature vector is a batch of one
        return T.Tensor(t.data[None, :], tape=t.tape) if t.tape is None else _promote(t)
    if t.ndim != 2:
        raise DimensionError(f"expected a batch of feature rows, got shape {t.shape}")
    return t


def _promote(t: Tensor) -> Tensor:
    # tracked 1-D tensor -> tracked (1, d) view with a pass-through gradient
    out = T.Tensor(t.data[None, :], tape=t.tape)
    t.tape._record(out, (t,), lambda g: (g[0],))
    return out


def cosine_similarity(a, b) -> Tensor:
    """cos of the angle between two vectors: <a, b> / (||a|| ||b||)."""
    a = a if isinstance(a, Tensor) else T.tensor(a)
    b = b if isinstance(b, Tensor) else T.tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    return T.dot(T.l2_normalize(a), T.l2_normalize(b))


def cosine_loss(f, target_rows: np.ndarray) -> Tensor:
    """Mean over the batch of 1 - <target, f/||f||>.

    Targets must already be unit-norm rows (embedding rows are). On the
    unit sphere this equals 1 - cosine similarity, and half the squared
    Euclidean distance between the normalized feature and its target.
    """
    f = _as_batch(f)
    targets = np.atleast_2d(np.asarray(target_rows, dtype=np.float64))
    if targets.shape != f.shape:
        raise DimensionError(f"targets {targets.shape} do not match features {f.shape}")
    psi = T.l2_normalize(f)
    agreement = T.tensor_sum(T.mul(psi, T.tensor(targets)), axis=-1)
    return T.sub(1.0, T.tensor_mean(agreement))


def cross_entropy_loss(logits, labels, eps: float = 0.0) -> Tensor:
    """Mean softmax cross-entropy against (optionally smoothed) targets."""
    logits = _as_batch(logits)
    n = logits.shape[-1]
    labels = _check_labels(labels, n)
    targets = smoothed_targets(labels, n, eps)
    lsm = T.log_softmax(logits)
    per_sample = T.tensor_sum(T.mul(lsm, T.tensor(targets)), axis=-1)
    return T.neg(T.tensor_mean(per_sample))


def smoothed_targets(labels: np.ndarray, n: int, eps: float) -> np.ndarray:
    """Target distributions: 1-eps on the true class, eps/(n-1) elsewhere."""
    labels = _check_labels(labels, n)
    out = np.full((labels.size, n), eps / (n - 1), dtype=np.float64)
    out[np.arange(labels.size), labels - 1] = 1.0 - eps
    return out


def mse_loss(f, target_rows: np.ndarray) -> Tensor:
    """Mean over the batch of ||f - target||^2 (no normalization)."""
    f = _as_batch(f)
    targets = np.atleast_2d(np.asarray(target_rows, dtype=np.float64))
    if targets.shape != f.shape:
        raise DimensionError(f"targets {targets.shape} do not match features {f.shape}")
    diff = T.sub(f, T.tensor(targets))
    return T.tensor_mean(T.tensor_sum(T.mul(diff, diff), axis=-1))


def cosine_plus_xent_loss(
    f,
    labels,
    embeddings: EmbeddingMatrix,
    head: tuple[Tensor, Tensor],
    combo_weight: float,
) -> Tensor:
    """Cosine loss on embedding targets plus weighted head cross-entropy.

    The head consumes the normalized features, so both terms share one
    normalization and gradients flow through it from both.
    """
    f = _as_batch(f)
    labels = _check_labels(labels, embeddings.num_classes)
    weight, bias = head
    if weight.shape != (f.shape[-1], embeddings.num_classes):
        raise DimensionError(
            f"head weight {weight.shape} does not map dim {f.shape[-1]} "
            f"to {embeddings.num_classes} classes"
        )
    psi = T.l2_normalize(f)
    targets = embeddings.rows_for_labels(labels)
    agreement = T.tensor_sum(T.mul(psi, T.tensor(targets)), axis=-1)
    cos_term = T.sub(1.0, T.tensor_mean(agreement))
    logits = T.add_bias(T.matmul(psi, weight), bias)
    lsm = T.log_softmax(logits)
    onehot = smoothed_targets(labels, embeddings.num_classes, 0.0)
    xent_term = T.neg(T.tensor_mean(T.tensor_sum(T.mul(lsm, T.tensor(onehot)), axis=-1)))
    return T.add(cos_term, T.mul(xent_term, combo_weight))


def batch_loss(
    spec: LossSpec,
    f: Tensor,
    labels: np.ndarray,
    embeddings: EmbeddingMatrix | None = None,
    head: tuple[Tensor, Tensor] | None = None,
) -> Tensor:
    """Dispatch a LossSpec to its loss function for one batch."""
    if spec.kind == "cross_entropy":
        return cross_entropy_loss(f, labels, eps=spec.label_smoothing_eps)
    if embeddings is None:
        raise ConfigError(f"loss {spec.kind!r} needs class embeddings")
    labels = _check_labels(labels, embeddings.num_classes)
    targets = embeddings.rows_for_labels(labels)
    if spec.kind == "cosine":
        return cosine_loss(f, targets)
    if spec.kind == "mse":
        return mse_loss(f, targets)
    if head is None:
        raise ConfigError("cosine_plus_xent needs an auxiliary head")
    return cosine_plus_xent_loss(f, labels, embeddings, head, spec.combo_weight)


# ---------------------------------------------------------------------------
# plain (non-differentiable) per-sample evaluation
# ---------------------------------------------------------------------------


def per_sample_losses(
    spec: LossSpec,
    f: np.ndarray,
    labels: np.ndarray,
    embeddings: EmbeddingMatrix | None = None,
    head: AuxHead | None = None,
    allow_degenerate: bool = False,
) -> np.ndarray:
    """Loss value per batch row, computed directly in numpy.

    With ``allow_degenerate`` a zero-norm feature row yields NaN instead
    of an error; surface grids want a hole there, training wants a crash.
    """
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if spec.kind == "cross_entropy":
        targets = smoothed_targets(labels, f.shape[1], spec.label_smoothing_eps)
        lsm = _np_log_softmax(f)
        return -(targets * lsm).sum(axis=1)
    if embeddings is None:
        raise ConfigError(f"loss {spec.kind!r} needs class embeddings")
    targets = embeddings.rows_for_labels(labels)
    if spec.kind == "mse":
        diff = f - targets
        return (diff * diff).sum(axis=1)
    norms = np.linalg.norm(f, axis=1)
    degenerate = norms <= T.L2_NORM_EPS
    if degenerate.any() and not allow_degenerate:
        bad = int(np.argmax(degenerate))
        raise T.DegenerateVectorError(f"feature row {bad} has zero norm")
    safe = np.where(degenerate, 1.0, norms)
    psi = f / safe[:, None]
    cos_term = 1.0 - (psi * targets).sum(axis=1)
    cos_term[degenerate] = np.nan
    if spec.kind == "cosine":
        return cos_term
    if head is None:
        raise ConfigError("cosine_plus_xent needs an auxiliary head")
    lsm = _np_log_softmax(head.logits(psi))
    onehot = smoothed_targets(labels, embeddings.num_classes, 0.0)
    xent = -(onehot * lsm).sum(axis=1)
    xent[degenerate] = np.nan
    return cos_term + spec.combo_weight * xent


def _np_log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# loss-surface sampling (2-D feature space, fixed target)
# ---------------------------------------------------------------------------

SURFACE_KINDS = ("cosine", "cross_entropy", "mse")


@dataclass(frozen=True)
class SurfaceGrid:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray = field(repr=False)  # values[iy, ix]


def loss_surface_grid(
    spec: LossSpec,
    target: tuple[float, float] = (1.0, 0.0),
    bounds: tuple[float, float] = (-2.0, 2.0),
    resolution: int = 201,
) -> SurfaceGrid:
    """Loss at each point of a square grid in a 2-D feature space.

    The grid point plays the role of the model output; the target is the
    embedding of the true class (class 1 for the logits path). Cells where
    the loss is undefined (cosine at the origin) come back NaN.
    """
    if spec.kind not in SURFACE_KINDS:
        raise ConfigError(f"surface grids support {SURFACE_KINDS}, not {spec.kind!r}")
    if resolution < 2:
        raise ConfigError("resolution must be at least 2")
    lo, hi = bounds
    if not lo < hi:
        raise ConfigError(f"bad bounds {bounds}")
    xs = np.linspace(lo, hi, resolution)
    ys = np.linspace(lo, hi, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    labels = np.ones(points.shape[0], dtype=np.int64)
    emb = None
    if spec.kind != "cross_entropy":
        tvec = np.asarray(target, dtype=np.float64)
        emb = EmbeddingMatrix(
            class_names=("target", "other"),
            matrix=np.vstack([tvec, _any_unit_perp(tvec)]),
            kind="onehot",
        )
    grid_spec = LossSpec(
        kind=spec.kind,
        num_classes=2,
        label_smoothing_eps=spec.label_smoothing_eps,
        combo_weight=spec.combo_weight,
    )
    values = per_sample_losses(
        grid_spec, points, labels, embeddings=emb, allow_degenerate=True
    )
    return SurfaceGrid(xs=xs, ys=ys, values=values.reshape(resolution, resolution))


def _any_unit_perp(v: np.ndarray) -> np.ndarray:
    perp = np.array([-v[1], v[0]])
    norm = np.linalg.norm(perp)
    return perp / norm if norm > 0 else np.array([0.0, 1.0])


def write_surface_csv(path, grid: SurfaceGrid) -> None:
    """Header x,y,loss; one row per cell; literal nan for undefined cells."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "loss"])
        for iy, y in enumerate(grid.ys):
            for ix, x in enumerate(grid.xs):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(grid.values[iy, ix]))])
