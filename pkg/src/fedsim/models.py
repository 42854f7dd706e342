"""Differentiable objective families with exact gradients.

Three families are supported, chosen so that smoothness and noise constants
are either computable in closed form (quadratic, logistic) or genuinely
non-convex (one-hidden-layer tanh MLP with squared loss):

* ``quadratic`` — either an explicit form ``0.5*w'Aw - b'w`` whose value
  ignores the batch (useful for exact gradient-descent checks), or
  least-squares ``0.5*(x.w - y)^2`` per sample when built without an explicit
  curvature matrix.
* ``logistic`` — binary logistic regression with labels in {-1, +1}.
* ``mlp1`` — scalar-output tanh MLP, squared loss; parameters are flattened
  as [W1 row-major, b1, w2, b2].

All gradients are hand-derived; a central-difference oracle is provided so
the analytic forms can be checked against an independent computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import UnsupportedModelError
from .params import ParamVector

KINDS = ("quadratic", "logistic", "mlp1")


@dataclass(frozen=True)
class Sample:
    """One observation: a feature vector and a real target or {-1,+1} label."""

    features: np.ndarray
    target: float

    def __post_init__(self):
        arr = np.array(self.features, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"sample features must be 1-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "features", arr)
        object.__setattr__(self, "target", float(self.target))


@dataclass(frozen=True)
class Batch:
    """Column-stacked samples: x has shape (n, input_dim), y has shape (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent batch shapes x{x.shape} y{y.shape}")
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.x.shape[1])

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        if len(samples) == 0:
            raise ValueError("empty batch")
        return cls(
            np.stack([s.features for s in samples]),
            np.array([s.target for s in samples]),
        )

    @classmethod
    def coerce(cls, batch: "BatchLike") -> "Batch":
        if isinstance(batch, Batch):
            return batch
        return cls.from_samples(list(batch))

    def samples(self) -> list[Sample]:
        return [Sample(self.x[i], self.y[i]) for i in range(len(self))]


BatchLike = Union[Batch, Sequence[Sample]]


@dataclass(frozen=True)
class Model:
    """An objective family plus its architecture metadata.

    For ``quadratic``, `curvature` (diagonal as 1-D, dense as 2-D) selects the
    explicit batch-independent form; without it the model is per-sample least
    squares.  `hidden` is only meaningful for ``mlp1``.
    """

    kind: str
    input_dim: int
    hidden: int = 0
    curvature: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.kind == "mlp1" and self.hidden < 1:
            raise ValueError("mlp1 requires hidden >= 1")
        if self.curvature is not None:
            if self.kind != "quadratic":
                raise ValueError("curvature is only valid for quadratic models")
            a = np.array(self.curvature, dtype=np.float64)
            if a.ndim == 1:
                if a.shape != (self.input_dim,):
                    raise ValueError("diagonal curvature has wrong length")
                if np.any(a < 0):
                    raise ValueError("curvature must be positive semi-definite")
            elif a.ndim == 2:
                if a.shape != (self.input_dim, self.input_dim):
                    raise ValueError("dense curvature has wrong shape")
                if not np.allclose(a, a.T, atol=1e-12):
                    raise ValueError("dense curvature must be symmetric")
                if np.linalg.eigvalsh(a)[0] < -1e-10:
                    raise ValueError("curvature must be positive semi-definite")
            else:
                raise ValueError("curvature must be 1-D (diagonal) or 2-D (dense)")
            a.flags.writeable = False
            object.__setattr__(self, "curvature", a)
            b = np.zeros(self.input_dim) if self.offset is None else np.array(
                self.offset, dtype=np.float64
            )
            if b.shape != (self.input_dim,):
                raise ValueError("offset has wrong length")
            b.flags.writeable = False
            object.__setattr__(self, "offset", b)
        elif self.offset is not None:
            raise ValueError("offset requires an explicit curvature")

    @property
    def dim(self) -> int:
        """Parameter dimension."""
        if self.kind == "mlp1":
            return self.hidden * (self.input_dim + 2) + 1
        return self.input_dim

    @property
    def is_explicit_quadratic(self) -> bool:
        return self.kind == "quadratic" and self.curvature is not None

    # --- constructors -----------------------------------------------------

    @classmethod
    def least_squares(cls, input_dim: int) -> "Model":
        return cls("quadratic", input_dim)

    @classmethod
    def quadratic(cls, curvature, offset=None) -> "Model":
        a = np.asarray(curvature, dtype=np.float64)
        return cls("quadratic", a.shape[0], curvature=a, offset=offset)

    @classmethod
    def logistic(cls, input_dim: int) -> "Model":
        return cls("logistic", input_dim)

    @classmethod
    def mlp1(cls, input_dim: int, hidden: int) -> "Model":
        return cls("mlp1", input_dim, hidden=hidden)


def _mlp1_views(model: Model, w: np.ndarray):
    i, h = model.input_dim, model.hidden
    w1 = w[: h * i].reshape(h, i)
    b1 = w[h * i : h * i + h]
    w2 = w[h * i + h : h * i + 2 * h]
    b2 = w[-1]
    return w1, b1, w2, b2


def _check_logistic_targets(y: np.ndarray) -> None:
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("logistic targets must be -1 or +1")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is stable for any argument sign
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _curvature_matvec(model: Model, v: np.ndarray) -> np.ndarray:
    a = model.curvature
    return a * v if a.ndim == 1 else a @ v


def loss(model: Model, w: ParamVector, batch: BatchLike) -> float:
    """Mean per-sample loss over the batch."""
    b = Batch.coerce(batch)
    wv = w.values
    if wv.shape[0] != model.dim:
        raise ValueError(f"parameter dim {wv.shape[0]} != model dim {model.dim}")
    if model.is_explicit_quadratic:
        return float(0.5 * wv @ _curvature_matvec(model, wv) - model.offset @ wv)
    if model.kind == "quadratic":
        r = b.x @ wv - b.y
        return float(0.5 * np.mean(r * r))
    if model.kind == "logistic":
        _check_logistic_targets(b.y)
        z = b.x @ wv
        return float(np.mean(np.logaddexp(0.0, -b.y * z)))
    # mlp1
    w1, b1, w2, b2 = _mlp1_views(model, wv)
    hid = np.tanh(b.x @ w1.T + b1)
    e = hid @ w2 + b2 - b.y
    return float(0.5 * np.mean(e * e))


def gradient(model: Model, w: ParamVector, batch: BatchLike) -> ParamVector:
    """Exact mean gradient of the per-sample loss over the batch."""
    b = Batch.coerce(batch)
    wv = w.values
    n = len(b)
    if model.is_explicit_quadratic:
        return ParamVector(_curvature_matvec(model, wv) - model.offset)
    if model.kind == "quadratic":
        r = b.x @ wv - b.y
        return ParamVector(b.x.T @ r / n)
    if model.kind == "logistic":
        _check_logistic_targets(b.y)
        z = b.x @ wv
        c = -b.y * _sigmoid(-b.y * z)
        return ParamVector(b.x.T @ c / n)
    # mlp1
    w1, b1, w2, b2 = _mlp1_views(model, wv)
    hid = np.tanh(b.x @ w1.T + b1)  # (n, h)
    e = hid @ w2 + b2 - b.y  # (n,)
    d1 = e[:, None] * (w2 * (1.0 - hid * hid))  # (n, h)
    g = np.empty(model.dim)
    i, h = model.input_dim, model.hidden
    g[: h * i] = (d1.T @ b.x / n).ravel()
    g[h * i : h * i + h] = d1.sum(axis=0) / n
    g[h * i + h : h * i + 2 * h] = hid.T @ e / n
    g[-1] = e.sum() / n
    return ParamVector(g)


def per_sample_gradients(model: Model, w: ParamVector, batch: BatchLike) -> np.ndarray:
    """Gradient of every individual sample's loss, stacked as (n, dim)."""
    b = Batch.coerce(batch)
    wv = w.values
    if model.is_explicit_quadratic:
        g = _curvature_matvec(model, wv) - model.offset
        return np.tile(g, (len(b), 1))
    if model.kind == "quadratic":
        r = b.x @ wv - b.y
        return b.x * r[:, None]
    if model.kind == "logistic":
        _check_logistic_targets(b.y)
        z = b.x @ wv
        c = -b.y * _sigmoid(-b.y * z)
        return b.x * c[:, None]
    single = [
        gradient(model, w, Batch(b.x[i : i + 1], b.y[i : i + 1])).values
        for i in range(len(b))
    ]
    return np.stack(single)


def full_gradient(model: Model, w: ParamVector, dataset) -> ParamVector:
    """Gradient of the global objective: shard gradients weighted by n_k/n."""
    shards = dataset.shards
    if len(shards) == 0:
        raise ValueError("dataset has no clients")
    acc = np.zeros(model.dim)
    for weight, shard in zip(dataset.weights, shards):
        acc += weight * gradient(model, w, shard).values
    return ParamVector(acc)


def finite_diff_gradient(
    model: Model, w: ParamVector, batch: BatchLike, step: float = 1e-6
) -> ParamVector:
    """Central-difference gradient oracle, independent of the analytic forms."""
    if not step > 0:
        raise ValueError(f"finite-difference step must be > 0, got {step}")
    b = Batch.coerce(batch)
    base = w.values
    g = np.empty(base.shape[0])
    for j in range(base.shape[0]):
        hi = base.copy()
        lo = base.copy()
        hi[j] += step
        lo[j] -= step
        g[j] = (loss(model, ParamVector(hi), b) - loss(model, ParamVector(lo), b)) / (
            2.0 * step
        )
    return ParamVector(g)


def _power_iteration(matvec, dim: int, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a PSD operator, to residual ||Av - lv|| <= tol*max(1,l)."""
    # deterministic start with a tilt so no symmetry can trap the iteration
    v = 1.0 + 1e-3 * np.arange(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = matvec(v)
        lam = float(v @ u)
        if np.linalg.norm(u - lam * v) <= tol * max(1.0, abs(lam)):
            return lam
        norm = np.linalg.norm(u)
        if norm == 0.0:  # operator is zero on this vector: eigenvalue 0
            return 0.0
        v = u / norm
    raise RuntimeError("power iteration did not converge")


def lipschitz_bound(model: Model, dataset) -> float:
    """Upper bound on the gradient-smoothness constant shared by all shards.

    quadratic: largest eigenvalue of the curvature (explicit matrix, or the
    pooled second-moment matrix X'X/n for least squares); logistic: largest
    eigenvalue of X'X/(4n) over pooled features.  No global constant exists
    for mlp1.
    """
    if model.kind == "mlp1":
        raise UnsupportedModelError(
            "mlp1 has no global smoothness constant; supply a surrogate"
        )
    if model.is_explicit_quadratic:
        a = model.curvature
        if a.ndim == 1:
            return float(np.max(a))
        return _power_iteration(lambda v: a @ v, model.input_dim)
    pooled = dataset.pooled
    x = pooled.x
    n = len(pooled)
    scale = 1.0 if model.kind == "quadratic" else 0.25
    return _power_iteration(lambda v: scale * (x.T @ (x @ v)) / n, model.input_dim)


def loss_lower_bound(model: Model, dataset) -> float:
    """A valid lower bound on the global objective (analytic where available)."""
    if model.kind in ("logistic", "mlp1"):
        return 0.0
    if model.is_explicit_quadratic:
        a, b = model.curvature, model.offset
        mat = np.diag(a) if a.ndim == 1 else a
        w_star, *_ = np.linalg.lstsq(mat, b, rcond=None)
        return float(0.5 * w_star @ _curvature_matvec(model, w_star) - b @ w_star)
    pooled = dataset.pooled
    w_star, *_ = np.linalg.lstsq(pooled.x, pooled.y, rcond=None)
    r = pooled.x @ w_star - pooled.y
    return float(0.5 * np.mean(r * r))


def init_params(
    model: Model,
    rng: np.random.Generator,
    scheme: str = "default",
    scale: float = 1.0,
) -> ParamVector:
    """Initial parameters: zeros for quadratic/logistic, fan-in uniform for mlp1."""
    if scheme == "normal":
        return ParamVector(scale * rng.standard_normal(model.dim))
    if scheme != "default":
        raise ValueError(f"unknown init scheme {scheme!r}")
    if model.kind != "mlp1":
        return ParamVector.zeros(model.dim)
    i, h = model.input_dim, model.hidden
    bound1 = 1.0 / np.sqrt(i)
    bound2 = 1.0 / np.sqrt(h)
    w = np.empty(model.dim)
    w[: h * i + h] = rng.uniform(-bound1, bound1, size=h * i + h)
    w[h * i + h :] = rng.uniform(-bound2, bound2, size=h + 1)
    return ParamVector(w)
