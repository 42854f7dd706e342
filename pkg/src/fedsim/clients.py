"""The per-client local solver: a few steps of mini-batch SGD.

This is the hot path of the whole simulator; the arithmetic lives in
``fedsim.kernels`` (compiled when available, pure Python otherwise).  Batch
indices are drawn here, outside the kernel, so every backend consumes the
identical random stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DivergenceError
from .models import Batch, BatchLike, Model
from .params import ParamVector


@dataclass(frozen=True)
class LocalRunConfig:
    """Step size, step count and batch size for one client run.

    `full_batch` makes every step use the whole shard in storage order (no
    randomness), which turns the run into exact gradient descent.
    """

    gamma: float
    local_steps: int
    batch_size: int = 10
    full_batch: bool = False

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if self.local_steps < 1:
            raise ValueError(f"local_steps must be >= 1, got {self.local_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def local_sgd(
    w: ParamVector,
    model: Model,
    shard: BatchLike,
    cfg: LocalRunConfig,
    rng: np.random.Generator,
) -> ParamVector:
    """Run `cfg.local_steps` SGD steps from `w` on this client's shard.

    Each step draws `cfg.batch_size` indices uniformly with replacement from
    the shard (unless `full_batch`).  Raises DivergenceError naming the step
    at which parameters first went non-finite.
    """
    shard = Batch.coerce(shard)
    if len(shard) == 0:
        raise ValueError("client shard is empty")
    if w.dim != model.dim:
        raise ValueError(f"local_sgd: dimension mismatch ({w.dim} vs {model.dim})")
    n = len(shard)
    steps = cfg.local_steps
    backend = kernels.active
    if model.is_explicit_quadratic:
        # batch contents never enter the explicit form, so no draws happen
        a = model.curvature
        if a.ndim == 1:
            out, bad = backend.sgd_quadratic_diag(
                w.values, a, model.offset, cfg.gamma, steps
            )
        else:
            out, bad = backend.sgd_quadratic_dense(
                w.values, a, model.offset, cfg.gamma, steps
            )
    else:
        if cfg.full_batch:
            batch = n
            idx = np.tile(np.arange(n, dtype=np.int64), steps)
        else:
            batch = cfg.batch_size
            idx = rng.integers(0, n, size=(steps, batch), dtype=np.int64).ravel()
        if model.kind == "quadratic":
            out, bad = backend.sgd_least_squares(
                w.values, shard.x, shard.y, idx, cfg.gamma, steps, batch
            )
        elif model.kind == "logistic":
            if not np.all(np.abs(shard.y) == 1.0):
                raise ValueError("logistic targets must be -1 or +1")
            out, bad = backend.sgd_logistic(
                w.values, shard.x, shard.y, idx, cfg.gamma, steps, batch
            )
        else:
            out, bad = backend.sgd_mlp1(
                w.values, shard.x, shard.y, idx, cfg.gamma, steps, batch,
                model.input_dim, model.hidden,
            )
    if bad >= 0:
        raise DivergenceError(
            f"local sgd produced non-finite parameters at step h={bad} "
            f"(of {steps})",
            step=bad,
        )
    return ParamVector(out)


def client_delta(w_start: ParamVector, w_end: ParamVector) -> ParamVector:
    """The client's unweighted contribution to the round update."""
    if w_start.dim != w_end.dim:
        raise ValueError(
            f"client_delta: dimension mismatch ({w_start.dim} vs {w_end.dim})"
        )
    return ParamVector(w_start.values - w_end.values)
