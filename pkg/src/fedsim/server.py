"""Server-side algorithms: plain averaging, scaled averaging, and momentum.

The server never sees raw gradients.  Each round it samples an active set,
broadcasts the model, collects updated local models, forms the weighted
aggregate of (w_t - local model) with inactive clients contributing zero,
and applies it as a descent direction scaled by the server rate.  Momentum
keeps a second sequence v and extrapolates, Nesterov style.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .clients import LocalRunConfig, local_sgd
from .data import FederatedDataset
from .diagnostics import RoundRecord, inner_product_diag, momentum_z_residual
from .errors import DivergenceError
from .models import Model, gradient, loss
from .params import ParamVector, dot

ALGORITHMS = ("fedsgd", "fedavg", "fedmom")

# gamma_t, local_steps_t as a function of the round index
Schedule = Callable[[int], tuple[float, int]]


@dataclass(frozen=True)
class ServerConfig:
    """Algorithm choice plus the federation's shape.

    `eta` is the server rate, valid in [1, K/M]; `allow_eta_override` lifts
    that range check for out-of-spec experimentation.  `beta` only matters
    for fedmom.
    """

    algorithm: str
    clients: int
    active: int
    rounds: int
    eta: float = 1.0
    beta: float = 0.9
    seed: int = 0
    allow_eta_override: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if not 1 <= self.active <= self.clients:
            raise ValueError(
                f"active clients must satisfy 1 <= M <= K, got M={self.active} "
                f"K={self.clients}"
            )
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.allow_eta_override:
            hi = self.clients / self.active
            if not 1.0 <= self.eta <= hi:
                raise ValueError(
                    f"eta must lie in [1, K/M] = [1, {hi:g}], got {self.eta}"
                )
        elif not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be finite and > 0, got {self.eta}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class ServerState:
    """Current model, round counter, and (momentum only) the v sequence."""

    w: ParamVector
    t: int = 0
    v: Optional[ParamVector] = None

    @classmethod
    def initial(cls, w0: ParamVector, algorithm: str) -> "ServerState":
        if algorithm == "fedmom":
            return cls(w=w0, t=0, v=w0)
        return cls(w=w0, t=0, v=None)


@dataclass(frozen=True)
class ActiveSet:
    """The distinct client ids participating in one round."""

    indices: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(sorted(int(i) for i in self.indices))
        if len(set(ids)) != len(ids):
            raise ValueError(f"active set has duplicate ids: {self.indices}")
        if ids and ids[0] < 0:
            raise ValueError(f"client ids must be non-negative: {self.indices}")
        if not ids:
            raise ValueError("active set is empty")
        object.__setattr__(self, "indices", ids)

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, k) -> bool:
        return k in self.indices


def sample_active_set(
    clients: int, active: int, rng: np.random.Generator
) -> ActiveSet:
    """Uniformly sample `active` distinct ids out of range(clients)."""
    if not 1 <= active <= clients:
        raise ValueError(
            f"cannot sample {active} distinct clients from {clients}"
        )
    picks = rng.choice(clients, size=active, replace=False)
    return ActiveSet(tuple(int(i) for i in picks))


def biased_gradient(
    w: ParamVector,
    local_models: Mapping[int, ParamVector],
    weights: Sequence[float],
    active: ActiveSet,
) -> ParamVector:
    """Weighted sum over clients of (w - local model).

    Inactive clients contribute zero by the convention that their local
    model is the broadcast one, so only the active set is touched.
    """
    weights = np.asarray(weights, dtype=np.float64)
    acc = np.zeros(w.dim)
    for k in active:
        if k >= weights.shape[0]:
            raise ValueError(f"client {k} outside the weight vector of length {weights.shape[0]}")
        if k not in local_models:
            raise ValueError(f"missing local model for active client {k}")
        wk = local_models[k]
        if wk.dim != w.dim:
            raise ValueError(
                f"biased_gradient: dimension mismatch ({wk.dim} vs {w.dim})"
            )
        acc += weights[k] * (w.values - wk.values)
    return ParamVector(acc)


def _finite_or_raise(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"server update produced non-finite {what}")


def fedavg_round(state: ServerState, g: ParamVector, eta: float) -> ServerState:
    """w <- w - eta*g; one averaging round in descent form."""
    if g.dim != state.w.dim:
        raise ValueError(f"fedavg_round: dimension mismatch ({g.dim} vs {state.w.dim})")
    w_next = state.w.values - eta * g.values
    _finite_or_raise(w_next, "parameters")
    return ServerState(w=ParamVector(w_next), t=state.t + 1, v=None)


def fedmom_round(
    state: ServerState, g: ParamVector, eta: float, beta: float
) -> ServerState:
    """v <- w - eta*g; w <- v + beta*(v - v_prev); one momentum round."""
    if not 0 <= beta < 1:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    if state.v is None:
        raise ValueError("fedmom_round requires momentum state (v)")
    if g.dim != state.w.dim:
        raise ValueError(f"fedmom_round: dimension mismatch ({g.dim} vs {state.w.dim})")
    v_next = state.w.values - eta * g.values
    if beta == 0.0:
        w_next = v_next
    else:
        w_next = v_next + beta * (v_next - state.v.values)
    _finite_or_raise(v_next, "momentum")
    _finite_or_raise(w_next, "parameters")
    return ServerState(
        w=ParamVector(w_next), t=state.t + 1, v=ParamVector(v_next)
    )


@dataclass
class TrainingRun:
    """Round records plus the raw trajectory needed for post-hoc diagnostics.

    `weights[t]` is the server model entering round t (so it has rounds+1
    entries on a clean run); `updates[t]` is the unscaled aggregate of round
    t.  `records` is what the harness serializes.
    """

    records: list[RoundRecord] = field(default_factory=list)
    weights: list[ParamVector] = field(default_factory=list)
    updates: list[ParamVector] = field(default_factory=list)
    final_state: Optional[ServerState] = None

    def fill_inner_products(self, w_star: ParamVector) -> None:
        """Compute <g_t, w_t - w_star> for every recorded round in place."""
        for i, rec in enumerate(self.records):
            value = inner_product_diag(self.updates[i], self.weights[i], w_star)
            self.records[i] = replace(rec, inner_product=value)


def run_training(
    model: Model,
    dataset: FederatedDataset,
    server_cfg: ServerConfig,
    local_cfg: LocalRunConfig,
    schedule: Optional[Schedule] = None,
    w0: Optional[ParamVector] = None,
    w_star: Optional[ParamVector] = None,
) -> TrainingRun:
    """Run the full federated loop for `server_cfg.rounds` rounds.

    Per round: sample the active set, run local SGD on each active client
    with its own substream, aggregate, and step the server.  The losses and
    gradient norms recorded are those of the global objective at the round's
    *entering* model.  On divergence the partial TrainingRun is attached to
    the raised error as `.partial`.
    """
    if dataset.num_clients != server_cfg.clients:
        raise ValueError(
            f"dataset has {dataset.num_clients} shards but config says "
            f"{server_cfg.clients} clients"
        )
    if w0 is None:
        from .models import init_params

        w0 = init_params(model, rngmod.substream(server_cfg.seed, rngmod.INIT))
    state = ServerState.initial(w0, server_cfg.algorithm)
    run = TrainingRun(weights=[w0], final_state=state)
    pooled = dataset.pooled
    cum_gamma = 0.0
    try:
        for t in range(server_cfg.rounds):
            if schedule is not None:
                gamma_t, steps_t = schedule(t)
            else:
                gamma_t, steps_t = local_cfg.gamma, local_cfg.local_steps
            if server_cfg.algorithm == "fedsgd":
                steps_t = 1
            cfg_t = LocalRunConfig(
                gamma=gamma_t,
                local_steps=steps_t,
                batch_size=local_cfg.batch_size,
                full_batch=local_cfg.full_batch,
            )
            active = sample_active_set(
                server_cfg.clients,
                server_cfg.active,
                rngmod.substream(server_cfg.seed, rngmod.SAMPLING, t),
            )
            local_models = {}
            for k in active:
                local_models[k] = local_sgd(
                    state.w,
                    model,
                    dataset.shards[k],
                    cfg_t,
                    rngmod.substream(server_cfg.seed, rngmod.CLIENT, t, k),
                )
            g = biased_gradient(state.w, local_models, dataset.weights, active)
            prev = state
            if server_cfg.algorithm == "fedmom":
                state = fedmom_round(state, g, server_cfg.eta, server_cfg.beta)
                z_res = momentum_z_residual(
                    state.w, prev.w, state.v, prev.v, g,
                    server_cfg.beta, server_cfg.eta,
                )
            else:
                state = fedavg_round(state, g, server_cfg.eta)
                z_res = None
            # global-objective metrics at the entering model; the pooled
            # batch mean equals the n_k/n-weighted shard mean exactly
            full_grad = gradient(model, prev.w, pooled)
            cum_gamma += gamma_t
            inner = (
                inner_product_diag(g, prev.w, w_star) if w_star is not None else None
            )
            run.records.append(
                RoundRecord(
                    t=t,
                    loss=loss(model, prev.w, pooled),
                    grad_sq_norm=dot(full_grad, full_grad),
                    g_norm=float(np.linalg.norm(g.values)),
                    inner_product=inner,
                    gamma=gamma_t,
                    local_steps=steps_t,
                    active_set=active.indices,
                    cum_gamma=cum_gamma,
                    z_residual=z_res,
                )
            )
            run.weights.append(state.w)
            run.updates.append(g)
            run.final_state = state
    except DivergenceError as err:
        err.round_index = t
        err.partial = run
        raise
    return run
