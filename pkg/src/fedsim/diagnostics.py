"""Run-time checks and theory-side evaluators.

Covers the quantities the analysis cares about: step-size admissibility for
both algorithms, the guaranteed gradient-norm bounds, per-sample gradient
variance, the inner-product progress diagnostic, and the exact auxiliary
recursion that server momentum must satisfy along any trajectory.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .models import Batch, BatchLike, Model, gradient, per_sample_gradients
from .params import ParamVector, dot


@dataclass(frozen=True)
class RoundRecord:
    """Everything recorded about one communication round."""

    t: int
    loss: float
    grad_sq_norm: float
    g_norm: float
    inner_product: Optional[float]
    gamma: float
    local_steps: int
    active_set: tuple[int, ...]
    cum_gamma: float
    z_residual: Optional[float]

    FIELDS = (
        "t",
        "loss",
        "grad_sq_norm",
        "g_norm",
        "inner_product",
        "gamma",
        "local_steps",
        "active_set",
        "cum_gamma",
        "z_residual",
    )


@dataclass(frozen=True)
class TheoreticalBound:
    """A guaranteed upper bound on min-over-rounds squared gradient norm."""

    algorithm: str
    l_smooth: float
    sigma_sq: float
    clients: int
    active: int
    local_steps: int
    rounds: int
    f_gap: float
    eta: float = 1.0
    beta: float = 0.0
    noise_constant: Optional[float] = None
    value: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.value) or self.value <= 0:
            raise ValueError(f"bound value must be finite and positive, got {self.value}")


StepsizeCheck = namedtuple("StepsizeCheck", ["ok", "threshold", "margin", "binding"])
MomentumStepsizeCheck = namedtuple(
    "MomentumStepsizeCheck",
    ["ok", "threshold", "margins", "noise_constant"],
)
WindowMean = namedtuple("WindowMean", ["mean", "start", "stop", "partial"])


def inner_product_diag(g: ParamVector, w: ParamVector, w_star: ParamVector) -> float:
    """<g, w - w_star>: positive when the update points toward the reference."""
    if w.dim != w_star.dim:
        raise ValueError(
            f"inner_product_diag: dimension mismatch ({w.dim} vs {w_star.dim})"
        )
    return dot(g, ParamVector(w.values - w_star.values))


def windowed_mean(values: Sequence[float], window: int) -> list[WindowMean]:
    """Means over consecutive non-overlapping windows.

    A trailing window shorter than `window` is still emitted, with
    ``partial=True``.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    out = []
    vals = list(values)
    for start in range(0, len(vals), window):
        chunk = vals[start : start + window]
        out.append(
            WindowMean(
                mean=float(np.mean(chunk)),
                start=start,
                stop=start + len(chunk),
                partial=len(chunk) < window,
            )
        )
    return out


def variance_estimate(
    model: Model,
    w: ParamVector,
    shard: BatchLike,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo estimate of the single-sample gradient variance on a shard.

    Averages ||grad(sample) - grad(shard)||^2 over `draws` uniform draws,
    with the exact full-shard gradient as the centre (no Bessel correction:
    the centre is not itself estimated).
    """
    if draws < 2:
        raise ValueError(f"variance_estimate needs draws >= 2, got {draws}")
    shard = Batch.coerce(shard)
    n = len(shard)
    centre = gradient(model, w, shard).values
    picks = rng.integers(0, n, size=draws)
    unique, counts = np.unique(picks, return_counts=True)
    sub = Batch(shard.x[unique], shard.y[unique])
    grads = per_sample_gradients(model, w, sub)
    sq = np.sum((grads - centre) ** 2, axis=1)
    return float(np.sum(counts * sq) / draws)


def max_client_variance(
    model: Model, w: ParamVector, dataset, draws: int, master_seed: int
) -> float:
    """Max over clients of variance_estimate: a uniform noise bound for the
    bound evaluators."""
    from . import rng as rngmod

    worst = 0.0
    for k, shard in enumerate(dataset.shards):
        stream = rngmod.substream(master_seed, rngmod.DIAG, 0, k)
        worst = max(worst, variance_estimate(model, w, shard, draws, stream))
    return worst


def _require_positive(**kwargs) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value}")


def stepsize_check_fedavg(
    gamma: float, l_smooth: float, local_steps: int, eta: float
) -> StepsizeCheck:
    """Is gamma admissible for the averaging algorithm's guarantee?

    The admissible region is gamma <= min(1/(2*L*H), 1/(4*eta*L*H)),
    inclusive at the boundary.  For eta >= 1 the second term always binds.
    """
    _require_positive(l_smooth=l_smooth)
    if local_steps < 1:
        raise ValueError(f"local_steps must be >= 1, got {local_steps}")
    if eta < 1:
        raise ValueError(f"eta must be >= 1, got {eta}")
    t_avg = 1.0 / (2.0 * l_smooth * local_steps)
    t_scaled = 1.0 / (4.0 * eta * l_smooth * local_steps)
    threshold = min(t_avg, t_scaled)
    binding = "1/(4*eta*L*H)" if t_scaled <= t_avg else "1/(2*L*H)"
    return StepsizeCheck(
        ok=gamma <= threshold,
        threshold=threshold,
        margin=threshold - gamma,
        binding=binding,
    )


def fedmom_noise_constant(
    l_smooth: float,
    clients: int,
    active: int,
    eta: float,
    beta: float,
    sigma_sq: float,
) -> float:
    """The momentum analysis's variance constant C.

    C = M*L*eta/(4K(1-b))*s2 + M*L*eta^2/(2K(1-b)^2)*s2
        + b^4*M^2*L*eta^3/(2K^2(1-b)^5)*s2
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    _require_positive(l_smooth=l_smooth, clients=clients, active=active, eta=eta)
    if sigma_sq < 0:
        raise ValueError(f"sigma_sq must be >= 0, got {sigma_sq}")
    k, m, b = float(clients), float(active), beta
    return (
        m * l_smooth * eta / (4.0 * k * (1.0 - b)) * sigma_sq
        + m * l_smooth * eta**2 / (2.0 * k * (1.0 - b) ** 2) * sigma_sq
        + b**4 * m**2 * l_smooth * eta**3 / (2.0 * k**2 * (1.0 - b) ** 5) * sigma_sq
    )


def stepsize_check_fedmom(
    gamma: float,
    l_smooth: float,
    local_steps: int,
    eta: float,
    beta: float,
    clients: int,
    active: int,
    sigma_sq: float,
    rounds: int,
    f_gap: float,
) -> MomentumStepsizeCheck:
    """Evaluate the three step-size thresholds of the momentum guarantee.

    Thresholds: sqrt(f_gap/(T*H*C)), (1-b)/(4*eta*H*L), and
    (1-b)^2/(eta*b^2*H*L)*sqrt(K/(8M)); the last is infinite at beta=0 and
    the first is infinite when C is zero.  Margins are threshold - gamma in
    the same order.
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    _require_positive(rounds=rounds, f_gap=f_gap, local_steps=local_steps)
    c = fedmom_noise_constant(l_smooth, clients, active, eta, beta, sigma_sq)
    h = local_steps
    t1 = math.sqrt(f_gap / (rounds * h * c)) if c > 0 else math.inf
    t2 = (1.0 - beta) / (4.0 * eta * h * l_smooth)
    if beta > 0:
        t3 = (1.0 - beta) ** 2 / (eta * beta**2 * h * l_smooth) * math.sqrt(
            clients / (8.0 * active)
        )
    else:
        t3 = math.inf
    threshold = min(t1, t2, t3)
    return MomentumStepsizeCheck(
        ok=gamma <= threshold,
        threshold=threshold,
        margins=(t1 - gamma, t2 - gamma, t3 - gamma),
        noise_constant=c,
    )


def fedavg_gradient_bound(
    l_smooth: float,
    clients: int,
    active: int,
    rounds: int,
    local_steps: int,
    f_gap: float,
    sigma_sq: float,
) -> float:
    """Guaranteed min squared gradient norm for constant-step averaging:
    8LK*f_gap/(MT) + sqrt(12*K*L*s2*f_gap/(M*T*H))."""
    _require_positive(
        l_smooth=l_smooth,
        clients=clients,
        active=active,
        rounds=rounds,
        local_steps=local_steps,
        f_gap=f_gap,
    )
    if sigma_sq < 0:
        raise ValueError(f"sigma_sq must be >= 0, got {sigma_sq}")
    k, m, t, h = float(clients), float(active), float(rounds), float(local_steps)
    return 8.0 * l_smooth * k * f_gap / (m * t) + math.sqrt(
        12.0 * k * l_smooth * sigma_sq * f_gap / (m * t * h)
    )


def fedavg_schedule_bound(
    gammas: Sequence[float],
    l_smooth: float,
    clients: int,
    active: int,
    local_steps: int,
    eta: float,
    f_gap: float,
    sigma_sq: float,
) -> float:
    """General per-round-step-size form of the averaging guarantee:
    2K*f_gap/(eta*M*H*G) + L*s2*(2*eta+1)/2 * sum(gamma^2)/G with
    G = sum(gamma).

    Note: two variance-term scalings circulate for the general-eta case,
    (2*eta+1)/2 and (2*eta^2+eta); they agree at eta=1, which is the only
    regime the constant-step bound above is stated for.  This evaluator uses
    the former.
    """
    gs = np.asarray(list(gammas), dtype=np.float64)
    if gs.size == 0 or np.any(gs <= 0):
        raise ValueError("gammas must be a nonempty sequence of positive reals")
    _require_positive(
        l_smooth=l_smooth, clients=clients, active=active,
        local_steps=local_steps, eta=eta, f_gap=f_gap,
    )
    big_gamma = float(np.sum(gs))
    term1 = 2.0 * clients * f_gap / (eta * active * local_steps * big_gamma)
    term2 = l_smooth * sigma_sq * (2.0 * eta + 1.0) / 2.0 * float(np.sum(gs**2)) / big_gamma
    return term1 + term2


def fedmom_gradient_bound(
    l_smooth: float,
    clients: int,
    active: int,
    rounds: int,
    local_steps: int,
    eta: float,
    beta: float,
    f_gap: float,
    sigma_sq: float,
) -> float:
    """Guaranteed min squared gradient norm for server momentum:
    16K*eta*L*f_gap/(TM) + 4*eta*L*b^2*f_gap*sqrt(8K)/((1-b)*sqrt(M))
    + 8K(1-b)/M * sqrt(f_gap*C/(TH))."""
    if not 0 <= beta < 1:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    _require_positive(
        l_smooth=l_smooth, clients=clients, active=active,
        rounds=rounds, local_steps=local_steps, eta=eta, f_gap=f_gap,
    )
    c = fedmom_noise_constant(l_smooth, clients, active, eta, beta, sigma_sq)
    k, m, t, h = float(clients), float(active), float(rounds), float(local_steps)
    return (
        16.0 * k * eta * l_smooth * f_gap / (t * m)
        + 4.0 * eta * l_smooth * beta**2 * f_gap * math.sqrt(8.0 * k)
        / ((1.0 - beta) * math.sqrt(m))
        + 8.0 * k * (1.0 - beta) / m * math.sqrt(f_gap * c / (t * h))
    )


def momentum_z_residual(
    w_next: ParamVector,
    w_curr: ParamVector,
    v_next: ParamVector,
    v_curr: ParamVector,
    g_curr: ParamVector,
    beta: float,
    eta: float,
) -> float:
    """Residual of the exact auxiliary recursion along a momentum trajectory.

    With p = beta/(1-beta)*(w - v) and z = w + p, consecutive iterates must
    satisfy z_next = z - (eta*g)/(1-beta) exactly; the return value is
    ||z_next - (z - eta*g/(1-beta))|| / max(1, ||z||), which stays at
    round-off scale (<= 1e-10) on any genuine momentum run.  `g_curr` is the
    raw aggregated update; `eta` folds it to the applied step.
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    dims = {w_next.dim, w_curr.dim, v_next.dim, v_curr.dim, g_curr.dim}
    if len(dims) != 1:
        raise ValueError(f"momentum_z_residual: dimension mismatch {sorted(dims)}")
    scale = beta / (1.0 - beta)
    z_curr = w_curr.values + scale * (w_curr.values - v_curr.values)
    z_next = w_next.values + scale * (w_next.values - v_next.values)
    predicted = z_curr - eta * g_curr.values / (1.0 - beta)
    num = float(np.linalg.norm(z_next - predicted))
    return num / max(1.0, float(np.linalg.norm(z_curr)))
