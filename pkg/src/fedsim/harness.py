"""Experiment configuration, execution, and metric serialization.

Config files are flat ``key = value`` lines with ``#`` comments; nested
settings use dotted keys (``server.eta``).  Metrics go to CSV with floats at
17 significant digits so a written file round-trips bit-exactly, which is
what makes byte-identical reruns a meaningful determinism check.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import namedtuple
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from . import rng as rngmod
from .clients import LocalRunConfig
from .data import FederatedDataset, PartitionSpec, generate_synthetic, partition
from .diagnostics import RoundRecord
from .errors import ConfigError, DivergenceError
from .models import Model, init_params
from .params import ParamVector
from .server import Schedule, ServerConfig, TrainingRun, run_training

METRICS_HEADER = RoundRecord.FIELDS

_DEFAULTS = {
    "seed": "0",
    "output": "metrics.csv",
    "model.kind": "logistic",
    "model.input_dim": "5",
    "model.hidden": "8",
    "data.n_total": "2000",
    "data.noise": "0.1",
    "partition.scheme": "iid",
    "partition.shards_per_client": "2",
    "partition.exponent": "1.0",
    "partition.min_size": "1",
    "server.algorithm": "fedavg",
    "server.clients": "100",
    "server.active": "2",
    "server.rounds": "500",
    "server.eta": "",  # empty means K/M
    "server.beta": "0.9",
    "server.allow_eta_override": "false",
    "local.gamma": "0.1",
    "local.steps": "5",
    "local.batch_size": "10",
    "local.full_batch": "false",
    "schedule.kind": "constant",
    "diag.reference_round": "none",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    seed: int
    output: str
    model_kind: str
    input_dim: int
    hidden: int
    n_total: int
    noise: float
    scheme: str
    shards_per_client: int
    exponent: float
    min_size: int
    algorithm: str
    clients: int
    active: int
    rounds: int
    eta: float
    beta: float
    allow_eta_override: bool
    gamma: float
    local_steps: int
    batch_size: int
    full_batch: bool
    schedule_kind: str
    reference_round: Optional[int]  # None = no inner-product reference

    def build_model(self) -> Model:
        if self.model_kind == "mlp1":
            return Model.mlp1(self.input_dim, self.hidden)
        if self.model_kind == "logistic":
            return Model.logistic(self.input_dim)
        return Model.least_squares(self.input_dim)

    def build_dataset(self) -> FederatedDataset:
        samples = generate_synthetic(
            self.model_kind, self.n_total, self.input_dim, self.seed,
            noise=self.noise, hidden=self.hidden,
        )
        spec = PartitionSpec(
            scheme=self.scheme,
            clients=self.clients,
            shards_per_client=self.shards_per_client,
            exponent=self.exponent,
            min_size=self.min_size,
            seed=self.seed,
        )
        return partition(samples, spec)

    def server_config(self) -> ServerConfig:
        return ServerConfig(
            algorithm=self.algorithm,
            clients=self.clients,
            active=self.active,
            rounds=self.rounds,
            eta=self.eta,
            beta=self.beta,
            seed=self.seed,
            allow_eta_override=self.allow_eta_override,
        )

    def local_config(self) -> LocalRunConfig:
        return LocalRunConfig(
            gamma=self.gamma,
            local_steps=self.local_steps,
            batch_size=self.batch_size,
            full_batch=self.full_batch,
        )

    def schedule_fn(self) -> Optional[Schedule]:
        if self.schedule_kind == "constant":
            return None
        gamma0, steps = self.gamma, self.local_steps
        return lambda t: (gamma0 / (t + 1), steps)


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    return value


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate the flat key-value format."""
    raw = dict(_DEFAULTS)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        raw[key] = value
    return _build_config(raw)


def _build_config(raw: dict) -> ExperimentConfig:
    seed = _parse_int("seed", raw["seed"])
    if seed < 0:
        raise ConfigError("seed: must be >= 0")
    clients = _parse_int("server.clients", raw["server.clients"])
    active = _parse_int("server.active", raw["server.active"])
    if clients < 1:
        raise ConfigError("server.clients: must be >= 1")
    if not 1 <= active <= clients:
        raise ConfigError(
            f"server.active: need 1 <= M <= K, got M={active} K={clients}"
        )
    eta_raw = raw["server.eta"]
    eta = clients / active if eta_raw == "" else _parse_float("server.eta", eta_raw)
    beta = _parse_float("server.beta", raw["server.beta"])
    if not 0 <= beta < 1:
        raise ConfigError(f"server.beta: must be in [0, 1), got {beta}")
    rounds = _parse_int("server.rounds", raw["server.rounds"])
    if rounds < 1:
        raise ConfigError("server.rounds: must be >= 1")
    allow_override = _parse_bool(
        "server.allow_eta_override", raw["server.allow_eta_override"]
    )
    if not allow_override and not 1.0 <= eta <= clients / active:
        raise ConfigError(
            f"server.eta: must lie in [1, K/M] = [1, {clients / active:g}], "
            f"got {eta}"
        )
    algorithm = raw["server.algorithm"]
    if algorithm not in ("fedsgd", "fedavg", "fedmom"):
        raise ConfigError(f"server.algorithm: unknown algorithm {algorithm!r}")
    model_kind = raw["model.kind"]
    if model_kind not in ("quadratic", "logistic", "mlp1"):
        raise ConfigError(f"model.kind: unknown kind {model_kind!r}")
    input_dim = _parse_int("model.input_dim", raw["model.input_dim"])
    if input_dim < 1:
        raise ConfigError("model.input_dim: must be >= 1")
    hidden = _parse_int("model.hidden", raw["model.hidden"])
    if model_kind == "mlp1" and hidden < 1:
        raise ConfigError("model.hidden: must be >= 1 for mlp1")
    n_total = _parse_int("data.n_total", raw["data.n_total"])
    if n_total < clients:
        raise ConfigError(
            f"data.n_total: need at least one sample per client, got "
            f"{n_total} for {clients} clients"
        )
    noise = _parse_float("data.noise", raw["data.noise"])
    if noise < 0:
        raise ConfigError("data.noise: must be >= 0")
    scheme = raw["partition.scheme"]
    if scheme not in ("iid", "label_shards", "powerlaw"):
        raise ConfigError(f"partition.scheme: unknown scheme {scheme!r}")
    shards_per_client = _parse_int(
        "partition.shards_per_client", raw["partition.shards_per_client"]
    )
    if shards_per_client < 1:
        raise ConfigError("partition.shards_per_client: must be >= 1")
    exponent = _parse_float("partition.exponent", raw["partition.exponent"])
    if exponent <= 0:
        raise ConfigError("partition.exponent: must be > 0")
    min_size = _parse_int("partition.min_size", raw["partition.min_size"])
    if min_size < 1:
        raise ConfigError("partition.min_size: must be >= 1")
    gamma = _parse_float("local.gamma", raw["local.gamma"])
    if gamma < 0:
        raise ConfigError("local.gamma: must be >= 0")
    local_steps = _parse_int("local.steps", raw["local.steps"])
    if local_steps < 1:
        raise ConfigError("local.steps: must be >= 1")
    batch_size = _parse_int("local.batch_size", raw["local.batch_size"])
    if batch_size < 1:
        raise ConfigError("local.batch_size: must be >= 1")
    full_batch = _parse_bool("local.full_batch", raw["local.full_batch"])
    schedule_kind = raw["schedule.kind"]
    if schedule_kind not in ("constant", "harmonic"):
        raise ConfigError(f"schedule.kind: unknown schedule {schedule_kind!r}")
    ref_raw = raw["diag.reference_round"].lower()
    if ref_raw in ("none", ""):
        reference_round = None
    elif ref_raw == "final":
        reference_round = rounds
    else:
        reference_round = _parse_int("diag.reference_round", ref_raw)
        if not 0 <= reference_round <= rounds:
            raise ConfigError(
                f"diag.reference_round: must be in [0, rounds={rounds}], "
                f"got {reference_round}"
            )
    return ExperimentConfig(
        seed=seed,
        output=raw["output"],
        model_kind=model_kind,
        input_dim=input_dim,
        hidden=hidden,
        n_total=n_total,
        noise=noise,
        scheme=scheme,
        shards_per_client=shards_per_client,
        exponent=exponent,
        min_size=min_size,
        algorithm=algorithm,
        clients=clients,
        active=active,
        rounds=rounds,
        eta=eta,
        beta=beta,
        allow_eta_override=allow_override,
        gamma=gamma,
        local_steps=local_steps,
        batch_size=batch_size,
        full_batch=full_batch,
        schedule_kind=schedule_kind,
        reference_round=reference_round,
    )


def load_config(path) -> ExperimentConfig:
    """Read, parse, and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return parse_config_text(text, source=str(path))


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, tuple):
        return ";".join(str(i) for i in value)
    return str(value)


def render_metrics(records: Sequence[RoundRecord]) -> str:
    """Serialize records to CSV text (UTF-8, LF, header always present)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for rec in records:
        writer.writerow([_format_cell(getattr(rec, f)) for f in METRICS_HEADER])
    return buf.getvalue()


def write_metrics(records: Sequence[RoundRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_metrics(records))


def read_metrics(path) -> list[RoundRecord]:
    """Parse a metrics CSV back into RoundRecords (exact float round-trip)."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ValueError(f"{path}: missing or wrong metrics header")
        records = []
        for row in reader:
            cells = dict(zip(METRICS_HEADER, row))
            records.append(
                RoundRecord(
                    t=int(cells["t"]),
                    loss=float(cells["loss"]),
                    grad_sq_norm=float(cells["grad_sq_norm"]),
                    g_norm=float(cells["g_norm"]),
                    inner_product=(
                        float(cells["inner_product"])
                        if cells["inner_product"] else None
                    ),
                    gamma=float(cells["gamma"]),
                    local_steps=int(cells["local_steps"]),
                    active_set=tuple(
                        int(i) for i in cells["active_set"].split(";") if i
                    ),
                    cum_gamma=float(cells["cum_gamma"]),
                    z_residual=(
                        float(cells["z_residual"]) if cells["z_residual"] else None
                    ),
                )
            )
    return records


@dataclass(frozen=True)
class MetricsFile:
    """A written metrics CSV: its path and the records it holds."""

    path: str
    records: tuple[RoundRecord, ...]


def execute(cfg: ExperimentConfig) -> TrainingRun:
    """Run the configured experiment and fill post-hoc diagnostics.

    The inner-product reference model is the trajectory's own model at
    `reference_round` (the convention is to use the final round of the run).
    """
    model = cfg.build_model()
    dataset = cfg.build_dataset()
    run = run_training(
        model,
        dataset,
        cfg.server_config(),
        cfg.local_config(),
        schedule=cfg.schedule_fn(),
    )
    if cfg.reference_round is not None:
        run.fill_inner_products(run.weights[cfg.reference_round])
    return run


def run_experiment(cfg: ExperimentConfig, out_path=None) -> MetricsFile:
    """Execute and serialize.  On divergence, writes the partial metrics to
    the same path and re-raises so callers can map it to an exit status."""
    path = str(out_path if out_path is not None else cfg.output)
    try:
        run = execute(cfg)
    except DivergenceError as err:
        partial = getattr(err, "partial", None)
        if partial is not None:
            write_metrics(partial.records, path)
        raise
    write_metrics(run.records, path)
    return MetricsFile(path=path, records=tuple(run.records))


SweepResult = namedtuple("SweepResult", ["value", "metrics", "error"])

_SWEEP_AXES = ("gamma", "H")


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence,
    out_dir=None,
) -> list[SweepResult]:
    """One run per axis value, shared seed; failures are isolated per run."""
    if axis not in _SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {_SWEEP_AXES}, got {axis!r}")
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    base, ext = os.path.splitext(cfg.output)
    results = []
    for value in values:
        if axis == "gamma":
            variant = replace(cfg, gamma=float(value))
        else:
            variant = replace(cfg, local_steps=int(value))
        name = f"{base}_{axis}{format(value, 'g')}{ext or '.csv'}"
        if out_dir is not None:
            name = os.path.join(str(out_dir), os.path.basename(name))
        try:
            metrics = run_experiment(variant, out_path=name)
            results.append(SweepResult(value=value, metrics=metrics, error=None))
        except (DivergenceError, ConfigError, ValueError) as err:
            results.append(SweepResult(value=value, metrics=None, error=err))
    return results


def initial_model(cfg: ExperimentConfig) -> ParamVector:
    """The starting parameters the configured run would use."""
    return init_params(
        cfg.build_model(), rngmod.substream(cfg.seed, rngmod.INIT)
    )
