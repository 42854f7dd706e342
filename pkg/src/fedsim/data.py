"""Synthetic datasets and their partitioning across clients.

Heterogeneity is produced two ways: label-sorted sharding (each client sees
a narrow slice of the label distribution) and power-law shard sizes (a few
large clients, a long tail of small ones).  Both are deterministic functions
of the partition seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .models import Batch, Sample

SCHEMES = ("iid", "label_shards", "powerlaw")


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a sample list across `clients` shards."""

    scheme: str
    clients: int
    shards_per_client: int = 2
    exponent: float = 1.0
    min_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if self.scheme == "label_shards" and self.shards_per_client < 1:
            raise ValueError("shards_per_client must be >= 1")
        if self.scheme == "powerlaw":
            if not self.exponent > 0:
                raise ValueError("powerlaw exponent must be > 0")
            if self.min_size < 1:
                raise ValueError("powerlaw min_size must be >= 1")


@dataclass(frozen=True)
class FederatedDataset:
    """Immutable per-client shards plus pooled views and n_k/n weights."""

    shards: tuple[Batch, ...]

    def __post_init__(self):
        if len(self.shards) == 0:
            raise ValueError("dataset needs at least one shard")
        dims = {s.input_dim for s in self.shards}
        if len(dims) != 1:
            raise ValueError(f"shards disagree on input_dim: {sorted(dims)}")
        if any(len(s) == 0 for s in self.shards):
            raise ValueError("every shard must hold at least one sample")
        object.__setattr__(self, "shards", tuple(self.shards))

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @cached_property
    def weights(self) -> np.ndarray:
        """n_k / n for each client; sums to 1 within 1e-12."""
        w = np.array(self.counts, dtype=np.float64) / self.total
        w.flags.writeable = False
        return w

    @cached_property
    def pooled(self) -> Batch:
        return Batch(
            np.concatenate([s.x for s in self.shards]),
            np.concatenate([s.y for s in self.shards]),
        )

    @property
    def input_dim(self) -> int:
        return self.shards[0].input_dim


def generate_synthetic(
    model_kind: str,
    n_total: int,
    input_dim: int,
    seed: int,
    noise: float = 0.1,
    hidden: int = 8,
) -> list[Sample]:
    """Deterministic samples from a planted model.

    Features are standard normal.  Targets: quadratic -> planted linear map
    plus additive noise of the given std; logistic -> sign of the planted
    margin, with `noise` as an independent label-flip probability; mlp1 ->
    planted random network output plus additive noise.
    """
    if n_total < 1 or input_dim < 1:
        raise ValueError("n_total and input_dim must be >= 1")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = rngmod.substream(seed, rngmod.DATA)
    x = rng.standard_normal((n_total, input_dim))
    if model_kind == "quadratic":
        planted = rng.standard_normal(input_dim)
        y = x @ planted + noise * rng.standard_normal(n_total)
    elif model_kind == "logistic":
        planted = rng.standard_normal(input_dim)
        margin = x @ planted
        y = np.where(margin >= 0.0, 1.0, -1.0)
        if noise > 0:
            flips = rng.random(n_total) < noise
            y = np.where(flips, -y, y)
    elif model_kind == "mlp1":
        w1 = rng.standard_normal((hidden, input_dim)) / np.sqrt(input_dim)
        b1 = rng.standard_normal(hidden)
        w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
        b2 = rng.standard_normal()
        y = np.tanh(x @ w1.T + b1) @ w2 + b2 + noise * rng.standard_normal(n_total)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return Batch(x, y).samples()


def _powerlaw_counts(n: int, spec: PartitionSpec) -> list[int]:
    k = spec.clients
    raw = (1.0 + np.arange(k)) ** (-spec.exponent)
    raw *= n / raw.sum()
    counts = np.floor(raw).astype(int)
    # hand the rounding remainder to the largest fractional parts
    short = n - int(counts.sum())
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    # clamp small shards up to min_size, taking from the current largest
    if n < k * spec.min_size:
        raise ValueError(
            f"cannot give {k} clients at least {spec.min_size} samples from {n}"
        )
    for i in range(k):
        while counts[i] < spec.min_size:
            j = int(np.argmax(counts))
            need = spec.min_size - counts[i]
            give = min(need, counts[j] - spec.min_size)
            if give <= 0:
                raise ValueError("powerlaw clamping failed to find a donor shard")
            counts[j] -= give
            counts[i] += give
    counts = np.sort(counts)[::-1]
    return [int(c) for c in counts]


def partition(samples: Sequence[Sample], spec: PartitionSpec) -> FederatedDataset:
    """Split samples into disjoint shards whose union is the input."""
    n = len(samples)
    if n < spec.clients:
        raise ValueError(f"{n} samples cannot cover {spec.clients} clients")
    rng = rngmod.substream(spec.seed, rngmod.PARTITION)
    batch = Batch.from_samples(list(samples))
    k = spec.clients
    if spec.scheme == "iid":
        order = rng.permutation(n)
        index_groups = np.array_split(order, k)
    elif spec.scheme == "label_shards":
        total_shards = k * spec.shards_per_client
        if total_shards > n:
            raise ValueError(
                f"{total_shards} label shards exceed {n} available samples"
            )
        by_label = np.argsort(batch.y, kind="stable")
        pieces = np.array_split(by_label, total_shards)
        deal = rng.permutation(total_shards)
        index_groups = [
            np.concatenate(
                [pieces[deal[c * spec.shards_per_client + s]]
                 for s in range(spec.shards_per_client)]
            )
            for c in range(k)
        ]
    else:  # powerlaw
        counts = _powerlaw_counts(n, spec)
        order = rng.permutation(n)
        index_groups = []
        start = 0
        for c in counts:
            index_groups.append(order[start : start + c])
            start += c
    shards = tuple(Batch(batch.x[g], batch.y[g]) for g in index_groups)
    return FederatedDataset(shards)


def partition_stats(dataset: FederatedDataset) -> tuple[float, float]:
    """Mean and population standard deviation of per-client sample counts."""
    counts = np.array(dataset.counts, dtype=np.float64)
    return float(counts.mean()), float(counts.std())


def load_csv_samples(path) -> list[Sample]:
    """Read samples from CSV: feature columns then one target column.

    The first row must be a header.  Malformed cells or ragged rows raise
    with the offending file line number.
    """
    samples: list[Sample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        if len(header) < 2:
            raise ValueError(f"{path}: need at least one feature and a target column")
        width = len(header)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(
                    f"{path}: row {line} has {len(row)} columns, expected {width}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise ValueError(f"{path}: row {line} has a non-numeric cell") from None
            samples.append(Sample(np.array(values[:-1]), values[-1]))
    if not samples:
        raise ValueError(f"{path}: no data rows")
    return samples
