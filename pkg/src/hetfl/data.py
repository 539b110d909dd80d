"""Synthetic public/local datasets and Dirichlet non-IID client partitioning.

Classes are isotropic Gaussian clusters. The public dataset and the local
dataset use independently drawn cluster centres, so they share no classes.
Both feed a joint classifier head: public classes occupy head positions
``[0, P)`` and local classes ``[P, P + L)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from hetfl.errors import DataError, ParameterError

PUBLIC = "public"
LOCAL = "local"


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    class_role: str
    head_offset: int = 0

    def __post_init__(self):
        if self.class_role not in (PUBLIC, LOCAL):
            raise ParameterError(f"class_role must be 'public' or 'local', got {self.class_role!r}")
        if len(self.inputs) != len(self.labels):
            raise DataError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def head_labels(self) -> np.ndarray:
        """Labels shifted to their position in the joint output head."""
        return self.labels + self.head_offset

    @property
    def class_slice(self) -> tuple[int, int]:
        return self.head_offset, self.head_offset + self.class_count

    def subset(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.inputs[indices], self.labels[indices],
                              self.class_count, self.class_role, self.head_offset)


@dataclass(frozen=True)
class PartitionSpec:
    alpha: float
    client_count: int
    rng_seed: int = 0
    # redraw the whole allocation until every shard holds at least this many examples
    min_shard_size: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if self.client_count < 1:
            raise ParameterError(f"client_count must be >= 1, got {self.client_count}")
        if self.min_shard_size < 0:
            raise ParameterError(f"min_shard_size must be >= 0, got {self.min_shard_size}")


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray
    per_class_counts: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.indices)


def generate_synthetic(
    public_classes: int = 20,
    local_classes: int = 10,
    per_class_count: int = 100,
    input_dim: int = 16,
    cluster_spread: float = 1.0,
    rng_seed: int = 0,
    *,
    test_per_class: int | None = None,
    public_per_class: int | None = None,
    mean_scale: float = 1.0,
    public_spread: float | None = None,
    mean_rank: int | None = None,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Return ``(public, local_train, local_test)``.

    ``test_per_class`` defaults to half of ``per_class_count`` and
    ``public_per_class`` to ``per_class_count``. Cluster centres are drawn
    from ``N(0, mean_scale**2 I)``; samples add ``N(0, cluster_spread**2 I)``.
    Public samples use ``public_spread`` (default ``cluster_spread``); a wider
    public cloud covers more of the region where local inputs live.
    """
    test_per_class = max(1, per_class_count // 2) if test_per_class is None else test_per_class
    public_per_class = per_class_count if public_per_class is None else public_per_class
    counts = dict(public_classes=public_classes, local_classes=local_classes,
                  per_class_count=per_class_count, input_dim=input_dim,
                  test_per_class=test_per_class, public_per_class=public_per_class)
    for name, value in counts.items():
        if int(value) < 1:
            raise ParameterError(f"{name} must be positive, got {value}")
    public_spread = cluster_spread if public_spread is None else public_spread
    if not (cluster_spread > 0 and public_spread > 0):
        raise ParameterError(f"spreads must be > 0, got {cluster_spread}, {public_spread}")

    seeds = np.random.SeedSequence(rng_seed).spawn(6)
    rank = input_dim if mean_rank is None else mean_rank
    if not 1 <= rank <= input_dim:
        raise ParameterError(f"mean_rank must lie in [1, {input_dim}], got {mean_rank}")
    # orthonormal basis of the subspace shared by all class centres
    basis = np.linalg.qr(np.random.default_rng(seeds[5]).normal(size=(input_dim, rank)))[0].T
    if rank == input_dim:
        basis = np.eye(input_dim)
    scale = mean_scale * np.sqrt(input_dim / rank)
    public_means = np.random.default_rng(seeds[0]).normal(0.0, scale, (public_classes, rank)) @ basis
    local_means = np.random.default_rng(seeds[1]).normal(0.0, scale, (local_classes, rank)) @ basis

    def draw(means, per_class, seed, spread=cluster_spread):
        rng = np.random.default_rng(seed)
        labels = np.repeat(np.arange(len(means)), per_class)
        inputs = means[labels] + rng.normal(0.0, spread, (len(labels), input_dim))
        return inputs, labels

    x, y = draw(public_means, public_per_class, seeds[2], public_spread)
    public = LabeledDataset(x, y, public_classes, PUBLIC, head_offset=0)
    x, y = draw(local_means, per_class_count, seeds[3])
    train = LabeledDataset(x, y, local_classes, LOCAL, head_offset=public_classes)
    x, y = draw(local_means, test_per_class, seeds[4])
    test = LabeledDataset(x, y, local_classes, LOCAL, head_offset=public_classes)
    return public, train, test


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort: ties go to the lower client id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _allocate(labels: np.ndarray, class_count: int, spec: PartitionSpec,
              rng: np.random.Generator) -> list[np.ndarray]:
    buckets: list[list[np.ndarray]] = [[] for _ in range(spec.client_count)]
    for c in range(class_count):
        members = np.flatnonzero(labels == c)
        props = rng.dirichlet(np.full(spec.client_count, spec.alpha))
        counts = _largest_remainder(props, len(members))
        members = rng.permutation(members)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(spec.client_count):
            buckets[k].append(members[bounds[k]:bounds[k + 1]])
    return [np.sort(np.concatenate(b)) for b in buckets]


def partition_dirichlet(dataset: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    """Split ``dataset`` across clients with per-class Dirichlet(alpha) proportions.

    Every example lands in exactly one shard. If ``spec.min_shard_size`` is
    set, the allocation is redrawn (deterministically) until all shards meet it.
    """
    if len(dataset) == 0:
        raise DataError("cannot partition an empty dataset")
    if dataset.class_role != LOCAL:
        raise DataError("only local datasets are partitioned across clients")
    if spec.min_shard_size * spec.client_count > len(dataset):
        raise ParameterError(
            f"{spec.client_count} shards of at least {spec.min_shard_size} exceed "
            f"dataset size {len(dataset)}")
    rng = np.random.default_rng(spec.rng_seed)
    for _ in range(spec.max_attempts):
        parts = _allocate(dataset.labels, dataset.class_count, spec, rng)
        if min(len(p) for p in parts) >= spec.min_shard_size:
            break
    else:
        raise DataError(f"no allocation with min_shard_size={spec.min_shard_size} "
                        f"after {spec.max_attempts} draws")
    return [
        ClientShard(k, idx, np.bincount(dataset.labels[idx], minlength=dataset.class_count))
        for k, idx in enumerate(parts)
    ]


def sample_public_subset(public: LabeledDataset, count: int, round_index: int,
                         base_seed: int) -> LabeledDataset:
    """Uniform sample without replacement, reproducible per ``(base_seed, round_index)``."""
    if count > len(public):
        raise ParameterError(f"subset size {count} exceeds public size {len(public)}")
    if count < 1:
        raise ParameterError(f"subset size must be positive, got {count}")
    rng = np.random.default_rng([base_seed, round_index])
    idx = np.sort(rng.choice(len(public), size=count, replace=False))
    return public.subset(idx)


def partition_report(shards: list[ClientShard]) -> list[tuple[int, int, int]]:
    """``(client_id, class, count)`` rows ordered by client then class."""
    rows = []
    for shard in sorted(shards, key=lambda s: s.client_id):
        for c, n in enumerate(shard.per_class_counts):
            rows.append((int(shard.client_id), c, int(n)))
    return rows


def partition_report_csv(shards: list[ClientShard]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client_id", "class", "count"])
    writer.writerows(partition_report(shards))
    return buf.getvalue()


def max_class_share(shards: list[ClientShard]) -> float:
    """Mean over non-empty shards of the largest single-class fraction."""
    shares = [s.per_class_counts.max() / len(s) for s in shards if len(s)]
    return float(np.mean(shares))
