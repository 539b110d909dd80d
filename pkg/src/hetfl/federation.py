"""Round orchestration for KD-based heterogeneous FL and the FedAvg baseline.

Each FedMD+Global round has two barrier-separated stages:

1. global update -- clients score a fresh public subset, the server averages
   the logits, and the global model plus every client model regress onto
   that average with the L1 logit loss;
2. local update -- each client trains on its own shard with cross-entropy,
   optionally regularised towards its post-distillation snapshot (LwoF).

All randomness is derived from ``(seed, stage, round, client)`` so results do
not depend on the order (or thread) in which clients are processed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from hetfl.data import (
    ClientShard,
    LabeledDataset,
    PartitionSpec,
    generate_synthetic,
    partition_dirichlet,
    sample_public_subset,
)
from hetfl.errors import ConfigError, HetFLError, ProtocolError
from hetfl.metrics import EvalReport, RoundRecord, evaluate_accuracy, summarize
from hetfl.nn import (
    L1Distill,
    LocalCombined,
    ModelArch,
    ModelParams,
    TaskCE,
    TrainConfig,
    forward_logits,
    init_params,
    train,
)

METHODS = ("fedmd_global", "fedmd_global_lwof", "fedavg")
DROPOUT_POLICIES = ("random_per_round", "fixed_lowest_capacity")

# hidden-layer counts standing in for WRN depths 10, 16, 22, 28, 34, 40
DEPTH_FAMILY = (1, 2, 3, 4, 5, 6)
WRN_DEPTH = {10: 1, 16: 2, 22: 3, 28: 4, 34: 5, 40: 6}
# 20-client tiering: clients 0-5, 6-9, 10-13, 14-17, 18-19
DEFAULT_TIERS = ((1, 6), (2, 4), (3, 4), (4, 4), (5, 2))
GLOBAL_DEPTH = 6
# seed-derivation id of the server model, outside any client id range
GLOBAL_ID = 2**31 - 1

# stage codes for seed derivation
_INIT_MODEL, _INIT_PUBLIC, _INIT_LOCAL, _KD, _LOCAL, _PUBLIC_SUBSET, _DROPOUT, _PARTITION = range(8)


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


class ExperimentError(HetFLError, RuntimeError):
    def __init__(self, message: str, stage: str, round_index: int | None):
        super().__init__(message)
        self.stage = stage
        self.round_index = round_index


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "fedmd_global"
    rounds: int = 50
    clients: int = 20
    alpha: float = 0.1
    local_epochs: int = 5
    kd_epochs: int = 5
    init_epochs: int = 20
    public_subset_size: int = 400
    participation: float = 1.0
    dropout_policy: str = "random_per_round"
    beta: float = 1.0
    rho: float = 2.0
    # desk-scale optimisation: batches shrink with the data so an epoch keeps
    # a comparable number of steps; distillation uses its own smaller rate
    lr: float = 0.03
    kd_lr: float | None = 0.01
    kd_batch_size: int = 8
    local_batch_size: int = 8
    seed: int = 0
    data_seed: int = 0
    dropout_seed: int = 0
    # synthetic task
    public_classes: int = 20
    local_classes: int = 10
    input_dim: int = 16
    train_per_class: int = 100
    test_per_class: int = 50
    public_per_class: int = 100
    cluster_spread: float = 1.0
    mean_scale: float = 1.0
    public_spread: float = 1.0
    mean_rank: int = 4
    min_shard_size: int = 1
    # model family
    hidden_width: int = 32
    global_depth: int = GLOBAL_DEPTH
    client_depths: tuple[int, ...] | None = None
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: expected one of {METHODS}, got {self.method!r}")
        if self.dropout_policy not in DROPOUT_POLICIES:
            raise ConfigError(f"dropout_policy: expected one of {DROPOUT_POLICIES}, "
                              f"got {self.dropout_policy!r}")
        if not 0 < self.participation <= 1:
            raise ConfigError(f"participation: must lie in (0, 1], got {self.participation}")
        positive = ("clients", "lr", "kd_batch_size", "local_batch_size", "public_subset_size",
                    "public_classes", "local_classes", "input_dim", "train_per_class",
                    "test_per_class", "public_per_class", "cluster_spread", "mean_scale", "public_spread",
                    "hidden_width", "alpha", "rho", "workers")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("rounds", "local_epochs", "kd_epochs", "init_epochs", "min_shard_size", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.public_subset_size > self.public_classes * self.public_per_class:
            raise ConfigError("public_subset_size: exceeds public dataset size")
        if self.kd_lr is not None and not self.kd_lr > 0:
            raise ConfigError(f"kd_lr: must be positive, got {self.kd_lr}")
        if self.global_depth not in DEPTH_FAMILY:
            raise ConfigError(f"global_depth: {self.global_depth} not in {DEPTH_FAMILY}")
        if self.client_depths is not None:
            if len(self.client_depths) != self.clients:
                raise ConfigError(f"client_depths: {len(self.client_depths)} entries "
                                  f"for {self.clients} clients")
            bad = [d for d in self.client_depths if d not in DEPTH_FAMILY]
            if bad:
                raise ConfigError(f"client_depths: {bad} not in {DEPTH_FAMILY}")

    @property
    def output_dim(self) -> int:
        return self.public_classes + self.local_classes

    @property
    def distill_lr(self) -> float:
        return self.lr if self.kd_lr is None else self.kd_lr

    @property
    def lwof(self) -> bool:
        return self.method == "fedmd_global_lwof"

    def replace(self, **changes) -> ExperimentConfig:
        return ExperimentConfig(**{**asdict(self), **changes})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ClientState:
    client_id: int
    model: ModelParams
    shard: ClientShard
    lwof_snapshot: ModelParams | None = None
    last_global_round: int | None = None


@dataclass
class ServerState:
    global_model: ModelParams
    aggregated_logits: np.ndarray | None = None
    public_subset: LabeledDataset | None = None
    round_index: int = 0


def default_depth_assignment(n_clients: int) -> list[int]:
    """Scale the 6/4/4/4/2 tiering to ``n_clients`` by largest remainder."""
    weights = np.array([n for _, n in DEFAULT_TIERS], dtype=float)
    raw = weights / weights.sum() * n_clients
    sizes = np.floor(raw).astype(int)
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[: n_clients - sizes.sum()]] += 1
    return [depth for (depth, _), size in zip(DEFAULT_TIERS, sizes) for _ in range(size)]


def client_depths(config: ExperimentConfig) -> list[int]:
    if config.method == "fedavg":
        return [config.global_depth] * config.clients
    if config.client_depths is not None:
        return list(config.client_depths)
    return default_depth_assignment(config.clients)


def make_arch(config: ExperimentConfig, depth: int) -> ModelArch:
    if depth not in DEPTH_FAMILY:
        raise ConfigError(f"depth {depth} not in family {DEPTH_FAMILY}")
    return ModelArch(config.input_dim, depth, config.hidden_width, config.output_dim)


def build_global_model(config: ExperimentConfig) -> ModelParams:
    return init_params(make_arch(config, config.global_depth), derive_seed(config.seed, _INIT_MODEL, GLOBAL_ID))


def build_hetero_clients(config: ExperimentConfig, shards: list[ClientShard],
                         depths: list[int] | None = None) -> list[ClientState]:
    depths = client_depths(config) if depths is None else list(depths)
    if len(depths) != len(shards):
        raise ConfigError(f"{len(depths)} depths for {len(shards)} shards")
    return [
        ClientState(k, init_params(make_arch(config, d), derive_seed(config.seed, _INIT_MODEL, k)), shard)
        for k, (d, shard) in enumerate(zip(depths, shards))
    ]


def capacity_summary(config: ExperimentConfig) -> dict:
    """Trainable-parameter totals for the heterogeneous family vs FedAvg participants."""
    client_params = [make_arch(config, d).param_count() for d in client_depths(config)]
    global_params = make_arch(config, config.global_depth).param_count()
    return {"client_params": client_params, "global_params": global_params,
            "total": sum(client_params) + global_params}


def _pmap(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _local_view(train_set: LabeledDataset, shard: ClientShard) -> LabeledDataset:
    return train_set.subset(shard.indices)


def initialize_clients(clients: list[ClientState], public: LabeledDataset,
                       local_train: LabeledDataset, local_test: LabeledDataset,
                       config: ExperimentConfig, init_epochs: int | None = None,
                       use_public: bool = True) -> list[float]:
    """Pre-FL training: public CE then local CE, ``init_epochs`` each.

    Updates ``clients`` in place and returns each client's local-test accuracy.
    """
    epochs = config.init_epochs if init_epochs is None else init_epochs

    def run(client: ClientState) -> ModelParams:
        if client.shard is None:
            raise ConfigError(f"client {client.client_id} has no shard")
        model = client.model
        if use_public and epochs:
            cfg = TrainConfig(config.lr, config.kd_batch_size, epochs,
                              derive_seed(config.seed, _INIT_PUBLIC, client.client_id))
            model = train(model, public.inputs, TaskCE(public.head_labels), cfg)
        local = _local_view(local_train, client.shard)
        if epochs and len(local):
            cfg = TrainConfig(config.lr, config.local_batch_size, epochs,
                              derive_seed(config.seed, _INIT_LOCAL, client.client_id))
            model = train(model, local.inputs, TaskCE(local.head_labels), cfg)
        return model

    for client, model in zip(clients, _pmap(run, clients, config.workers)):
        client.model = model
    return [evaluate_accuracy(c.model, local_test) for c in clients]


def collect_and_aggregate_logits(clients: list[ClientState],
                                 public_subset: LabeledDataset) -> np.ndarray:
    """Arithmetic mean of client logits, summed in ascending client-id order."""
    if not clients:
        raise ConfigError("at least one client is required for aggregation")
    ordered = sorted(clients, key=lambda c: c.client_id)
    total = None
    for c in ordered:
        z = forward_logits(c.model, public_subset.inputs)
        total = z.copy() if total is None else total + z
    return total / len(ordered)


def global_update_round(server: ServerState, clients: list[ClientState],
                        config: ExperimentConfig, local_test: LabeledDataset,
                        round_index: int) -> tuple[float, list[float]]:
    """Distil the global model and all clients towards ``server.aggregated_logits``.

    Returns ``(global_acc, distilled_accs)``; with LwoF enabled every client's
    snapshot is refreshed to its freshly distilled model.
    """
    if server.aggregated_logits is None or server.public_subset is None:
        raise ProtocolError("global update requires aggregated logits for this round")
    inputs = server.public_subset.inputs
    objective = L1Distill(server.aggregated_logits)

    def distil(item: tuple[int, ModelParams]) -> ModelParams:
        model_id, model = item
        cfg = TrainConfig(config.distill_lr, config.kd_batch_size, config.kd_epochs,
                          derive_seed(config.seed, _KD, round_index, model_id))
        return train(model, inputs, objective, cfg)

    jobs = [(GLOBAL_ID, server.global_model)] + [(c.client_id, c.model) for c in clients]
    results = _pmap(distil, jobs, config.workers)
    server.global_model = results[0]
    for client, model in zip(clients, results[1:]):
        client.model = model
        client.last_global_round = round_index
        if config.lwof:
            client.lwof_snapshot = model.copy()
    global_acc = evaluate_accuracy(server.global_model, local_test)
    return global_acc, [evaluate_accuracy(c.model, local_test) for c in clients]


def local_update_round(clients: list[ClientState], config: ExperimentConfig,
                       local_train: LabeledDataset, local_test: LabeledDataset,
                       round_index: int, lwof: bool | None = None) -> list[float]:
    """Personalise every client on its shard; returns post-update accuracies."""
    lwof = config.lwof if lwof is None else lwof
    for c in clients:
        if c.last_global_round is None:
            raise ProtocolError(f"client {c.client_id}: local update before any global update")
        if lwof and c.lwof_snapshot is None:
            raise ProtocolError(f"client {c.client_id}: LwoF enabled but no snapshot taken")

    def personalise(client: ClientState) -> ModelParams:
        local = _local_view(local_train, client.shard)
        if not len(local):
            return client.model
        labels = local.head_labels
        if lwof:
            snap = forward_logits(client.lwof_snapshot, local.inputs)
            objective = LocalCombined(labels, snap, config.rho, config.beta)
        else:
            objective = TaskCE(labels)
        cfg = TrainConfig(config.lr, config.local_batch_size, config.local_epochs,
                          derive_seed(config.seed, _LOCAL, round_index, client.client_id))
        return train(client.model, local.inputs, objective, cfg)

    for client, model in zip(clients, _pmap(personalise, clients, config.workers)):
        client.model = model
    return [evaluate_accuracy(c.model, local_test) for c in clients]


def select_participants(clients: list[ClientState], config: ExperimentConfig,
                        round_index: int, capacity: list[int] | None = None) -> list[int]:
    """Client ids taking part in a FedAvg round, ``ceil(participation * N)`` of them."""
    n = len(clients)
    m = min(n, math.ceil(round(config.participation * n, 9)))
    ids = sorted(c.client_id for c in clients)
    if m == n:
        return ids
    if config.dropout_policy == "random_per_round":
        rng = np.random.default_rng(derive_seed(config.dropout_seed, _DROPOUT, round_index))
        return sorted(int(i) for i in rng.choice(ids, size=m, replace=False))
    # fixed_lowest_capacity: keep the m most capable devices, ties to the lower id
    capacity = default_depth_assignment(n) if capacity is None else capacity
    ranked = sorted(ids, key=lambda i: (-capacity[ids.index(i)], i))
    return sorted(ranked[:m])


def weighted_average(models: list[ModelParams], weights: list[float]) -> ModelParams:
    # normalise first so a single participant is reproduced exactly
    total = math.fsum(weights)
    coef = [w / total for w in weights]
    layers = []
    for k in range(len(models[0].layers)):
        w_acc = sum(c * m.layers[k][0] for m, c in zip(models, coef))
        b_acc = sum(c * m.layers[k][1] for m, c in zip(models, coef))
        layers.append((w_acc, b_acc))
    return ModelParams(models[0].arch, layers)


def fedavg_round(server: ServerState, clients: list[ClientState], config: ExperimentConfig,
                 local_train: LabeledDataset, local_test: LabeledDataset,
                 round_index: int) -> RoundRecord:
    """Broadcast, local CE training on the participants, shard-size weighted averaging."""
    arch = server.global_model.arch
    if any(c.model.arch != arch for c in clients):
        raise ConfigError("fedavg requires every client to share the global architecture")
    chosen = set(select_participants(clients, config, round_index))
    participants = [c for c in sorted(clients, key=lambda c: c.client_id)
                    if c.client_id in chosen and len(c.shard)]

    def fit(client: ClientState) -> ModelParams:
        local = _local_view(local_train, client.shard)
        cfg = TrainConfig(config.lr, config.local_batch_size, config.local_epochs,
                          derive_seed(config.seed, _LOCAL, round_index, client.client_id))
        return train(server.global_model.copy(), local.inputs, TaskCE(local.head_labels), cfg)

    for client, model in zip(participants, _pmap(fit, participants, config.workers)):
        client.model = model
    if participants:
        server.global_model = weighted_average([c.model for c in participants],
                                               [float(len(c.shard)) for c in participants])
    server.round_index = round_index
    acc = evaluate_accuracy(server.global_model, local_test)
    # no distillation stage: both client columns carry the broadcast model's accuracy
    ids = sorted(chosen)
    return RoundRecord.from_accs(round_index, acc, [acc] * len(ids), [acc] * len(ids), ids)


def fedmd_round(server: ServerState, clients: list[ClientState], config: ExperimentConfig,
                public: LabeledDataset, local_train: LabeledDataset,
                local_test: LabeledDataset, round_index: int) -> RoundRecord:
    subset = sample_public_subset(public, config.public_subset_size, round_index,
                                  derive_seed(config.seed, _PUBLIC_SUBSET))
    server.public_subset = subset
    server.aggregated_logits = collect_and_aggregate_logits(clients, subset)
    server.round_index = round_index
    global_acc, distilled = global_update_round(server, clients, config, local_test, round_index)
    personalised = local_update_round(clients, config, local_train, local_test, round_index)
    return RoundRecord.from_accs(round_index, global_acc, distilled, personalised,
                                 [c.client_id for c in clients])


def make_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """``(public, local_train, local_test)`` for the configured synthetic task."""
    return generate_synthetic(
        config.public_classes, config.local_classes, config.train_per_class,
        config.input_dim, config.cluster_spread, config.data_seed,
        test_per_class=config.test_per_class, public_per_class=config.public_per_class,
        mean_scale=config.mean_scale, public_spread=config.public_spread,
        mean_rank=config.mean_rank)


def partition_spec(config: ExperimentConfig) -> PartitionSpec:
    return PartitionSpec(config.alpha, config.clients,
                         derive_seed(config.data_seed, _PARTITION), config.min_shard_size)


@dataclass
class Experiment:
    """Everything a run needs, built deterministically from an ExperimentConfig."""

    config: ExperimentConfig
    public: LabeledDataset
    local_train: LabeledDataset
    local_test: LabeledDataset
    shards: list[ClientShard]
    server: ServerState
    clients: list[ClientState]

    @classmethod
    def setup(cls, config: ExperimentConfig) -> Experiment:
        public, local_train, local_test = make_datasets(config)
        shards = partition_dirichlet(local_train, partition_spec(config))
        server = ServerState(build_global_model(config))
        clients = build_hetero_clients(config, shards)
        if config.method == "fedavg":
            for c in clients:
                c.model = server.global_model.copy()
        return cls(config, public, local_train, local_test, shards, server, clients)

    def initialize(self) -> list[float]:
        return initialize_clients(self.clients, self.public, self.local_train, self.local_test,
                                  self.config, use_public=self.config.method != "fedavg")

    def round(self, round_index: int) -> RoundRecord:
        if self.config.method == "fedavg":
            return fedavg_round(self.server, self.clients, self.config, self.local_train,
                                self.local_test, round_index)
        return fedmd_round(self.server, self.clients, self.config, self.public,
                           self.local_train, self.local_test, round_index)


def run_experiment(config: ExperimentConfig,
                   on_round: Callable[[RoundRecord], None] | None = None
                   ) -> tuple[list[RoundRecord], EvalReport]:
    """Initialise, then run ``config.rounds`` rounds (numbered from 1)."""
    try:
        exp = Experiment.setup(config)
    except HetFLError as e:
        raise ExperimentError(f"setup: {e}", "setup", None) from e
    try:
        initial = exp.initialize()
    except HetFLError as e:
        raise ExperimentError(f"initialization: {e}", "initialization", 0) from e
    records: list[RoundRecord] = []
    for r in range(1, config.rounds + 1):
        try:
            rec = exp.round(r)
        except HetFLError as e:
            raise ExperimentError(f"round {r}: {e}", "round", r) from e
        records.append(rec)
        if on_round is not None:
            on_round(rec)
    return records, summarize(records, initial)
