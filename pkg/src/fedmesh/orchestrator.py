"""Full simulation loop: distribute, train, report, select, securely aggregate,
exchange across edges, centrally aggregate, evaluate.

Every source of randomness is drawn from a seed derived per (purpose, round,
actor id), so runs reproduce bit-for-bit and injecting an edge failure leaves
all earlier rounds byte-identical. The central aggregation step only receives
edge-level updates; client reports and raw client weights never cross that
boundary (see _central_step).
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import secagg, selection, trainer
from .aggregation import CrossEdgeConfig, EdgeUpdate, central_aggregate, cross_edge_exchange
from .data import Dataset, Partition, partition_noniid, shift_features, split
from .metrics import BinaryMetrics, RoundRecord, binary_metrics, jain_fairness
from .params import ParamVector, clip_l2, weighted_sum, zeros
from .secagg import DpConfig, FixedPointCodec
from .selection import ScoreWeights, SelectionConfig
from .trainer import AdversaryBehavior, ClientReport, LocalModelSpec

logger = logging.getLogger(__name__)

MODES = ("fedselect_me", "fedavg_single", "no_selection")

Evaluator = Callable[[ParamVector, np.ndarray, np.ndarray], BinaryMetrics]


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed for one purpose, independent of call order."""
    digest = hashlib.sha256(repr((master,) + parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class DataConfig:
    n_samples: int = 2000
    n_features: int = 10
    class_imbalance: float = 0.5
    label_noise: float = 0.35
    dirichlet_alpha: float = 0.5
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    edge_test_fraction: float = 0.2
    unknown_edge: int | None = None
    unknown_shift: float = 1.0
    csv_path: str | None = None
    label_column: str | None = None


@dataclass(frozen=True)
class TrainerConfig:
    local_epochs: int = 5
    learning_rate: float = 0.1
    batch_size: int = 32
    energy_alpha: float = trainer.DEFAULT_ENERGY_ALPHA
    energy_beta: float = trainer.DEFAULT_ENERGY_BETA


@dataclass(frozen=True)
class SecAggConfig:
    enabled: bool = True
    key_bits: int = secagg.DEFAULT_KEY_BITS
    scale: int = secagg.DEFAULT_SCALE
    clip_val: float | None = 1.0  # None disables update clipping
    noise_multiplier: float = 0.1
    mechanism: str = "gaussian"

    def __post_init__(self) -> None:
        if self.key_bits < 16:
            raise ValueError("secagg.key_bits too small")
        if self.scale < 1:
            raise ValueError("secagg.scale must be a positive integer")
        if self.noise_multiplier < 0:
            raise ValueError("secagg.noise_multiplier must be nonnegative")
        if self.clip_val is not None and not self.clip_val > 0:
            raise ValueError("secagg.clip_val must be positive or null")
        if self.noise_multiplier > 0 and self.clip_val is None:
            raise ValueError("secagg.noise_multiplier > 0 requires a finite clip_val")


@dataclass(frozen=True)
class AdversaryAssignment:
    client_id: int
    kind: str
    factor: float = 1.0

    def behavior(self) -> AdversaryBehavior:
        return AdversaryBehavior(kind=self.kind, factor=self.factor)  # type: ignore[arg-type]


@dataclass(frozen=True)
class SimulationConfig:
    n_edges: int = 5
    clients_per_edge: int = 4
    rounds_max: int = 10
    patience: int = 3
    min_delta: float = 1e-4
    seed: int = 0
    baseline_mode: str = "fedselect_me"
    decision_threshold: float = 0.5
    adversaries: tuple[AdversaryAssignment, ...] = ()
    edge_failures: tuple[tuple[int, int], ...] = ()  # (edge_id, round), rounds 1-based
    security_overrides: Mapping[int, float] = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    secagg: SecAggConfig = field(default_factory=SecAggConfig)
    aggregation: CrossEdgeConfig = field(default_factory=CrossEdgeConfig)

    @property
    def n_clients(self) -> int:
        return self.n_edges * self.clients_per_edge

    def validate(self) -> None:
        if self.n_edges < 1:
            raise ValueError("n_edges: must be >= 1")
        if self.clients_per_edge < 1:
            raise ValueError("clients_per_edge: must be >= 1")
        if self.rounds_max < 1:
            raise ValueError("rounds_max: must be >= 1")
        if self.patience < 0:
            raise ValueError("patience: must be >= 0")
        if self.min_delta < 0:
            raise ValueError("min_delta: must be >= 0")
        if self.baseline_mode not in MODES:
            raise ValueError(f"baseline_mode: must be one of {MODES}")
        for adv in self.adversaries:
            if not 0 <= adv.client_id < self.n_clients:
                raise ValueError(f"adversaries: client_id {adv.client_id} out of range")
            adv.behavior()  # validates kind/factor
        for edge_id, round_no in self.edge_failures:
            if not 0 <= edge_id < self.n_edges:
                raise ValueError(f"edge_failures: edge_id {edge_id} out of range")
            if round_no < 1:
                raise ValueError("edge_failures: round must be >= 1")
        if self.edge_failures and self.baseline_mode == "fedavg_single":
            raise ValueError("edge_failures: not applicable with a single virtual edge")
        for cid, s in self.security_overrides.items():
            if not 0 <= int(cid) < self.n_clients:
                raise ValueError(f"security_overrides: client_id {cid} out of range")
            if not 0.0 <= s <= 1.0:
                raise ValueError("security_overrides: values must lie in [0, 1]")
        if self.data.unknown_edge is not None and not 0 <= self.data.unknown_edge < self.n_edges:
            raise ValueError("data.unknown_edge: out of range")
        fractions = self.data.train_fraction + self.data.val_fraction + self.data.test_fraction
        if abs(fractions - 1.0) > 1e-9:
            raise ValueError("data: train/val/test fractions must sum to 1")


@dataclass
class SimulationResult:
    rounds: list[RoundRecord]
    final_global: ParamVector
    stopped_early: bool
    excluded_clients_log: list[dict]
    events: list[dict]
    initial_global: ParamVector


def evaluate(weights: ParamVector, features: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> BinaryMetrics:
    """Evaluate a parameter vector as the reference model on a labeled set."""
    return binary_metrics(trainer.predict_proba(weights, features), labels, threshold)


def inject_edge_failure(config: SimulationConfig, edge_id: int, round_no: int) -> SimulationConfig:
    """Return a config in which the given edge contributes nothing in that round."""
    if not 0 <= edge_id < config.n_edges:
        raise ValueError(f"edge {edge_id} does not exist (n_edges={config.n_edges})")
    if round_no < 1:
        raise ValueError("round must be >= 1")
    return replace(config, edge_failures=config.edge_failures + ((edge_id, round_no),))


class _SecureEdgeAggregator:
    """Per-edge secure aggregation state: keypair plus the shared codec."""

    def __init__(self, cfg: SecAggConfig, codec: FixedPointCodec, key_seed: int):
        self.cfg = cfg
        self.codec = codec
        if cfg.enabled:
            self.public_key, self.private_key = secagg.keygen(cfg.key_bits, key_seed)

    def mean_update(
        self,
        deltas: Sequence[ParamVector],
        weights: Sequence[int] | None,
        divisor: int,
        noise_seed: int,
    ) -> ParamVector:
        clip_val = self.cfg.clip_val if self.cfg.clip_val is not None else math.inf
        dp = DpConfig(
            clip_norm=clip_val if self.cfg.clip_val is not None else 1.0,
            noise_multiplier=self.cfg.noise_multiplier,
            mechanism=self.cfg.mechanism,
        )
        if self.cfg.enabled:
            ciphers = [secagg.encrypt_update(d, self.codec, self.public_key) for d in deltas]
            agg = secagg.aggregate_encrypted(
                ciphers, self.public_key, weights, self.codec.max_participants
            )
            return secagg.finalize_edge_update(
                agg, self.private_key, self.codec, divisor, dp, clip_val, noise_seed
            )
        # plaintext fallback: same mean/clip/noise semantics without encryption
        coeffs = [1.0] * len(deltas) if weights is None else [float(w) for w in weights]
        mean = weighted_sum([(c / divisor, d) for c, d in zip(coeffs, deltas)])
        clipped = clip_l2(mean, clip_val)
        noise = secagg.sample_dp_noise(dp, divisor, clipped.dim, noise_seed)
        return ParamVector(clipped.values + noise)


def _central_step(
    edge_updates: Sequence[EdgeUpdate],
    cross_config: CrossEdgeConfig,
    reference: ParamVector,
) -> tuple[ParamVector, list[tuple[int, ParamVector]]]:
    """Cross-edge exchange plus central aggregation.

    This is the only path to the global model; it accepts edge-level updates
    exclusively, which is what keeps client reports out of the central tier.
    """
    cross = cross_edge_exchange(edge_updates, cross_config, reference=reference)
    counts = {u.edge_id: u.sample_count for u in edge_updates}
    new_global = central_aggregate([(eid, model, counts[eid]) for eid, model in cross])
    return new_global, cross


def run_baseline(config: SimulationConfig, dataset: Dataset, evaluator: Evaluator | None = None) -> SimulationResult:
    """Run with the config's baseline_mode; logging schema matches run()."""
    return run(config, dataset, evaluator=evaluator)


@dataclass
class PreparedData:
    """Splits, partition, and per-client shards as the round loop sees them."""

    d_train: Dataset
    d_val: Dataset
    d_test: Dataset
    partition: Partition
    edge_clients: dict[int, list[int]]
    client_train: dict[int, np.ndarray]
    client_test: dict[int, np.ndarray]
    edge_test_rows: dict[int, np.ndarray]


def prepare_data(config: SimulationConfig, dataset: Dataset) -> PreparedData:
    """Split, partition, and shard the dataset exactly as run() will."""
    seed = config.seed
    d_train, d_val, d_test = split(
        dataset,
        config.data.train_fraction,
        config.data.val_fraction,
        config.data.test_fraction,
        derive_seed(seed, "split"),
    )
    partition = partition_noniid(
        d_train, config.n_edges, config.clients_per_edge, config.data.dirichlet_alpha, derive_seed(seed, "partition")
    )
    partition.validate()
    if config.data.unknown_edge is not None:
        shifted_rows = np.concatenate(
            [rows for rows in partition.assignments[config.data.unknown_edge].values()]
        )
        d_train = shift_features(d_train, shifted_rows, config.data.unknown_shift)

    # edge topology: fedavg_single collapses every client into one virtual edge
    if config.baseline_mode == "fedavg_single":
        edge_clients = {0: sorted(cid for clients in partition.assignments.values() for cid in clients)}
    else:
        edge_clients = {e: partition.client_ids(e) for e in sorted(partition.assignments)}
    client_rows = {
        cid: rows for clients in partition.assignments.values() for cid, rows in clients.items()
    }

    # per-client holdout feeding the edge-level test shards
    client_train: dict[int, np.ndarray] = {}
    client_test: dict[int, np.ndarray] = {}
    for cid, rows in client_rows.items():
        rng = np.random.default_rng(derive_seed(seed, "shard", cid))
        perm = rng.permutation(rows)
        n = len(perm)
        test_n = 0 if n < 2 else min(n - 1, max(1, round(config.data.edge_test_fraction * n)))
        client_test[cid] = np.sort(perm[:test_n])
        client_train[cid] = np.sort(perm[test_n:])
    edge_test_rows = {
        e: np.concatenate([client_test[c] for c in clients if len(client_test[c])] or [np.array([], dtype=np.int64)])
        for e, clients in edge_clients.items()
    }
    return PreparedData(
        d_train=d_train,
        d_val=d_val,
        d_test=d_test,
        partition=partition,
        edge_clients=edge_clients,
        client_train=client_train,
        client_test=client_test,
        edge_test_rows=edge_test_rows,
    )


def run(config: SimulationConfig, dataset: Dataset, evaluator: Evaluator | None = None) -> SimulationResult:
    """Execute the simulation and return per-round records plus audit logs."""
    config.validate()
    seed = config.seed
    threshold = config.decision_threshold
    if evaluator is None:
        evaluator = lambda w, x, y: evaluate(w, x, y, threshold)  # noqa: E731

    prep = prepare_data(config, dataset)
    d_train, d_val, d_test = prep.d_train, prep.d_val, prep.d_test
    edge_clients, client_train = prep.edge_clients, prep.client_train
    edge_test_rows = prep.edge_test_rows
    single_edge = config.baseline_mode == "fedavg_single"

    spec = LocalModelSpec(
        input_dim=dataset.n_features,
        local_epochs=config.trainer.local_epochs,
        learning_rate=config.trainer.learning_rate,
        batch_size=config.trainer.batch_size,
        energy_alpha=config.trainer.energy_alpha,
        energy_beta=config.trainer.energy_beta,
    )
    sel_cfg = replace(
        config.selection,
        energy_alpha=config.trainer.energy_alpha,
        energy_beta=config.trainer.energy_beta,
    )
    adversary_map = {a.client_id: a.behavior() for a in config.adversaries}
    security = {
        cid: float(config.security_overrides.get(cid, sel_cfg.default_security_index))
        for cid in client_train
    }
    failures: dict[int, set[int]] = {}
    for edge_id, round_no in config.edge_failures:
        failures.setdefault(round_no, set()).add(edge_id)

    total_train = sum(len(v) for v in client_train.values())
    codec = FixedPointCodec(
        scale=config.secagg.scale,
        max_participants=total_train + len(client_train) + 2,
    )
    aggregators = {
        e: _SecureEdgeAggregator(config.secagg, codec, derive_seed(seed, "keys", e))
        for e in edge_clients
    }

    global_model = zeros(spec.param_dim)
    initial_global = global_model
    score_weights: dict[int, ScoreWeights | None] = {e: None for e in edge_clients}

    rounds: list[RoundRecord] = []
    events: list[dict] = []
    excluded_log: list[dict] = []
    best_val = math.inf
    non_improving = 0
    stopped_early = False

    for round_no in range(1, config.rounds_max + 1):
        failed = failures.get(round_no, set())
        alive = [e for e in sorted(edge_clients) if e not in failed]
        for e in sorted(failed):
            events.append({"type": "edge_failure", "round": round_no, "edge": e})
        if not alive:
            raise RuntimeError(f"all edges failed in round {round_no}")

        edge_updates: list[EdgeUpdate] = []
        round_inconsistent: set[int] = set()
        round_outliers: set[int] = set()
        used_weights: dict[int, tuple[float, float, float]] = {}
        for e in alive:
            reports = []
            for cid in edge_clients[e]:
                trained = trainer.train_local(
                    global_model, spec, d_train, client_train[cid], derive_seed(seed, "train", round_no, cid)
                )
                reports.append(
                    trainer.build_report(
                        cid,
                        trained,
                        global_model,
                        spec,
                        len(client_train[cid]),
                        security[cid],
                        adversary_map.get(cid),
                        np.random.default_rng(derive_seed(seed, "behavior", round_no, cid)),
                    )
                )

            selected_ids, evaluations = _select_for_mode(
                config, sel_cfg, reports, global_model, score_weights, e, round_no, seed
            )
            round_inconsistent.update(
                ev.client_id for ev in evaluations if selection.FLAG_INCONSISTENT in ev.flags
            )
            round_outliers.update(
                ev.client_id for ev in evaluations if selection.FLAG_SCORE_OUTLIER in ev.flags
            )
            weights_now = score_weights[e]
            if weights_now is not None:
                used_weights[e] = weights_now.as_tuple()
            events.append(_selection_event(config, round_no, e, weights_now, selected_ids, evaluations))

            if evaluations and config.baseline_mode == "fedselect_me":
                means = (
                    float(np.mean([ev.estimated_utility for ev in evaluations])),
                    float(np.mean([ev.estimated_energy for ev in evaluations])),
                    float(np.mean([ev.security_index for ev in evaluations])),
                )
                assert weights_now is not None
                score_weights[e] = selection.update_weights(weights_now, means, sel_cfg.eta)

            if not selected_ids:
                logger.warning("round %d edge %d: no clients selected, edge skipped", round_no, e)
                continue
            by_id = {r.client_id: r for r in reports}
            deltas = [by_id[cid].weights - global_model for cid in selected_ids]
            if single_edge:
                int_weights = [by_id[cid].sample_count for cid in selected_ids]
                divisor = sum(int_weights)
            else:
                int_weights = None
                divisor = len(selected_ids)
            mean_update = aggregators[e].mean_update(
                deltas, int_weights, divisor, derive_seed(seed, "dp", round_no, e)
            )
            edge_updates.append(
                EdgeUpdate(
                    edge_id=e,
                    local_model=global_model + mean_update,
                    sample_count=sum(by_id[cid].sample_count for cid in selected_ids),
                )
            )

        if not edge_updates:
            raise RuntimeError(f"no edge produced an update in round {round_no}")
        new_global, cross = _central_step(edge_updates, config.aggregation, global_model)

        per_edge: dict[int, tuple[float, float]] = {}
        for eid, model in cross:
            rows = edge_test_rows[eid]
            if len(rows) == 0:
                continue
            m = evaluator(model, d_train.features[rows], d_train.labels[rows])
            per_edge[eid] = (m.accuracy, m.loss)
        val_m = evaluator(new_global, d_val.features, d_val.labels)
        test_m = evaluator(new_global, d_test.features, d_test.labels)
        accuracies = [acc for acc, _ in per_edge.values()]
        jfi = 1.0 if not any(accuracies) else jain_fairness(accuracies)

        rounds.append(
            RoundRecord(
                round=round_no,
                per_edge=per_edge,
                global_val=(val_m.loss, val_m.accuracy),
                global_test=(test_m.loss, test_m.accuracy, test_m.f1_macro, test_m.f1_weighted, test_m.auroc),
                jfi=jfi,
                score_weights=used_weights,
            )
        )
        excluded_log.append(
            {
                "round": round_no,
                "inconsistent": sorted(round_inconsistent),
                "score_outlier": sorted(round_outliers),
            }
        )
        global_model = new_global

        if val_m.loss < best_val - config.min_delta:
            best_val = val_m.loss
            non_improving = 0
        else:
            non_improving += 1
            if non_improving >= config.patience:
                stopped_early = round_no < config.rounds_max
                break

    return SimulationResult(
        rounds=rounds,
        final_global=global_model,
        stopped_early=stopped_early,
        excluded_clients_log=excluded_log,
        events=events,
        initial_global=initial_global,
    )


def _select_for_mode(
    config: SimulationConfig,
    sel_cfg: SelectionConfig,
    reports: list[ClientReport],
    edge_model: ParamVector,
    score_weights: dict[int, ScoreWeights | None],
    edge_id: int,
    round_no: int,
    seed: int,
) -> tuple[list[int], list[selection.ClientEvaluation]]:
    if config.baseline_mode == "no_selection":
        return [r.client_id for r in sorted(reports, key=lambda r: r.client_id)], []
    if config.baseline_mode == "fedavg_single":
        ids = sorted(r.client_id for r in reports)
        k = min(sel_cfg.capacity_k, len(ids))
        rng = np.random.default_rng(derive_seed(seed, "sample", round_no))
        return sorted(int(c) for c in rng.choice(ids, size=k, replace=False)), []

    if score_weights[edge_id] is None:
        triples = []
        for r in sorted(reports, key=lambda r: r.client_id):
            u, en = selection.estimate_metrics(r, edge_model, sel_cfg.energy_alpha, sel_cfg.energy_beta)
            triples.append((u, en, r.security_index))
        score_weights[edge_id] = selection.grid_search_init(triples, sel_cfg.grid_step)
    weights = score_weights[edge_id]
    assert weights is not None
    return selection.select_clients(reports, edge_model, weights, sel_cfg)


def _selection_event(
    config: SimulationConfig,
    round_no: int,
    edge_id: int,
    weights: ScoreWeights | None,
    selected: list[int],
    evaluations: list[selection.ClientEvaluation],
) -> dict:
    return {
        "type": "selection",
        "round": round_no,
        "edge": edge_id,
        "mode": config.baseline_mode,
        "score_weights": list(weights.as_tuple()) if weights is not None else None,
        "selected": list(selected),
        "flagged_inconsistent": sorted(
            ev.client_id for ev in evaluations if selection.FLAG_INCONSISTENT in ev.flags
        ),
        "flagged_score_outlier": sorted(
            ev.client_id for ev in evaluations if selection.FLAG_SCORE_OUTLIER in ev.flags
        ),
        "evaluations": [
            {
                "client": ev.client_id,
                "estimated_utility": ev.estimated_utility,
                "estimated_energy": ev.estimated_energy,
                "security_index": ev.security_index,
                "delta_u": ev.delta_u,
                "delta_e": ev.delta_e,
                "score": ev.score,
                "flags": sorted(ev.flags),
                "selected": ev.client_id in selected,
            }
            for ev in evaluations
        ],
    }
