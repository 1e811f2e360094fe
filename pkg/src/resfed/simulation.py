"""Deterministic federated training loop with pluggable attacks.

A run is fully determined by (config, seed): every participant draws its
training randomness from a stream derived from the master seed, the round
index and its own id, so honest participants train identically whether or
not anyone else attacks. Metrics go to CSV with a fixed column set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .aggregation import AggregatorSpec, ConfidenceParams, ScalarEnsemble, aggregate, scalar_global
from .attacks import (
    AttackSpec,
    batch_poisoner,
    flip_labels,
    gaussian_noise,
    mix_models,
    replacement_scale,
)
from .config import ExperimentConfig
from .datasets import Dataset, Partition, load_mnist_idx, partition_dirichlet, partition_shards, synth_blobs
from .models import FlatModel, ModelArch, TrainConfig, attack_success_rate, evaluate, init_model, sgd_train
from .updatefile import read_update_file, write_update_file

__all__ = [
    "MetricsRow",
    "BoundRow",
    "FederatedSimulation",
    "METRICS_HEADER",
    "SWEEP_HEADER",
    "BOUND_HEADER",
    "resolve_attackers",
    "run_experiment",
    "sweep",
    "aggregate_file",
    "bound_experiment",
    "metrics_csv_lines",
    "write_metrics_csv",
    "write_sweep_csv",
    "write_bound_csv",
]

METRICS_HEADER = "round,aggregator,attack,num_attackers,accuracy,asr,seed,wall_ms"
SWEEP_HEADER = "lambda,delta," + METRICS_HEADER
BOUND_HEADER = "S,K,alpha,trials,median_abs_error,outside_honest_range"

# Sub-stream tags for deriving independent generators from the master seed.
_TAG_INIT = 0
_TAG_DATA = 1
_TAG_TEST = 2
_TAG_PARTITION = 3
_TAG_TRAIN = 4
_TAG_ATTACK = 5
_TAG_REPEAT = 6

_BACKDOOR_DEFAULT_LR = 0.1


def _derive(master: int, *parts: int) -> int:
    seq = np.random.SeedSequence([int(master), *[int(p) for p in parts]])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class MetricsRow:
    """One aggregated round: what ran and how the global model scored."""

    round: int
    aggregator: str
    attack: str
    num_attackers: int
    accuracy: float
    attack_success_rate: float | None
    seed: int
    wall_ms: int

    def csv(self) -> str:
        asr = "" if self.attack_success_rate is None else repr(self.attack_success_rate)
        return (
            f"{self.round},{self.aggregator},{self.attack},{self.num_attackers},"
            f"{self.accuracy!r},{asr},{self.seed},{self.wall_ms}"
        )


@dataclass(frozen=True)
class BoundRow:
    """Median absolute error of the scalar combiner at one (S, K) point."""

    s: int
    k: int
    alpha: float
    trials: int
    median_abs_error: float
    outside_honest_range: int

    def csv(self) -> str:
        return (
            f"{self.s},{self.k},{self.alpha!r},{self.trials},"
            f"{self.median_abs_error!r},{self.outside_honest_range}"
        )


def resolve_attackers(cfg: ExperimentConfig, partition: Partition, labels: np.ndarray) -> tuple[int, ...]:
    """Fix the attacker id set for a run.

    Explicit id lists pass through. A bare count prefers participants holding
    the attack's source label (lowest ids first), then fills with the lowest
    remaining ids, so flip attacks hit participants that actually own
    flippable samples.
    """
    if not isinstance(cfg.attackers, int):
        return cfg.attackers
    count = cfg.attackers
    if count == 0:
        return ()
    chosen: list[int] = []
    if cfg.attack.src_label is not None:
        for k, idx in enumerate(partition.assignments):
            if np.any(labels[idx] == cfg.attack.src_label):
                chosen.append(k)
            if len(chosen) == count:
                break
    for k in range(cfg.participants):
        if len(chosen) == count:
            break
        if k not in chosen:
            chosen.append(k)
    return tuple(sorted(chosen[:count]))


class FederatedSimulation:
    """One experiment instance: data, partition, attackers, round loop."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.train_ds, self.test_ds = self._build_data(cfg)
        self.partition = self._build_partition(cfg, self.train_ds)
        self.attackers = frozenset(resolve_attackers(cfg, self.partition, self.train_ds.labels))
        self.arch = ModelArch(
            input_dim=self.train_ds.dim,
            hidden_dims=cfg.model.hidden,
            output_dim=self.train_ds.num_classes,
        )
        self._local = [
            (self.train_ds.features[idx], self.train_ds.labels[idx])
            for idx in self.partition.assignments
        ]
        self.pattern = None
        if cfg.attack.pattern is not None or cfg.attack.target_label is not None:
            side = int(round(self.train_ds.dim**0.5))
            if cfg.attack.pattern is None and side * side != self.train_ds.dim:
                raise ValueError("default pattern needs a square feature grid")
            self.pattern = cfg.attack.resolved_pattern(side)
        self._flipped: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if cfg.attack.kind in ("label_flip", "model_mixing"):
            for k in self.attackers:
                local = Dataset(*self._local[k], self.train_ds.num_classes)
                flipped = flip_labels(local, cfg.attack.src_label, cfg.attack.dst_label)
                self._flipped[k] = (flipped.features, flipped.labels)

    @staticmethod
    def _build_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
        ds = cfg.dataset
        if ds.source == "mnist":
            train = load_mnist_idx(ds.images, ds.labels)
            test = load_mnist_idx(ds.test_images, ds.test_labels)
            if train.dim != test.dim:
                raise ValueError("train and test feature dims differ")
            return train, test
        center_seed = _derive(cfg.seed, _TAG_DATA)
        train = synth_blobs(
            ds.classes,
            ds.dim,
            ds.per_class,
            ds.spread,
            seed=_derive(cfg.seed, _TAG_DATA, 1),
            center_seed=center_seed,
        )
        test = synth_blobs(
            ds.classes,
            ds.dim,
            ds.test_per_class,
            ds.spread,
            seed=_derive(cfg.seed, _TAG_TEST),
            center_seed=center_seed,
        )
        return train, test

    @staticmethod
    def _build_partition(cfg: ExperimentConfig, train: Dataset) -> Partition:
        seed = _derive(cfg.seed, _TAG_PARTITION)
        if cfg.partition.kind == "dirichlet":
            return partition_dirichlet(train, cfg.participants, cfg.partition.alpha, seed)
        return partition_shards(
            train,
            cfg.participants,
            cfg.partition.classes_per_participant,
            seed,
            samples_per_class=cfg.partition.samples_per_class,
        )

    def initial_model(self) -> FlatModel:
        return init_model(self.arch, seed=_derive(self.cfg.seed, _TAG_INIT))

    def _attacker_epochs(self) -> int:
        if self.cfg.attacker_epochs is not None:
            return self.cfg.attacker_epochs
        return self.cfg.train.epochs + self.cfg.attack.extra_epochs

    def _attacker_lr(self, default: float) -> float:
        if self.cfg.attack.attacker_lr is not None:
            return self.cfg.attack.attacker_lr
        return default

    def _train_one(self, global_model: FlatModel, round_index: int, k: int) -> FlatModel:
        cfg = self.cfg
        features, labels = self._local[k]
        train_seed = _derive(cfg.seed, _TAG_TRAIN, round_index, k)
        honest_cfg = TrainConfig(
            cfg.train.epochs, cfg.train.lr, cfg.train.batch_size, seed=train_seed
        )
        kind = cfg.attack.kind if k in self.attackers else "none"

        if kind in ("none", "backdoor_replacement") and not (
            kind == "backdoor_replacement" and round_index == cfg.attack.attack_round
        ):
            return sgd_train(global_model, features, labels, honest_cfg)

        if kind == "label_flip":
            fx, fy = self._flipped[k]
            attacker_cfg = TrainConfig(
                self._attacker_epochs(),
                self._attacker_lr(cfg.train.lr),
                cfg.train.batch_size,
                seed=train_seed,
            )
            return sgd_train(global_model, fx, fy, attacker_cfg)

        if kind == "gaussian_noise":
            local = sgd_train(global_model, features, labels, honest_cfg)
            rng = np.random.default_rng(_derive(cfg.seed, _TAG_ATTACK, round_index, k))
            return gaussian_noise(local, cfg.attack.noise_std, rng)

        if kind in ("backdoor_naive", "backdoor_replacement"):
            transform = batch_poisoner(
                self.pattern, self.pattern.target_label, cfg.attack.poison_per_batch
            )
            attacker_cfg = TrainConfig(
                self._attacker_epochs(),
                self._attacker_lr(_BACKDOOR_DEFAULT_LR),
                cfg.train.batch_size,
                seed=train_seed,
            )
            local = sgd_train(global_model, features, labels, attacker_cfg, transform)
            if kind == "backdoor_replacement":
                return replacement_scale(local, global_model, cfg.attack.scale)
            return local

        if kind == "model_mixing":
            honest_model = sgd_train(global_model, features, labels, honest_cfg)
            fx, fy = self._flipped[k]
            adversarial_cfg = TrainConfig(
                self._attacker_epochs(),
                self._attacker_lr(cfg.train.lr),
                cfg.train.batch_size,
                seed=_derive(cfg.seed, _TAG_ATTACK, round_index, k),
            )
            adversarial = sgd_train(global_model, fx, fy, adversarial_cfg)
            rng = np.random.default_rng(_derive(cfg.seed, _TAG_ATTACK, round_index, k, 1))
            return mix_models(honest_model, adversarial, cfg.attack.mix_rate, rng)

        raise AssertionError(f"unhandled attack kind {kind!r}")

    def local_models(self, global_model: FlatModel, round_index: int) -> np.ndarray:
        """The (K, N) matrix of parameter vectors submitted this round."""
        return np.stack(
            [
                self._train_one(global_model, round_index, k).params
                for k in range(self.cfg.participants)
            ]
        )

    def run_round(
        self, global_model: FlatModel, round_index: int, timer=time.perf_counter
    ) -> tuple[FlatModel, MetricsRow]:
        start = timer()
        matrix = self.local_models(global_model, round_index)
        combined, _ = aggregate(matrix, self.cfg.aggregator)
        new_global = FlatModel(combined, self.arch)
        accuracy = evaluate(new_global, self.test_ds.features, self.test_ds.labels)
        asr = None
        if self.pattern is not None:
            asr = attack_success_rate(
                new_global, self.test_ds.features, self.test_ds.labels, self.pattern
            )
        wall_ms = int((timer() - start) * 1000)
        row = MetricsRow(
            round=round_index,
            aggregator=self.cfg.aggregator.method,
            attack=self.cfg.attack.kind,
            num_attackers=len(self.attackers),
            accuracy=accuracy,
            attack_success_rate=asr,
            seed=self.cfg.seed,
            wall_ms=wall_ms,
        )
        return new_global, row

    def run(self, timer=time.perf_counter) -> list[MetricsRow]:
        rows = []
        global_model = self.initial_model()
        for round_index in range(1, self.cfg.rounds + 1):
            global_model, row = self.run_round(global_model, round_index, timer)
            rows.append(row)
        self.final_model = global_model
        return rows


def run_experiment(
    cfg: ExperimentConfig,
    out_path: str | None = None,
    repeat: int = 1,
    timer=time.perf_counter,
) -> list[MetricsRow]:
    """Run ``repeat`` seeded instances of the experiment, optionally to CSV."""
    if repeat < 1:
        raise ValueError("repeat must be at least 1")
    rows: list[MetricsRow] = []
    for rep in range(repeat):
        seed = cfg.seed if rep == 0 else _derive(cfg.seed, _TAG_REPEAT, rep)
        rows.extend(FederatedSimulation(cfg.with_seed(seed)).run(timer))
    path = out_path if out_path is not None else cfg.output
    if path:
        write_metrics_csv(path, rows)
    return rows


def sweep(
    cfg: ExperimentConfig,
    lambdas=None,
    deltas=None,
    attacker_counts=None,
    out_path: str | None = None,
    timer=time.perf_counter,
) -> list[tuple[float, float, MetricsRow]]:
    """Grid over clip level, cut threshold and attacker count.

    Empty grids fall back to the base config's value, so a sweep with no
    arguments runs the base config once.
    """
    lambdas = list(lambdas) if lambdas else [cfg.aggregator.lam]
    deltas = list(deltas) if deltas else [cfg.aggregator.delta]
    if attacker_counts:
        counts = [int(a) for a in attacker_counts]
    else:
        base = cfg.attackers
        counts = [base if isinstance(base, int) else len(base)]
    tagged: list[tuple[float, float, MetricsRow]] = []
    for lam in lambdas:
        for delta in deltas:
            for count in counts:
                run_cfg = replace(
                    cfg,
                    aggregator=replace(cfg.aggregator, lam=lam, delta=delta),
                    attackers=count,
                    output=None,
                )
                for row in run_experiment(run_cfg, timer=timer):
                    tagged.append((lam, delta, row))
    if out_path:
        write_sweep_csv(out_path, tagged)
    return tagged


def aggregate_file(in_path: str, spec: AggregatorSpec, out_path: str):
    """Aggregate a stored update matrix into a one-row update file."""
    matrix = read_update_file(in_path)
    combined, report = aggregate(matrix, spec)
    write_update_file(out_path, combined[None, :])
    return combined, report


def bound_experiment(
    s_values,
    k_values,
    alpha: float,
    trials: int,
    seed: int = 0,
    adv_magnitude: float = 1e3,
    lam: float = 2.0,
    delta: float = 0.01,
    gamma: float = 1.48,
) -> list[BoundRow]:
    """Error of the scalar combiner while adversaries report huge constants.

    Each device averages S unit-variance samples of a zero mean; a fraction
    ``alpha`` of the K devices instead reports +/-``adv_magnitude``. Records
    the median absolute estimation error over seeded trials, and how often
    the combined estimate escaped the honest estimates' range.
    """
    if not 0 <= alpha < 0.5:
        raise ValueError("alpha must lie in [0, 0.5)")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rows = []
    for s in s_values:
        s = int(s)
        if s < 1:
            raise ValueError("S must be positive")
        for k in k_values:
            k = int(k)
            if k < 2:
                raise ValueError("K must be at least 2")
            num_bad = int(alpha * k)
            errors = np.empty(trials)
            outside = 0
            for t in range(trials):
                rng = np.random.default_rng(np.random.SeedSequence([seed, s, k, t]))
                honest = rng.standard_normal((k - num_bad, s)).mean(axis=1)
                if num_bad:
                    signs = rng.choice([-1.0, 1.0], size=num_bad)
                    estimates = np.concatenate([honest, signs * adv_magnitude])
                else:
                    estimates = honest
                ens = ScalarEnsemble(
                    estimates, ConfidenceParams.for_ensemble(k, lam=lam, delta=delta), gamma
                )
                estimate = scalar_global(ens)
                errors[t] = abs(estimate)
                if num_bad and not honest.min() - 1e-12 <= estimate <= honest.max() + 1e-12:
                    outside += 1
            rows.append(
                BoundRow(
                    s=s,
                    k=k,
                    alpha=alpha,
                    trials=trials,
                    median_abs_error=float(np.median(errors)),
                    outside_honest_range=outside,
                )
            )
    return rows


def metrics_csv_lines(rows: list[MetricsRow]) -> list[str]:
    return [METRICS_HEADER] + [row.csv() for row in rows]


def write_metrics_csv(path: str, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(metrics_csv_lines(rows)) + "\n")


def write_sweep_csv(path: str, tagged: list[tuple[float, float, MetricsRow]]) -> None:
    lines = [SWEEP_HEADER] + [f"{lam!r},{delta!r},{row.csv()}" for lam, delta, row in tagged]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_bound_csv(path: str, rows: list[BoundRow]) -> None:
    lines = [BOUND_HEADER] + [row.csv() for row in rows]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
