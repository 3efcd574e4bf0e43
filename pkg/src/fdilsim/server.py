"""The protocol engine: client sampling, aggregation, and the task loop.

Each round the server samples N of M clients uniformly without replacement,
collects their local update vectors, averages them in ascending client-id
order, applies the global step ``theta_bar = theta + gamma_G * delta``, and,
from the second task on under the server-anchored algorithm, blends the
result with the previous task's final model:

    theta' = theta_bar / (1 + lambda) + lambda * anchor / (1 + lambda)

which is the exact minimizer of ||u - theta_bar||^2 + lambda*||u - anchor||^2.
With lambda = 0 every round reduces to plain FedAvg.

Rounds may execute their local updates on a thread pool (``FDILSIM_THREADS``)
without changing any result: per-client random streams are derived from
(seed, task, round, client) and aggregation order is canonical.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .client import ClientUpdate, LocalConfig, local_update
from .datagen import ClientShard, TaskSequence
from .metrics import AccuracyMatrix, joint_loss, joint_objective_grad
from .models import ModelSpec, accuracy, init_params

ALGORITHMS = ("special", "special_c", "fedavg")
SCHEDULES = ("constant", "task_decay")


@dataclass(frozen=True)
class HyperParams:
    """Protocol knobs; one instance drives a whole run."""

    num_clients: int
    participants_per_round: int
    rounds_per_task: int
    local_epochs: int
    local_lr: float
    batch_size: int
    global_lr_schedule: str = "task_decay"
    global_lr: float = 1.0
    prox_lambda: float = 0.0
    algorithm: str = "special"
    master_seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 1 <= self.participants_per_round <= self.num_clients:
            raise ValueError("participants_per_round must satisfy 1 <= N <= num_clients")
        if self.rounds_per_task < 1:
            raise ValueError("rounds_per_task must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.local_lr <= 0:
            raise ValueError("local_lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.prox_lambda < 0:
            raise ValueError("prox_lambda must be >= 0")
        if self.global_lr_schedule not in SCHEDULES:
            raise ValueError(f"unknown global_lr_schedule {self.global_lr_schedule!r}")
        if self.global_lr <= 0:
            raise ValueError("global_lr must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def gamma_g(self, task_index: int) -> float:
        """Global learning rate in effect during 1-based ``task_index``."""
        if self.global_lr_schedule == "task_decay":
            return 1.0 / task_index
        return self.global_lr


@dataclass
class RoundRecord:
    """Everything logged about one communication round."""

    task: int
    round: int
    selected: tuple[int, ...]
    delta_norm: float
    drift_sq: float
    joint_grad_sq: float | None
    prev_task_loss: float | None
    grad_norm_max: float
    grad_sq_mean: float
    accuracies: tuple[float, ...] | None


@dataclass
class ServerState:
    """Mutable protocol state owned by the task/round loops."""

    task_index: int
    round_index: int
    params: np.ndarray
    anchor: np.ndarray
    task_start: np.ndarray
    last_blend_anchor: np.ndarray | None = None


@dataclass
class RunStats:
    """Scalar trajectory facts consumed by the theory harness."""

    grad_norm_prev_sq: float = 0.0
    f_prev_start: float = 0.0
    f_joint_start: float = 0.0
    best_joint_loss: float | None = None


@dataclass
class RunLog:
    """Complete trajectory output of one protocol run."""

    records: list[RoundRecord] = field(default_factory=list)
    accuracy: AccuracyMatrix | None = None
    task_params: list[np.ndarray] = field(default_factory=list)
    initial_params: np.ndarray | None = None
    stats: RunStats = field(default_factory=RunStats)


@dataclass(frozen=True)
class EvalConfig:
    """Cadence (in rounds) of optional per-round instrumentation; 0 = off."""

    eval_every: int = 0
    joint_grad_every: int = 0

    def __post_init__(self):
        if self.eval_every < 0 or self.joint_grad_every < 0:
            raise ValueError("cadences must be >= 0")


def sample_clients(num_clients: int, sample_size: int, stream: np.random.Generator) -> tuple[int, ...]:
    """Uniform size-N subset of [0, M) without replacement, sorted ascending.

    Partial Fisher-Yates: every subset is equally likely and only N swaps are
    performed.
    """
    if not 1 <= sample_size <= num_clients:
        raise ValueError("sample size must satisfy 1 <= N <= M")
    pool = np.arange(num_clients)
    for j in range(sample_size):
        k = int(stream.integers(j, num_clients))
        pool[j], pool[k] = pool[k], pool[j]
    return tuple(sorted(int(c) for c in pool[:sample_size]))


def aggregate(updates: list[tuple[int, np.ndarray]]) -> np.ndarray:
    """Arithmetic mean of update vectors, accumulated in ascending id order."""
    if not updates:
        raise ValueError("no updates to aggregate")
    shape = updates[0][1].shape
    for _, delta in updates:
        if delta.shape != shape:
            raise ValueError("update vectors must share a length")
    ordered = sorted(updates, key=lambda item: item[0])
    total = np.zeros(shape)
    for _, delta in ordered:
        total += delta
    return total / len(ordered)


def proximal_blend(theta_bar: np.ndarray, anchor: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form minimizer of ||u - theta_bar||^2 + lam*||u - anchor||^2."""
    if theta_bar.shape != anchor.shape:
        raise ValueError("theta_bar and anchor must share a length")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0.0:
        return theta_bar.copy()
    return theta_bar / (1.0 + lam) + (lam / (1.0 + lam)) * anchor


def _worker_count() -> int:
    value = os.environ.get("FDILSIM_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _run_clients(
    spec: ModelSpec,
    state: ServerState,
    shards: list[ClientShard],
    cfg: LocalConfig,
    hp: HyperParams,
    selected: tuple[int, ...],
    workers: int,
) -> list[tuple[int, ClientUpdate]]:
    def one(client: int) -> tuple[int, ClientUpdate]:
        stream = rngmod.derive_stream(
            hp.master_seed,
            (rngmod.LOCAL_TRAINING, state.task_index, state.round_index, client),
        )
        return client, local_update(spec, state.params, shards[client], cfg, stream)

    if workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, selected))
    else:
        results = [one(client) for client in selected]
    return sorted(results, key=lambda item: item[0])


def run_round(
    spec: ModelSpec,
    state: ServerState,
    shards: list[ClientShard],
    hp: HyperParams,
    workers: int = 1,
) -> tuple[ServerState, np.ndarray, float, float, tuple[int, ...]]:
    """Execute one round in place.

    Returns (state, aggregated delta, max grad norm, mean squared grad norm,
    selected client ids).
    """
    i, t = state.task_index, state.round_index
    sampling_stream = rngmod.derive_stream(hp.master_seed, (rngmod.CLIENT_SAMPLING, i, t))
    selected = sample_clients(hp.num_clients, hp.participants_per_round, sampling_stream)

    if hp.algorithm == "special_c" and i >= 2:
        cfg = LocalConfig(
            epochs=hp.local_epochs,
            local_lr=hp.local_lr,
            batch_size=hp.batch_size,
            mode="client_prox",
            prox_lambda=hp.prox_lambda,
            anchor=state.anchor,
        )
    else:
        cfg = LocalConfig(
            epochs=hp.local_epochs, local_lr=hp.local_lr, batch_size=hp.batch_size
        )

    results = _run_clients(spec, state, shards, cfg, hp, selected, workers)
    delta = aggregate([(client, update.delta) for client, update in results])
    theta_bar = state.params + hp.gamma_g(i) * delta

    if hp.algorithm == "special" and i >= 2:
        state.params = proximal_blend(theta_bar, state.anchor, hp.prox_lambda)
        state.last_blend_anchor = state.anchor
    else:
        state.params = theta_bar
        state.last_blend_anchor = None
    state.round_index += 1

    grad_norm_max = max(update.grad_norm_max for _, update in results)
    grad_sq_mean = float(
        np.mean([update.grad_norm_sq_mean for _, update in results])
    )
    return state, delta, grad_norm_max, grad_sq_mean, selected


def run_task(
    spec: ModelSpec,
    state: ServerState,
    sequence: TaskSequence,
    shards_by_task: list[list[ClientShard]],
    hp: HyperParams,
    task_index: int,
    eval_cfg: EvalConfig,
    log: RunLog,
    workers: int,
) -> ServerState:
    """Run the T rounds of one task, logging a record per round."""
    state.task_index = task_index
    state.round_index = 0
    state.anchor = state.params.copy()
    state.task_start = state.params.copy()
    shards = shards_by_task[task_index - 1]

    for t in range(hp.rounds_per_task):
        state, delta, gmax, gsq_mean, selected = run_round(
            spec, state, shards, hp, workers
        )
        diff = state.params - state.task_start
        drift_sq = float(diff @ diff)

        joint_grad_sq = None
        prev_loss = None
        if eval_cfg.joint_grad_every and (t + 1) % eval_cfg.joint_grad_every == 0:
            loss_joint, grad_joint = joint_objective_grad(
                spec, state.params, shards_by_task[:task_index]
            )
            joint_grad_sq = float(grad_joint @ grad_joint)
            if task_index >= 2:
                prev_loss = joint_loss(
                    spec, state.params, shards_by_task[: task_index - 1]
                )
            if task_index == sequence.num_tasks and task_index >= 2:
                best = log.stats.best_joint_loss
                log.stats.best_joint_loss = (
                    loss_joint if best is None else min(best, loss_joint)
                )
        accuracies = None
        if eval_cfg.eval_every and (t + 1) % eval_cfg.eval_every == 0:
            accuracies = tuple(
                accuracy(spec, state.params, task.test) for task in sequence.tasks
            )
        log.records.append(
            RoundRecord(
                task=task_index,
                round=t,
                selected=selected,
                delta_norm=float(np.linalg.norm(delta)),
                drift_sq=drift_sq,
                joint_grad_sq=joint_grad_sq,
                prev_task_loss=prev_loss,
                grad_norm_max=gmax,
                grad_sq_mean=gsq_mean,
                accuracies=accuracies,
            )
        )
    return state


def run_sequence(
    spec: ModelSpec,
    sequence: TaskSequence,
    shards_by_task: list[list[ClientShard]],
    hp: HyperParams,
    eval_cfg: EvalConfig = EvalConfig(),
) -> RunLog:
    """Run the whole K-task protocol and assemble the trajectory log."""
    if sequence.num_tasks != len(shards_by_task):
        raise ValueError("sequence and shards disagree on the number of tasks")
    workers = _worker_count()
    k = sequence.num_tasks

    init_stream = rngmod.derive_stream(hp.master_seed, (rngmod.INIT_PARAMS,))
    theta0 = init_params(spec, init_stream)
    log = RunLog(accuracy=AccuracyMatrix(k), initial_params=theta0.copy())
    state = ServerState(
        task_index=0,
        round_index=0,
        params=theta0.copy(),
        anchor=theta0.copy(),
        task_start=theta0.copy(),
    )

    for i in range(1, k + 1):
        if i == k and k >= 2:
            f_prev, g_prev = joint_objective_grad(spec, state.params, shards_by_task[: k - 1])
            log.stats.grad_norm_prev_sq = float(g_prev @ g_prev)
            log.stats.f_prev_start = f_prev
            log.stats.f_joint_start = joint_loss(spec, state.params, shards_by_task)
            log.stats.best_joint_loss = log.stats.f_joint_start

        state = run_task(
            spec, state, sequence, shards_by_task, hp, i, eval_cfg, log, workers
        )

        log.task_params.append(state.params.copy())
        for j in range(1, i + 1):
            log.accuracy.set(i, j, accuracy(spec, state.params, sequence.task(j).test))
        if i == k and k >= 2:
            final_joint = joint_loss(spec, state.params, shards_by_task)
            log.stats.best_joint_loss = min(log.stats.best_joint_loss, final_joint)
    return log
