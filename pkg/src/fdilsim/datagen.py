"""Synthetic domain-incremental task sequences and non-IID client partitions.

A sequence holds K tasks over a fixed label space.  Task inputs are drawn
from class-conditional isotropic Gaussians; the domain shift between
consecutive tasks is a deterministic transform of the class means: a rotation
applied cumulatively in consecutive 2-D coordinate planes plus a translation
along a fixed unit direction.  Task i (1-based) uses ``i - 1`` applications
of the transform, so the first task always sees the base means and a zero
rotation/drift spec yields identical distributions for every task.

Each task's train pool is split across clients class by class with
proportions drawn from Dirichlet(alpha) (realized as normalized Gamma draws),
rounded by largest remainder, then repaired so every client meets a minimum
shard size.  Test pools are global: one per task, shared by all clients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .models import Minibatch


@dataclass(frozen=True)
class DomainShiftSpec:
    """Parameters of the synthetic task generator."""

    num_tasks: int
    base_class_means: tuple[tuple[float, ...], ...]
    class_cov_scale: float
    rotation_angle: float
    mean_drift: float
    train_samples_per_task: int
    test_samples_per_task: int

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        if len(self.base_class_means) < 2:
            raise ValueError("need at least two class means")
        dims = {len(row) for row in self.base_class_means}
        if len(dims) != 1:
            raise ValueError("class mean rows must share a dimension")
        if self.class_cov_scale <= 0:
            raise ValueError("class_cov_scale must be positive")
        if not 0.0 <= self.rotation_angle <= np.pi:
            raise ValueError("rotation_angle must lie in [0, pi]")
        if self.mean_drift < 0:
            raise ValueError("mean_drift must be >= 0")
        if min(self.train_samples_per_task, self.test_samples_per_task) < self.num_classes:
            raise ValueError("sample counts must be >= num_classes")

    @property
    def num_classes(self) -> int:
        return len(self.base_class_means)

    @property
    def input_dim(self) -> int:
        return len(self.base_class_means[0])


@dataclass(frozen=True)
class PartitionSpec:
    """Client split parameters for one task's train pool."""

    num_clients: int
    dirichlet_alpha: float
    min_samples_per_client: int = 1
    resample_per_task: bool = True

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if self.min_samples_per_client < 1:
            raise ValueError("min_samples_per_client must be >= 1")


@dataclass
class TaskData:
    """One task: its effective class means plus train/test pools."""

    task_index: int
    class_means: np.ndarray
    cov_scale: float
    train: Minibatch
    test: Minibatch


@dataclass
class TaskSequence:
    tasks: list[TaskData]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task(self, i: int) -> TaskData:
        """1-based task access, matching protocol numbering."""
        return self.tasks[i - 1]


@dataclass
class ClientShard:
    """The slice of one task's train pool owned by one client."""

    task_index: int
    client_index: int
    data: Minibatch


def _rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Block-diagonal rotation: the 2x2 rotation on planes (0,1), (2,3), ...

    A trailing odd coordinate is left unchanged.
    """
    rot = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for k in range(0, dim - 1, 2):
        rot[k, k] = c
        rot[k, k + 1] = -s
        rot[k + 1, k] = s
        rot[k + 1, k + 1] = c
    return rot


def task_class_means(shift: DomainShiftSpec, task_index: int) -> np.ndarray:
    """Effective class means for 1-based ``task_index``."""
    base = np.asarray(shift.base_class_means, dtype=np.float64)
    shifts = task_index - 1
    rot = _rotation_matrix(shift.input_dim, shifts * shift.rotation_angle)
    direction = np.ones(shift.input_dim) / np.sqrt(shift.input_dim)
    return base @ rot.T + shifts * shift.mean_drift * direction


def _balanced_label_counts(total: int, num_classes: int) -> np.ndarray:
    counts = np.full(num_classes, total // num_classes, dtype=np.int64)
    counts[: total % num_classes] += 1
    return counts


def _sample_pool(
    means: np.ndarray, cov_scale: float, total: int, stream: np.random.Generator
) -> Minibatch:
    num_classes, dim = means.shape
    counts = _balanced_label_counts(total, num_classes)
    inputs = np.empty((total, dim))
    labels = np.empty(total, dtype=np.int64)
    pos = 0
    for c in range(num_classes):
        n = int(counts[c])
        inputs[pos : pos + n] = means[c] + cov_scale * stream.standard_normal((n, dim))
        labels[pos : pos + n] = c
        pos += n
    return Minibatch(inputs, labels)


def generate_sequence(shift: DomainShiftSpec, seed: int) -> TaskSequence:
    """Deterministically generate the K tasks of a sequence."""
    tasks = []
    for i in range(1, shift.num_tasks + 1):
        means = task_class_means(shift, i)
        train_stream = rngmod.derive_stream(seed, (rngmod.TASK_DATA, i, 0))
        test_stream = rngmod.derive_stream(seed, (rngmod.TASK_DATA, i, 1))
        tasks.append(
            TaskData(
                task_index=i,
                class_means=means,
                cov_scale=shift.class_cov_scale,
                train=_sample_pool(means, shift.class_cov_scale, shift.train_samples_per_task, train_stream),
                test=_sample_pool(means, shift.class_cov_scale, shift.test_samples_per_task, test_stream),
            )
        )
    return TaskSequence(tasks)


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` with |count - quota| < 1."""
    counts = np.floor(quotas).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # Ties broken toward the lower client index via stable sort.
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    while remainder < 0:  # float round-off pushed the floors past the total
        counts[int(np.argmax(counts))] -= 1
        remainder += 1
    return counts


def partition_task(task: TaskData, part: PartitionSpec, seed: int) -> list[ClientShard]:
    """Split ``task``'s train pool into one shard per client.

    Per class, client proportions are Dirichlet(alpha) draws; samples are
    assigned by largest-remainder rounding of the proportions.  Clients left
    below the floor then receive samples one at a time from the currently
    largest shard, smallest deficient client first.
    """
    m = part.num_clients
    pool = task.train
    floor = part.min_samples_per_client
    if len(pool) < m * floor:
        raise ValueError(
            f"train pool of task {task.task_index} has {len(pool)} samples; "
            f"need at least {m * floor} for {m} clients with floor {floor}"
        )

    partition_label = task.task_index if part.resample_per_task else 0
    stream = rngmod.derive_stream(seed, (rngmod.PARTITION, partition_label))

    assigned: list[list[int]] = [[] for _ in range(m)]
    for c in np.unique(pool.labels):
        class_idx = np.nonzero(pool.labels == c)[0]
        stream_order = stream.permutation(len(class_idx))
        class_idx = class_idx[stream_order]
        raw = stream.gamma(part.dirichlet_alpha, size=m)
        total_raw = raw.sum()
        proportions = raw / total_raw if total_raw > 0 else np.full(m, 1.0 / m)
        counts = _largest_remainder(proportions * len(class_idx), len(class_idx))
        pos = 0
        for client, n in enumerate(counts):
            assigned[client].extend(class_idx[pos : pos + int(n)].tolist())
            pos += int(n)

    # Floor repair: move single samples from the currently largest shard.
    sizes = np.array([len(a) for a in assigned])
    for client in range(m):
        while sizes[client] < floor:
            donor = int(np.argmax(sizes))
            assigned[client].append(assigned[donor].pop())
            sizes[donor] -= 1
            sizes[client] += 1

    shards = []
    for client in range(m):
        idx = np.sort(np.array(assigned[client], dtype=np.int64))
        shards.append(
            ClientShard(task_index=task.task_index, client_index=client, data=pool.take(idx))
        )
    return shards


def partition_sequence(
    sequence: TaskSequence, part: PartitionSpec, seed: int
) -> list[list[ClientShard]]:
    """Shards for every task; index [i-1][m] is task i's shard for client m."""
    return [partition_task(task, part, seed) for task in sequence.tasks]


# ---------------------------------------------------------------------------
# Dataset export (documented in README): a plain-text format with a header
# describing the sequence shape followed by one sample per line.

FORMAT_MAGIC = "fdilsim-dataset 1"


def export_sequence(sequence: TaskSequence, path, shards: list[list[ClientShard]] | None = None) -> None:
    """Write a sequence (and optionally its shard index lists) as text."""
    first = sequence.tasks[0]
    num_clients = len(shards[0]) if shards else 0
    lines = [FORMAT_MAGIC]
    lines.append(
        f"tasks {sequence.num_tasks} clients {num_clients} "
        f"classes {int(first.train.labels.max()) + 1} input_dim {first.train.inputs.shape[1]}"
    )
    for task in sequence.tasks:
        lines.append(f"task {task.task_index} train {len(task.train)} test {len(task.test)} cov {task.cov_scale:.17g}")
        for row in task.class_means:
            lines.append("mean " + " ".join(f"{v:.17g}" for v in row))
        for pool in (task.train, task.test):
            for x, y in zip(pool.inputs, pool.labels):
                lines.append(" ".join(f"{v:.17g}" for v in x) + f" {int(y)}")
    if shards:
        for task_shards in shards:
            for shard in task_shards:
                train = sequence.task(shard.task_index).train
                idx = _recover_indices(train, shard.data)
                lines.append(
                    f"shard {shard.task_index} {shard.client_index} "
                    + " ".join(str(i) for i in idx)
                )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _recover_indices(pool: Minibatch, shard: Minibatch) -> list[int]:
    """Match shard rows back to pool row indices (rows are unique draws)."""
    lookup = {pool.inputs[i].tobytes(): i for i in range(len(pool))}
    return [lookup[row.tobytes()] for row in shard.inputs]


def load_sequence(path) -> tuple[TaskSequence, list[list[ClientShard]] | None]:
    """Inverse of :func:`export_sequence`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines[0] != FORMAT_MAGIC:
        raise ValueError(f"not a fdilsim dataset file: {path}")
    header = lines[1].split()
    num_tasks, num_clients = int(header[1]), int(header[3])
    input_dim = int(header[7])
    cursor = 2
    tasks = []
    for _ in range(num_tasks):
        fields = lines[cursor].split()
        task_index, n_train, n_test = int(fields[1]), int(fields[3]), int(fields[5])
        cov = float(fields[7])
        cursor += 1
        means = []
        while lines[cursor].startswith("mean "):
            means.append([float(v) for v in lines[cursor].split()[1:]])
            cursor += 1
        pools = []
        for count in (n_train, n_test):
            inputs = np.empty((count, input_dim))
            labels = np.empty(count, dtype=np.int64)
            for r in range(count):
                parts = lines[cursor].split()
                inputs[r] = [float(v) for v in parts[:-1]]
                labels[r] = int(parts[-1])
                cursor += 1
            pools.append(Minibatch(inputs, labels))
        tasks.append(
            TaskData(
                task_index=task_index,
                class_means=np.array(means),
                cov_scale=cov,
                train=pools[0],
                test=pools[1],
            )
        )
    sequence = TaskSequence(tasks)
    if num_clients == 0:
        return sequence, None
    shards: list[list[ClientShard]] = [[] for _ in range(num_tasks)]
    for line in lines[cursor:]:
        parts = line.split()
        task_index, client = int(parts[1]), int(parts[2])
        idx = np.array([int(v) for v in parts[3:]], dtype=np.int64)
        shards[task_index - 1].append(
            ClientShard(task_index, client, sequence.task(task_index).train.take(idx))
        )
    return sequence, shards
