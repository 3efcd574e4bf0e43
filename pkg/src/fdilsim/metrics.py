"""Accuracy-matrix bookkeeping, ACC/BWT, and joint-objective instrumentation.

The accuracy matrix entry A[i][j] (1-based, j <= i) is the test accuracy on
task j of the model obtained after completing task i.  ACC is the mean of the
final row; BWT the mean change of earlier-task accuracy between the moment a
task finished and the end of the run.  Both are computed in exact rational
arithmetic over the stored entries so values recomputed from a persisted
matrix match bit for bit.

The joint-objective helpers evaluate the summed training objective over every
task's full shards.  They are simulator-side instrumentation with full data
access and are never consulted by the client/server update paths.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .datagen import ClientShard
from .models import ModelSpec, loss_and_grad


class AccuracyMatrix:
    """Lower-triangular K x K accuracy table; undefined entries are NaN."""

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")
        self.num_tasks = num_tasks
        self._values = np.full((num_tasks, num_tasks), np.nan)

    def set(self, after_task: int, eval_task: int, value: float) -> None:
        if not 1 <= eval_task <= after_task <= self.num_tasks:
            raise ValueError(f"entry ({after_task}, {eval_task}) is outside the lower triangle")
        if not 0.0 <= value <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        self._values[after_task - 1, eval_task - 1] = value

    def get(self, after_task: int, eval_task: int) -> float:
        value = self._values[after_task - 1, eval_task - 1]
        if np.isnan(value):
            raise ValueError(f"entry ({after_task}, {eval_task}) is not populated")
        return float(value)

    def entries(self) -> list[tuple[int, int, float]]:
        """Defined entries as (after_task, eval_task, accuracy), row-major."""
        out = []
        for i in range(1, self.num_tasks + 1):
            for j in range(1, i + 1):
                value = self._values[i - 1, j - 1]
                if not np.isnan(value):
                    out.append((i, j, float(value)))
        return out


def acc(matrix: AccuracyMatrix) -> float:
    """Average accuracy over all tasks measured with the final model."""
    k = matrix.num_tasks
    total = sum(Fraction(matrix.get(k, j)) for j in range(1, k + 1))
    return float(total / k)


def bwt(matrix: AccuracyMatrix) -> float:
    """Mean change in earlier-task accuracy after finishing all tasks."""
    k = matrix.num_tasks
    if k < 2:
        raise ValueError("backward transfer is undefined for a single task")
    total = sum(
        Fraction(matrix.get(k, i)) - Fraction(matrix.get(i, i)) for i in range(1, k)
    )
    return float(total / (k - 1))


def client_objective_grad(
    spec: ModelSpec, params: np.ndarray, shard: ClientShard
) -> tuple[float, np.ndarray]:
    """Full-shard loss and gradient for one client (no sampling)."""
    return loss_and_grad(spec, params, shard.data)


def task_objective_grad(
    spec: ModelSpec, params: np.ndarray, task_shards: list[ClientShard]
) -> tuple[float, np.ndarray]:
    """Task objective: the client average (1/M) sum_m f_{task,m}."""
    m = len(task_shards)
    loss_total = 0.0
    grad_total = np.zeros_like(params)
    for shard in task_shards:
        loss, grad = client_objective_grad(spec, params, shard)
        loss_total += loss
        grad_total += grad
    return loss_total / m, grad_total / m


def joint_objective_grad(
    spec: ModelSpec, params: np.ndarray, shards_by_task: list[list[ClientShard]]
) -> tuple[float, np.ndarray]:
    """Summed objective over all given tasks and its gradient."""
    loss_total = 0.0
    grad_total = np.zeros_like(params)
    for task_shards in shards_by_task:
        loss, grad = task_objective_grad(spec, params, task_shards)
        loss_total += loss
        grad_total += grad
    return loss_total, grad_total


def joint_grad_norm_sq(
    spec: ModelSpec, params: np.ndarray, shards_by_task: list[list[ClientShard]]
) -> float:
    """Squared norm of the summed-objective gradient over the given tasks."""
    _, grad = joint_objective_grad(spec, params, shards_by_task)
    return float(grad @ grad)


def joint_loss(
    spec: ModelSpec, params: np.ndarray, shards_by_task: list[list[ClientShard]]
) -> float:
    """Summed objective value over the given tasks."""
    loss, _ = joint_objective_grad(spec, params, shards_by_task)
    return loss
