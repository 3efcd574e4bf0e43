"""Experiment configuration: a flat INI schema, one section per subsystem.

Parsing is strict: unknown sections or keys are rejected, every value is
type-checked, and all invariants of the embedded parameter types are enforced
at parse time with the offending ``section.key`` named in the error.  A
parsed config serializes back to text that parses to an equal config.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, replace

from .datagen import DomainShiftSpec, PartitionSpec
from .models import ModelSpec
from .server import EvalConfig, HyperParams
from .theory import ProbeConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs, as validated parameter objects."""

    model: ModelSpec
    shift: DomainShiftSpec
    partition: PartitionSpec
    hyper: HyperParams
    probe: ProbeConfig
    eval_cfg: EvalConfig
    output_dir: str


_SCHEMA = {
    "model": {
        "kind": str,
        "input_dim": int,
        "num_classes": int,
        "hidden_dim": int,
        "activation": str,
    },
    "data": {
        "num_tasks": int,
        "base_means": str,
        "class_cov_scale": float,
        "rotation_angle": float,
        "mean_drift": float,
        "train_samples_per_task": int,
        "test_samples_per_task": int,
    },
    "partition": {
        "dirichlet_alpha": float,
        "min_samples_per_client": int,
        "resample_per_task": bool,
    },
    "federation": {
        "num_clients": int,
        "participants_per_round": int,
        "rounds_per_task": int,
        "local_epochs": int,
        "batch_size": int,
        "local_lr": float,
        "global_lr_schedule": str,
        "global_lr": float,
        "algorithm": str,
        "prox_lambda": float,
        "master_seed": int,
    },
    "probe": {
        "num_random_probes": int,
        "minibatch_draws": int,
        "batch_size": int,
        "probe_scale": float,
    },
    "io": {
        "output_dir": str,
        "eval_every": int,
        "joint_grad_every": int,
    },
}

# Keys that may be omitted, with their defaults.
_OPTIONAL = {
    ("model", "hidden_dim"): None,
    ("model", "activation"): "tanh",
    ("partition", "resample_per_task"): True,
    ("federation", "global_lr"): 1.0,
    ("probe", "num_random_probes"): 8,
    ("probe", "minibatch_draws"): 4,
    ("probe", "batch_size"): 32,
    ("probe", "probe_scale"): 1.0,
    ("io", "output_dir"): "runs/out",
    ("io", "eval_every"): 0,
    ("io", "joint_grad_every"): 0,
}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from exc


def _parse_means(raw: str, num_classes: int, input_dim: int) -> tuple[tuple[float, ...], ...]:
    rows = []
    for row_text in raw.split(";"):
        row_text = row_text.strip()
        if not row_text:
            continue
        try:
            rows.append(tuple(float(v) for v in row_text.split()))
        except ValueError as exc:
            raise ConfigError(f"data.base_means: cannot parse row {row_text!r}") from exc
    if len(rows) != num_classes:
        raise ConfigError(
            f"data.base_means: expected {num_classes} rows (one per class), got {len(rows)}"
        )
    for row in rows:
        if len(row) != input_dim:
            raise ConfigError(
                f"data.base_means: row length {len(row)} does not match model.input_dim {input_dim}"
            )
    return tuple(rows)


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse and validate a config from its text form."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    values: dict[tuple[str, str], object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[(section, key)] = _convert(section, key, raw, _SCHEMA[section][key])
    for section, keys in _SCHEMA.items():
        for key in keys:
            if (section, key) in values:
                continue
            if (section, key) in _OPTIONAL:
                values[(section, key)] = _OPTIONAL[(section, key)]
            else:
                raise ConfigError(f"missing required key {section}.{key}")

    def get(section: str, key: str):
        return values[(section, key)]

    try:
        model = ModelSpec(
            kind=get("model", "kind"),
            input_dim=get("model", "input_dim"),
            num_classes=get("model", "num_classes"),
            hidden_dim=get("model", "hidden_dim"),
            activation=get("model", "activation"),
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    means = _parse_means(get("data", "base_means"), model.num_classes, model.input_dim)
    try:
        shift = DomainShiftSpec(
            num_tasks=get("data", "num_tasks"),
            base_class_means=means,
            class_cov_scale=get("data", "class_cov_scale"),
            rotation_angle=get("data", "rotation_angle"),
            mean_drift=get("data", "mean_drift"),
            train_samples_per_task=get("data", "train_samples_per_task"),
            test_samples_per_task=get("data", "test_samples_per_task"),
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from exc

    try:
        hyper = HyperParams(
            num_clients=get("federation", "num_clients"),
            participants_per_round=get("federation", "participants_per_round"),
            rounds_per_task=get("federation", "rounds_per_task"),
            local_epochs=get("federation", "local_epochs"),
            local_lr=get("federation", "local_lr"),
            batch_size=get("federation", "batch_size"),
            global_lr_schedule=get("federation", "global_lr_schedule"),
            global_lr=get("federation", "global_lr"),
            prox_lambda=get("federation", "prox_lambda"),
            algorithm=get("federation", "algorithm"),
            master_seed=get("federation", "master_seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"federation: {exc}") from exc

    try:
        partition = PartitionSpec(
            num_clients=hyper.num_clients,
            dirichlet_alpha=get("partition", "dirichlet_alpha"),
            min_samples_per_client=get("partition", "min_samples_per_client"),
            resample_per_task=get("partition", "resample_per_task"),
        )
    except ValueError as exc:
        raise ConfigError(f"partition: {exc}") from exc

    try:
        probe = ProbeConfig(
            num_random_probes=get("probe", "num_random_probes"),
            minibatch_draws=get("probe", "minibatch_draws"),
            batch_size=get("probe", "batch_size"),
            probe_scale=get("probe", "probe_scale"),
        )
    except ValueError as exc:
        raise ConfigError(f"probe: {exc}") from exc

    eval_every = get("io", "eval_every")
    joint_grad_every = get("io", "joint_grad_every")
    if eval_every < 0:
        raise ConfigError("io.eval_every must be >= 0")
    if joint_grad_every < 0:
        raise ConfigError("io.joint_grad_every must be >= 0")

    pool_floor = hyper.num_clients * partition.min_samples_per_client
    if shift.train_samples_per_task < pool_floor:
        raise ConfigError(
            "data.train_samples_per_task: train pool "
            f"{shift.train_samples_per_task} cannot satisfy num_clients * "
            f"min_samples_per_client = {pool_floor}"
        )
    if not math.isfinite(hyper.prox_lambda):
        raise ConfigError("federation.prox_lambda must be finite")

    return ExperimentConfig(
        model=model,
        shift=shift,
        partition=partition,
        hyper=hyper,
        probe=probe,
        eval_cfg=EvalConfig(eval_every=eval_every, joint_grad_every=joint_grad_every),
        output_dir=get("io", "output_dir"),
    )


def parse_config(path) -> ExperimentConfig:
    """Parse a config file; missing files surface as OSError."""
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def serialize_config(config: ExperimentConfig) -> str:
    """Render a config back to text that parses to an equal config."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["model"] = {
        "kind": config.model.kind,
        "input_dim": str(config.model.input_dim),
        "num_classes": str(config.model.num_classes),
    }
    if config.model.kind == "mlp1":
        parser["model"]["hidden_dim"] = str(config.model.hidden_dim)
        parser["model"]["activation"] = config.model.activation
    parser["data"] = {
        "num_tasks": str(config.shift.num_tasks),
        "base_means": "; ".join(
            " ".join(repr(v) for v in row) for row in config.shift.base_class_means
        ),
        "class_cov_scale": repr(config.shift.class_cov_scale),
        "rotation_angle": repr(config.shift.rotation_angle),
        "mean_drift": repr(config.shift.mean_drift),
        "train_samples_per_task": str(config.shift.train_samples_per_task),
        "test_samples_per_task": str(config.shift.test_samples_per_task),
    }
    parser["partition"] = {
        "dirichlet_alpha": repr(config.partition.dirichlet_alpha),
        "min_samples_per_client": str(config.partition.min_samples_per_client),
        "resample_per_task": str(config.partition.resample_per_task).lower(),
    }
    parser["federation"] = {
        "num_clients": str(config.hyper.num_clients),
        "participants_per_round": str(config.hyper.participants_per_round),
        "rounds_per_task": str(config.hyper.rounds_per_task),
        "local_epochs": str(config.hyper.local_epochs),
        "batch_size": str(config.hyper.batch_size),
        "local_lr": repr(config.hyper.local_lr),
        "global_lr_schedule": config.hyper.global_lr_schedule,
        "global_lr": repr(config.hyper.global_lr),
        "algorithm": config.hyper.algorithm,
        "prox_lambda": repr(config.hyper.prox_lambda),
        "master_seed": str(config.hyper.master_seed),
    }
    parser["probe"] = {
        "num_random_probes": str(config.probe.num_random_probes),
        "minibatch_draws": str(config.probe.minibatch_draws),
        "batch_size": str(config.probe.batch_size),
        "probe_scale": repr(config.probe.probe_scale),
    }
    parser["io"] = {
        "output_dir": config.output_dir,
        "eval_every": str(config.eval_cfg.eval_every),
        "joint_grad_every": str(config.eval_cfg.joint_grad_every),
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def with_lambda(config: ExperimentConfig, lam: float, output_dir: str) -> ExperimentConfig:
    """Copy of ``config`` with a different proximal weight and output dir."""
    return ExperimentConfig(
        model=config.model,
        shift=config.shift,
        partition=config.partition,
        hyper=replace(config.hyper, prox_lambda=lam),
        probe=config.probe,
        eval_cfg=config.eval_cfg,
        output_dir=output_dir,
    )
