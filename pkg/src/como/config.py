"""Run configuration: one JSON file covering training, data, evaluation and output.

Every field has a default, so ``{}`` is a valid config.  Unknown keys anywhere
in the tree are rejected, and all problems are reported together.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DEFAULT_SIZES, TASK_GUIDANCE, DatasetSpec, Task
from .errors import ConfigError, DatasetIOError
from .networks import NetConfig
from .objectives import LossWeights, TrainConfig


@dataclass(frozen=True)
class DataOptions:
    """Either a path to a dataset written by ``como gen`` or a spec to generate in memory."""

    path: str | None = None
    task: str = "digits_brightness"
    n_source_train: int = 2000
    n_target_train: int = 2000
    n_source_val: int = 500
    n_target_val: int = 500
    image_size: int | None = None
    seed: int = 0

    def spec(self) -> DatasetSpec:
        return DatasetSpec(
            Task(self.task),
            self.n_source_train,
            self.n_target_train,
            self.n_source_val,
            self.n_target_val,
            image_size=self.image_size,
            seed=self.seed,
        )


@dataclass(frozen=True)
class EvalOptions:
    bins: int = 20
    per_bin: int = 64
    diversity_pairs: int = 10
    diversity_images: int = 100
    extractor_epochs: int = 4
    extractor_seed: int = 0
    sweep: int = 9
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataOptions = field(default_factory=DataOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    out: str = "runs"
    checkpoint_every: int = 1

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "data": {f.name: getattr(self.data, f.name) for f in fields(DataOptions)},
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(EvalOptions)},
            "out": self.out,
            "checkpoint_every": self.checkpoint_every,
        }

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of the fully resolved config, output location excluded."""
        d = self.to_dict()
        d.pop("out")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def run_name(self) -> str:
        return self.config_hash()[:12]

    def run_dir(self, out: str | None = None) -> Path:
        return Path(out if out is not None else self.out) / self.run_name


def _unknown(d: dict, allowed, where: str) -> list:
    return [f"unknown key '{where}{k}'" for k in d if k not in allowed]


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


def _check_section(raw, name: str, cls, problems: list) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        problems.append(f"'{name}' must be an object")
        return {}
    problems.extend(_unknown(raw, _names(cls), f"{name}."))
    return {k: v for k, v in raw.items() if k in _names(cls)}


def parse_config(raw: dict) -> RunConfig:
    """Build and validate a RunConfig, raising ConfigError listing every problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    problems = _unknown(raw, _names(RunConfig), "")
    train_raw = _check_section(raw.get("train"), "train", TrainConfig, problems)
    if isinstance(train_raw.get("weights"), dict):
        problems.extend(_unknown(train_raw["weights"], _names(LossWeights), "train.weights."))
        train_raw["weights"] = {k: v for k, v in train_raw["weights"].items() if k in _names(LossWeights)}
    if isinstance(train_raw.get("net"), dict):
        problems.extend(_unknown(train_raw["net"], _names(NetConfig), "train.net."))
        train_raw["net"] = {k: v for k, v in train_raw["net"].items() if k in _names(NetConfig)}
    data_raw = _check_section(raw.get("data"), "data", DataOptions, problems)
    eval_raw = _check_section(raw.get("eval"), "eval", EvalOptions, problems)

    train = data = evalo = None
    try:
        train = TrainConfig.from_dict(train_raw)
        problems.extend(f"train: {p}" for p in train.problems())
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append(f"train: {exc}")
    try:
        data = DataOptions(**data_raw)
        Task(data.task)
    except (TypeError, ValueError) as exc:
        problems.append(f"data: {exc}")
    try:
        evalo = EvalOptions(**eval_raw)
        for f in fields(EvalOptions):
            v = getattr(evalo, f.name)
            if not isinstance(v, int) or (v < 1 and f.name not in ("extractor_seed", "seed")):
                problems.append(f"eval.{f.name} must be a positive integer, got {v!r}")
    except TypeError as exc:
        problems.append(f"eval: {exc}")
    every = raw.get("checkpoint_every", 1)
    if not isinstance(every, int) or every < 1:
        problems.append(f"checkpoint_every must be a positive integer, got {every!r}")
    out = raw.get("out", "runs")
    if not isinstance(out, str):
        problems.append(f"out must be a string, got {out!r}")
    if train is not None and data is not None and not problems and data.path is None:
        problems.extend(dataset_mismatch(train, Task(data.task), data.image_size or DEFAULT_SIZES[Task(data.task)]))
    if problems:
        raise ConfigError(problems)
    return RunConfig(train=train, data=data, eval=evalo, out=out, checkpoint_every=every)


def dataset_mismatch(train: TrainConfig, task: Task, image_size: int) -> list:
    """Problems that make ``train`` unusable on a dataset of ``task`` at ``image_size``."""
    out = []
    if image_size != train.image_size:
        out.append(f"train.image_size {train.image_size} differs from the dataset image size {image_size}")
    if TASK_GUIDANCE[task] != train.guidance:
        out.append(f"train.guidance '{train.guidance}' does not match task {task.value} ('{TASK_GUIDANCE[task]}')")
    if (task is Task.DIGITS_CONFUSION) != (train.mode.value == "confusion"):
        out.append(f"train.mode '{train.mode.value}' does not fit task {task.value}")
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetIOError(f"{path}: config file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from exc
    return parse_config(raw)
