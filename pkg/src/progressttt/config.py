"""TOML run configuration: loading, overrides, and resolved-config emission.

A config file has top-level run keys plus ``[env]``, ``[task]``, ``[critic]``,
``[progress]``, ``[grpo]``, ``[schedule]`` and ``[ablation]`` sections. Every
omitted value takes its default, and :func:`dump_config` writes all of them
out explicitly so a logged config reproduces the run on its own.

The schedule is given either as explicit ``stages = [[h, iters], ..., [h]]``
(a one-element final stage runs forever) or as ``num_stages`` plus
``iterations_per_stage`` for the geometric ladder ending at
``env.max_horizon_cap``.
"""
from __future__ import annotations

import dataclasses
import sys
from pathlib import Path
from typing import Any, Iterable

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .critic import CriticConfig
from .curriculum import HorizonSchedule, default_schedule
from .envsim import EnvConfig, TaskSpec, chain_task
from .exceptions import ConfigError
from .grpo import GrpoConfig
from .progress import ProgressConfig
from .ttt import AblationConfig, RunConfig

_SECTIONS = {
    "env": EnvConfig,
    "critic": CriticConfig,
    "progress": ProgressConfig,
    "grpo": GrpoConfig,
    "ablation": AblationConfig,
}
_TOP_LEVEL = [f.name for f in dataclasses.fields(RunConfig) if f.name not in (*_SECTIONS, "task", "schedule")]
_TASK_KEYS = ["task_id", "instruction", "stage_targets", "start", "terminal_cell"]
_SCHEDULE_KEYS = ["stages", "num_stages", "iterations_per_stage"]
_ALIASES = {"seed": "master_seed"}


def _field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]


def _reject_unknown(section: str, given: Iterable[str], valid: Iterable[str]) -> None:
    unknown = sorted(set(given) - set(valid))
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}; valid keys: {sorted(valid)}")


def _build_schedule(raw: dict, env: EnvConfig) -> HorizonSchedule | None:
    _reject_unknown("schedule", raw, _SCHEDULE_KEYS)
    if "stages" in raw:
        if "num_stages" in raw or "iterations_per_stage" in raw:
            raise ConfigError("[schedule] takes either 'stages' or 'num_stages'/'iterations_per_stage', not both")
        stages = []
        for i, st in enumerate(raw["stages"]):
            if not isinstance(st, (list, tuple)) or len(st) not in (1, 2):
                raise ConfigError(f"schedule.stages[{i}] must be [h_max, iterations] or [h_max]")
            stages.append((st[0], st[1] if len(st) == 2 else None))
        return HorizonSchedule(tuple(stages))
    if raw:
        return default_schedule(env.max_horizon_cap, raw.get("num_stages", 1), raw.get("iterations_per_stage", 1))
    return None


def from_dict(data: dict) -> RunConfig:
    """Build a validated :class:`RunConfig` from a nested mapping."""
    data = dict(data)
    valid_top = [*_TOP_LEVEL, *_SECTIONS, "task", "schedule", *_ALIASES]
    _reject_unknown("", data, valid_top)
    for alias, target in _ALIASES.items():
        if alias in data:
            data[target] = data.pop(alias)
    kwargs: dict[str, Any] = {}
    explicit_stages = "num_stages" in data.get("env", {})
    for name, cls in _SECTIONS.items():
        raw = data.pop(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"[{name}] must be a table")
        _reject_unknown(name, raw, _field_names(cls))
        if name == "ablation":
            raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        kwargs[name] = cls(**raw)
    task_raw = data.pop("task", {})
    _reject_unknown("task", task_raw, _TASK_KEYS)
    env = kwargs["env"]
    if "stage_targets" in task_raw:
        if not explicit_stages and len(task_raw["stage_targets"]) != env.num_stages:
            env = kwargs["env"] = dataclasses.replace(env, num_stages=len(task_raw["stage_targets"]))
        kwargs["task"] = TaskSpec(
            task_id=task_raw.get("task_id", "custom"),
            instruction=task_raw.get("instruction", ""),
            stage_targets=tuple(tuple(t) for t in task_raw["stage_targets"]),
            start=tuple(task_raw.get("start", (0, 0))),
            terminal_cell=tuple(task_raw["terminal_cell"]) if "terminal_cell" in task_raw else None,
        )
    else:
        default = chain_task(env.grid_size, env.num_stages, task_raw.get("task_id"))
        kwargs["task"] = dataclasses.replace(
            default,
            instruction=task_raw.get("instruction", default.instruction),
            start=tuple(task_raw.get("start", default.start)),
            terminal_cell=tuple(task_raw["terminal_cell"]) if "terminal_cell" in task_raw else None,
        )
    kwargs["schedule"] = _build_schedule(data.pop("schedule", {}), env)
    kwargs.update(data)
    return RunConfig(**kwargs)


def to_dict(config: RunConfig) -> dict:
    """Fully materialized nested mapping; ``from_dict(to_dict(c)) == c``."""
    out: dict[str, Any] = {name: getattr(config, name) for name in _TOP_LEVEL}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(config, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
    task = config.task
    out["task"] = {
        "task_id": task.task_id,
        "instruction": task.instruction,
        "stage_targets": [list(t) for t in task.stage_targets],
        "start": list(task.start),
        "terminal_cell": list(task.terminal_cell),
    }
    out["schedule"] = {"stages": [[h] if it is None else [h, it] for h, it in config.schedule.stages]}
    return out


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides: Iterable[str | tuple[str, Any]]) -> dict:
    """Apply ``key=value`` (dotted keys address sections) on a nested mapping copy."""
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, text = item.split("=", 1)
            value = _parse_value(text.strip())
        else:
            key, value = item
        parts = key.strip().split(".")
        target = data
        for p in parts[:-1]:
            target = target.setdefault(p, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {key!r} does not address a table")
        if parts[0] == "schedule" and parts[-1] in ("num_stages", "iterations_per_stage"):
            target.pop("stages", None)
        if parts == ["schedule", "stages"]:
            target.pop("num_stages", None)
            target.pop("iterations_per_stage", None)
        target[parts[-1]] = value
    return data


def load_config(path, overrides: Iterable[str | tuple[str, Any]] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return from_dict(apply_overrides(data, overrides))


def with_overrides(config: RunConfig, overrides: Iterable[str | tuple[str, Any]]) -> RunConfig:
    return from_dict(apply_overrides(to_dict(config), overrides))


def dump_config(config: RunConfig) -> str:
    return tomli_w.dumps(to_dict(config))


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(dump_config(config))
