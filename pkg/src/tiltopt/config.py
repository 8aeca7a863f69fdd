"""Run configuration: a strict YAML schema over sim, model, train, and seeds.

Unknown keys are hard errors with file/line diagnostics, so a typo like
`intersite_min` next to `intersite_min_m` cannot silently fall back to a
default. The run seed is deliberately not a config key; it comes from the
command line so one file describes a whole seed sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import yaml

from .agents import TrainHyper
from .simulator import SimConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ModelHyper:
    d_hidden: int = 16
    n_heads: int = 6
    n_layers: int = 2
    hidden: tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig
    model: ModelHyper
    train: TrainHyper
    seeds: tuple[int, ...]
    checkpoint_every: int   # 0 disables periodic checkpoints (final only)


_SIM_KEYS = {f.name for f in fields(SimConfig)} - {"seed"}
_MODEL_KEYS = {f.name for f in fields(ModelHyper)}
_TRAIN_KEYS = {f.name for f in fields(TrainHyper)} | {"checkpoint_every"}
_TOP_KEYS = {"sim", "model", "train", "seeds"}


def _key_lines(node, prefix=""):
    """Map dotted key paths to 1-based line numbers from the YAML node tree."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            name = f"{prefix}{k.value}"
            out[name] = k.start_mark.line + 1
            out.update(_key_lines(v, name + "."))
    return out


class _Checker:
    def __init__(self, path, lines):
        self.path = path
        self.lines = lines

    def fail(self, key, message):
        line = self.lines.get(key)
        where = f"{self.path}:{line}" if line else str(self.path)
        raise ConfigError(f"{where}: {message}")

    def reject_unknown(self, block, present, allowed):
        for key in present:
            if key not in allowed:
                dotted = f"{block}.{key}" if block else key
                self.fail(dotted, f"unknown key {dotted!r}")

    def coerce(self, block, key, value, kind):
        dotted = f"{block}.{key}" if block else key
        if kind is bool:
            if not isinstance(value, bool):
                self.fail(dotted, f"{dotted} must be true or false")
            return value
        if isinstance(value, bool):   # bool passes isinstance(int) checks
            self.fail(dotted, f"{dotted} must be a number")
        if kind is int:
            if not isinstance(value, int):
                self.fail(dotted, f"{dotted} must be an integer")
            return value
        if kind is float:
            if not isinstance(value, (int, float)):
                self.fail(dotted, f"{dotted} must be a number")
            return float(value)
        raise AssertionError(kind)


def _coerce_block(chk, block, raw, field_types):
    out = {}
    for key, value in raw.items():
        out[key] = chk.coerce(block, key, value, field_types[key])
    return out


def _field_types(cls):
    types = {}
    for f in fields(cls):
        types[f.name] = type(f.default) if not isinstance(f.default, tuple) else tuple
    return types


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run config; every problem raises ConfigError."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    chk = _Checker(path, lines)
    chk.reject_unknown("", data, _TOP_KEYS)

    sim_raw = data.get("sim", {}) or {}
    model_raw = data.get("model", {}) or {}
    train_raw = data.get("train", {}) or {}
    for block, raw in (("sim", sim_raw), ("model", model_raw), ("train", train_raw)):
        if not isinstance(raw, dict):
            chk.fail(block, f"{block} must be a mapping")
    chk.reject_unknown("sim", sim_raw, _SIM_KEYS)
    chk.reject_unknown("model", model_raw, _MODEL_KEYS)
    chk.reject_unknown("train", train_raw, _TRAIN_KEYS)

    sim_types = _field_types(SimConfig)
    sim = replace(SimConfig(), **_coerce_block(chk, "sim", sim_raw, sim_types))

    model_types = _field_types(ModelHyper)
    model_vals = {}
    for key, value in model_raw.items():
        if key == "hidden":
            if (not isinstance(value, list) or not value
                    or any(isinstance(v, bool) or not isinstance(v, int)
                           for v in value)):
                chk.fail("model.hidden",
                         "model.hidden must be a nonempty list of integers")
            model_vals[key] = tuple(value)
        else:
            model_vals[key] = chk.coerce("model", key, value, model_types[key])
    model = replace(ModelHyper(), **model_vals)

    checkpoint_every = 2500
    if "checkpoint_every" in train_raw:
        checkpoint_every = chk.coerce("train", "checkpoint_every",
                                      train_raw.pop("checkpoint_every"), int)
    train_types = _field_types(TrainHyper)
    train = replace(TrainHyper(), **_coerce_block(chk, "train", train_raw,
                                                  train_types))

    seeds_raw = data.get("seeds", [0])
    if (not isinstance(seeds_raw, list) or not seeds_raw
            or any(isinstance(s, bool) or not isinstance(s, int)
                   for s in seeds_raw)):
        chk.fail("seeds", "seeds must be a nonempty list of integers")
    if len(set(seeds_raw)) != len(seeds_raw):
        chk.fail("seeds", "seeds must be distinct")

    cfg = RunConfig(sim=sim, model=model, train=train,
                    seeds=tuple(seeds_raw), checkpoint_every=checkpoint_every)
    _validate(chk, cfg)
    return cfg


def _validate(chk, cfg: RunConfig) -> None:
    sim, train = cfg.sim, cfg.train
    if sim.n_rings < 1:
        chk.fail("sim.n_rings", "sim.n_rings must be at least 1")
    if sim.users < 1:
        chk.fail("sim.users", "sim.users must be positive")
    if sim.neighbors < 0:
        chk.fail("sim.neighbors", "sim.neighbors must be nonnegative")
    if sim.episode_len < 1:
        chk.fail("sim.episode_len", "sim.episode_len must be positive")
    if not 0 < sim.intersite_min_m <= sim.intersite_max_m:
        chk.fail("sim.intersite_min_m",
                 "intersite range must satisfy 0 < min <= max")
    if train.steps < 1:
        chk.fail("train.steps", "train.steps must be positive")
    if not 0.0 <= train.gamma <= 1.0:
        chk.fail("train.gamma", "train.gamma must lie in [0, 1]")
    if train.lr < 0.0:
        chk.fail("train.lr", "train.lr must be nonnegative")
    if train.batch_size < 1:
        chk.fail("train.batch_size", "train.batch_size must be positive")
    if train.warmup < 1:
        chk.fail("train.warmup", "train.warmup must be positive")
    if train.sync_every < 1:
        chk.fail("train.sync_every", "train.sync_every must be positive")
    if train.buffer_capacity < train.batch_size:
        chk.fail("train.buffer_capacity",
                 "train.buffer_capacity must be at least the batch size")
    if not 0.0 <= train.eps_end <= train.eps_start <= 1.0:
        chk.fail("train.eps_start",
                 "epsilon must satisfy 0 <= eps_end <= eps_start <= 1")
    if cfg.model.d_hidden < 1 or cfg.model.n_heads < 1 or cfg.model.n_layers < 1:
        chk.fail("model.d_hidden", "model sizes must be positive")
    if cfg.checkpoint_every < 0:
        chk.fail("train.checkpoint_every",
                 "train.checkpoint_every must be nonnegative")
