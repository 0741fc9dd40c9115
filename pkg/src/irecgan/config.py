"""Experiment configuration: TOML files, presets and validation.

Precedence, highest first: command-line flags (``--seed``, ``--threads``,
``--out`` and ``--set section.key=value``), then the config file, then the
built-in defaults below. Unknown sections or keys are rejected.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .training.loop import METHODS, ONLINE_METHODS, TrainSchedule

PRESET_DIR = Path(__file__).parent / "presets"
ALL_METHODS = tuple(dict.fromkeys(METHODS + ONLINE_METHODS))


class ConfigError(ValueError):
    pass


@dataclass
class SimulatorConfig:
    m: int = 10
    n: int = 50
    k: int = 10
    seed: int | None = None  # None: derived from the master seed


@dataclass
class ModelConfig:
    embedding: int = 16
    hidden: int = 32
    layers: int = 1
    lambda_p: float = 1.0
    disc_temperature: float = 0.1


@dataclass
class DataConfig:
    policy: str = "mix"
    size: int = 200
    t_max: int = 40


@dataclass
class TrainConfig:
    method: str = "IRecGAN"
    checkpoint_every: int = 5


@dataclass
class EvalConfig:
    mode: str = "coverage"
    model: str = "auto"
    episodes: int = 1000
    heldout_size: int = 500


@dataclass
class OnlineConfig:
    iterations: int = 20
    sequences: int = 200
    methods: list = field(default_factory=lambda: list(ONLINE_METHODS))
    online_epochs: int = 1
    offline_epochs: int = 3
    adversarial_epochs: int = 2
    eval_episodes: int = 200


@dataclass
class BiasConfig:
    m: int = 3
    n: int = 4
    k: int = 2
    horizon: int = 3
    policy: str = "random"
    lambda1: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    w: float = 1.0
    reward_shift: float = 0.0
    identity: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    threads: int = 1
    out: str = "runs/default"
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    bias: BiasConfig = field(default_factory=BiasConfig)

    def validate(self) -> None:
        _validate(self)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def simulator_seed(self) -> int:
        from .seeding import derive_seed
        s = self.simulator.seed
        return derive_seed(self.seed, "simulator") if s is None else s


_SECTION_TYPES = {
    "simulator": SimulatorConfig, "model": ModelConfig, "data": DataConfig,
    "schedule": TrainSchedule, "train": TrainConfig, "eval": EvalConfig,
    "online": OnlineConfig, "bias": BiasConfig,
}
_TOP_LEVEL = ("seed", "threads", "out")


def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def _apply(cfg: ExperimentConfig, data: dict, origin: str) -> None:
    for key, value in data.items():
        if key in _TOP_LEVEL:
            setattr(cfg, key, _coerce(value, getattr(cfg, key), f"{origin}: {key}"))
            continue
        if key not in _SECTION_TYPES:
            raise ConfigError(f"{origin}: unknown key or section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{origin}: [{key}] must be a table")
        section = getattr(cfg, key)
        names = {f.name for f in dataclasses.fields(section)}
        for sub, v in value.items():
            if sub not in names:
                raise ConfigError(f"{origin}: unknown key {key}.{sub}")
            cur = getattr(section, sub)
            if cur is None:  # optional integer
                if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
                    raise ConfigError(f"{origin}: {key}.{sub}: expected an integer")
            else:
                v = _coerce(v, cur, f"{origin}: {key}.{sub}")
            object.__setattr__(section, sub, v)


def _validate(cfg: ExperimentConfig) -> None:
    s = cfg.schedule
    try:
        s.validate()
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    sim = cfg.simulator
    if sim.m < 2 or sim.n < 1 or sim.k < 1:
        raise ConfigError("simulator: need m >= 2, n >= 1, k >= 1")
    if sim.k > sim.n:
        raise ConfigError(f"simulator: slate size k={sim.k} exceeds item count n={sim.n}")
    mdl = cfg.model
    if min(mdl.embedding, mdl.hidden, mdl.layers) < 1:
        raise ConfigError("model: embedding, hidden and layers must be >= 1")
    if mdl.disc_temperature <= 0:
        raise ConfigError("model: disc_temperature must be positive")
    if cfg.data.policy not in ("random", "max", "mix"):
        raise ConfigError(f"data: unknown logging policy {cfg.data.policy!r}")
    if cfg.data.size < 1:
        raise ConfigError("data: size must be >= 1")
    if cfg.data.t_max < 1:
        raise ConfigError("data: t_max must be >= 1")
    if cfg.train.method not in METHODS:
        raise ConfigError(f"train: method must be one of {METHODS}")
    if cfg.train.method in ("LSTM", "PG", "PGU") and s.d_steps > 0:
        raise ConfigError(f"train: method {cfg.train.method} has no discriminator; "
                          "set schedule.d_steps = 0")
    if cfg.train.checkpoint_every < 1:
        raise ConfigError("train: checkpoint_every must be >= 1")
    if cfg.eval.mode not in ("coverage", "reward", "rerank"):
        raise ConfigError(f"eval: unknown mode {cfg.eval.mode!r}")
    if cfg.eval.model not in ("auto", "agent", "user"):
        raise ConfigError("eval: model must be auto, agent or user")
    if cfg.eval.episodes < 1 or cfg.eval.heldout_size < 1:
        raise ConfigError("eval: episodes and heldout_size must be >= 1")
    on = cfg.online
    bad = [m for m in on.methods if m not in ONLINE_METHODS]
    if bad or not on.methods:
        raise ConfigError(f"online: methods must be a non-empty subset of {ONLINE_METHODS}")
    if on.iterations < 1 or on.sequences < 1 or on.eval_episodes < 1:
        raise ConfigError("online: iterations, sequences and eval_episodes must be >= 1")
    b = cfg.bias
    if b.k > b.n or b.m < 2 or b.horizon < 1:
        raise ConfigError("bias: need k <= n, m >= 2, horizon >= 1")
    if b.policy not in ("random", "max", "mix"):
        raise ConfigError(f"bias: unknown logging policy {b.policy!r}")
    if not b.lambda1 or any(not 0.0 < float(x) <= 1.0 for x in b.lambda1):
        raise ConfigError("bias: lambda1 values must lie in (0, 1]")
    if b.w <= 0:
        raise ConfigError("bias: w must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


def parse_override(text: str) -> dict:
    """``section.key=value`` (value in TOML syntax, bare words taken as strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    path, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    parts = path.strip().split(".")
    out: dict = {}
    cur = out
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    preset = PRESET_DIR / f"{name}.toml"
    if preset.exists():
        return preset
    raise ConfigError(f"config file {name!r} not found (and no preset of that name)")


def load_config(path: str | None = None, overrides: list | None = None,
                seed: int | None = None, threads: int | None = None,
                out: str | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        p = resolve_config_path(path)
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        _apply(cfg, data, str(p))
    for text in overrides or []:
        _apply(cfg, parse_override(text), "--set")
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    if out is not None:
        cfg.out = out
    _validate(cfg)
    return cfg


def dumps_toml(cfg: ExperimentConfig) -> str:
    """Serialize a config back to TOML (only the value types used here)."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return str(v)

    d = cfg.to_dict()
    lines = [f"{k} = {fmt(d[k])}" for k in _TOP_LEVEL]
    for sec in _SECTION_TYPES:
        lines.append("")
        lines.append(f"[{sec}]")
        for k, v in d[sec].items():
            if v is not None:
                lines.append(f"{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"
