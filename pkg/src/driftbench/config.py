"""Flat ``section.key = value`` run configuration.

One setting per line, ``#`` starts a comment. Every key has a default, so an
empty file is a valid config. Unknown keys, duplicates and out-of-range
values are rejected with the offending key and line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable

from . import cda, engine, rfp
from .errors import ConfigError, InvalidInputError
from .model import OptimizerState


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _optional_int(raw: str) -> int | None:
    return None if raw.lower() in ("", "none", "auto") else int(raw)


def _optional_float(raw: str) -> float | None:
    return None if raw.lower() in ("", "none") else float(raw)


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.replace(",", " ").split())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(tok for tok in raw.replace(",", " ").split())


@dataclass(frozen=True)
class Setting:
    parse: Callable[[str], Any]
    check: Callable[[Any], bool] = lambda v: True
    hint: str = ""


def _in(lo: float, hi: float, lo_open: bool = False, hi_open: bool = False) -> Callable[[Any], bool]:
    def check(v) -> bool:
        if v is None:
            return True
        if not math.isfinite(v):
            return False
        above = v > lo if lo_open else v >= lo
        below = v < hi if hi_open else v <= hi
        return above and below

    return check


SCHEMA: dict[str, Setting] = {
    "stream.preset": Setting(str, lambda v: v in ("short", "long"), "short or long"),
    "stream.dim": Setting(int, lambda v: v >= 2, ">= 2"),
    "stream.n_classes": Setting(int, lambda v: v >= 2, ">= 2"),
    "stream.steps_per_domain": Setting(int, lambda v: v >= 1, ">= 1"),
    "stream.batch_size": Setting(int, lambda v: v >= 1, ">= 1"),
    "stream.label_noise": Setting(float, _in(0, 1, hi_open=True), "in [0, 1)"),
    "stream.separation": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "stream.shuffle": Setting(_bool, hint="true or false"),
    "model.hidden": Setting(int, lambda v: v >= 0, ">= 0"),
    "model.source_samples": Setting(int, lambda v: v >= 1, ">= 1"),
    "model.source_epochs": Setting(int, lambda v: v >= 0, ">= 0"),
    "model.source_lr": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "engine.mode": Setting(str, lambda v: v in engine.MODES, "one of " + ", ".join(engine.MODES)),
    "engine.alpha": Setting(_optional_float, _in(0, 1), "in [0, 1]"),
    "engine.restore_prob": Setting(float, _in(0, 1), "in [0, 1]"),
    "engine.student_dropout": Setting(_bool, hint="true or false"),
    "engine.k": Setting(_optional_int, lambda v: v is None or v >= 1, ">= 1 or auto"),
    "cda.policy": Setting(str, lambda v: v in ("linear_clamp", "exp_decay"), "linear_clamp or exp_decay"),
    "cda.alpha_bound": Setting(float, _in(0, 1, lo_open=True, hi_open=True), "in (0, 1)"),
    "cda.kappa": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "rfp.gamma": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "rfp.tau": Setting(float, _in(0, math.inf, hi_open=True), ">= 0"),
    "rfp.n_passes": Setting(int, lambda v: v >= 2, ">= 2"),
    "rfp.dropout_rate": Setting(float, _in(0, 1, hi_open=True), "in [0, 1)"),
    "optim.kind": Setting(str, lambda v: v in ("adam", "sgd"), "adam or sgd"),
    "optim.lr": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "optim.beta1": Setting(float, _in(0, 1, hi_open=True), "in [0, 1)"),
    "optim.beta2": Setting(float, _in(0, 1, hi_open=True), "in [0, 1)"),
    "optim.eps": Setting(float, _in(0, math.inf, lo_open=True, hi_open=True), "> 0"),
    "optim.weight_decay": Setting(float, _in(0, math.inf, hi_open=True), ">= 0"),
    "run.seeds": Setting(_int_list, lambda v: len(v) > 0 and all(s >= 0 for s in v), "non-negative integers"),
    "run.modes": Setting(_str_list, hint="comma-separated modes"),
    "run.out": Setting(str, lambda v: bool(v), "a directory path"),
    "run.jobs": Setting(int, lambda v: v >= 1, ">= 1"),
}


@dataclass(frozen=True)
class RunConfig:
    # stream
    preset: str = "long"
    dim: int = 16
    n_classes: int = 4
    steps_per_domain: int = 100
    batch_size: int = 16
    label_noise: float = 0.0
    separation: float = 4.0
    shuffle: bool = False
    # source model
    hidden: int = 0
    source_samples: int = 2000
    source_epochs: int = 300
    source_lr: float = 0.5
    # engine
    mode: str = "ctta_t"
    alpha: float | None = None
    restore_prob: float = 0.01
    student_dropout: bool = False
    k: int | None = None
    policy: str = "linear_clamp"
    alpha_bound: float = 0.99
    kappa: float = 0.1
    gamma: float = 0.4
    tau: float = 1.2
    n_passes: int = 8
    dropout_rate: float = 0.1
    # optimizer
    kind: str = "adam"
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    # orchestration
    seeds: tuple[int, ...] = (0,)
    modes: tuple[str, ...] = ()
    out: str = "out"
    jobs: int = 1
    source: dict = field(default_factory=dict, compare=False)  # key -> line it was set on

    def mode_specs(self) -> tuple[str, ...]:
        return self.modes or (self.mode,)

    def engine_config(self, mode_spec: str, seed: int) -> engine.EngineConfig:
        mode, alpha = parse_mode(mode_spec, self.alpha)
        return engine.EngineConfig(
            mode=mode,
            alpha=alpha,
            rfp=rfp.RfpConfig(self.n_passes, self.gamma, self.tau, self.dropout_rate),
            alpha_policy=cda.AlphaPolicy(self.policy, self.alpha_bound, self.kappa),
            restore_prob=self.restore_prob,
            optimizer=OptimizerState(
                kind=self.kind,
                lr=self.lr,
                beta1=self.beta1,
                beta2=self.beta2,
                eps=self.eps,
                weight_decay=self.weight_decay,
            ),
            master_seed=seed,
            student_dropout=self.student_dropout,
            k=self.k,
        )


# config key -> RunConfig attribute; the attribute is the key's last component
_ATTR = {key: key.split(".", 1)[1] if key != "cda.policy" else "policy" for key in SCHEMA}
assert set(_ATTR.values()) <= {f.name for f in fields(RunConfig)}


def parse_mode(spec: str, default_alpha: float | None = None) -> tuple[str, float | None]:
    """``"fixed_alpha:0.99"`` -> ("fixed_alpha", 0.99); other modes carry no alpha."""
    name, _, arg = spec.partition(":")
    if name not in engine.MODES:
        raise ConfigError(f"unknown mode {name!r}; choose from {', '.join(engine.MODES)}", key="run.modes")
    if name != "fixed_alpha":
        if arg:
            raise ConfigError(f"mode {name!r} takes no argument", key="run.modes")
        return name, None
    if not arg:
        if default_alpha is None:
            raise ConfigError("fixed_alpha needs engine.alpha (or write fixed_alpha:<value>)", key="engine.alpha")
        return name, default_alpha
    try:
        alpha = float(arg)
    except ValueError:
        raise ConfigError(f"bad alpha in mode {spec!r}", key="run.modes") from None
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha in mode {spec!r} must be in [0, 1]", key="run.modes")
    return name, alpha


def parse_text(text: str) -> RunConfig:
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected 'section.key = value'", line=lineno)
        if key not in SCHEMA:
            raise ConfigError("unknown key", key=key, line=lineno)
        if key in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", key=key, line=lineno)
        setting = SCHEMA[key]
        try:
            parsed = setting.parse(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r}: {exc}", key=key, line=lineno) from None
        if not setting.check(parsed):
            raise ConfigError(f"value {value!r} out of range (expected {setting.hint})", key=key, line=lineno)
        values[_ATTR[key]] = parsed
        lines[key] = lineno
    cfg = replace(RunConfig(), **values, source=lines)
    return validate(cfg)


def validate(cfg: RunConfig) -> RunConfig:
    """Cross-key checks; raises ConfigError naming the key (and its line when known)."""
    where = cfg.source.get
    if cfg.n_classes > cfg.dim:
        raise ConfigError("n_classes must not exceed dim", key="stream.n_classes", line=where("stream.n_classes"))
    if cfg.k is not None and cfg.k > (cfg.hidden or cfg.dim):
        raise ConfigError("k exceeds the feature dimension", key="engine.k", line=where("engine.k"))
    if cfg.mode == "fixed_alpha" and cfg.alpha is None and not cfg.modes:
        raise ConfigError("engine.mode = fixed_alpha requires engine.alpha", key="engine.alpha", line=where("engine.mode"))
    for spec in cfg.mode_specs():
        try:
            parse_mode(spec, cfg.alpha)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], key=exc.key, line=where(exc.key or "run.modes")) from None
    try:
        cfg.engine_config(cfg.mode_specs()[0], cfg.seeds[0])
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    return parse_text(text)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides (None means keep) and re-validate."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return validate(replace(cfg, **changes)) if changes else cfg
