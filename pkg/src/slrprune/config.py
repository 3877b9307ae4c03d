"""Run configuration: an INI-style ``key = value`` file with section headers.

Every field lives in exactly one section and can also be overridden from
the command line as ``--<field-with-dashes>``. Validation errors name the
offending field as ``section.key``.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .admm import AdmmConfig
from .exceptions import ConfigError
from .optim import OPTIMIZER_KINDS, OptimizerConfig
from .slr import SOC_MODES, STAGE2_NUMERATORS, SlrConfig

RUN_METHODS = ("slr", "admm", "baseline")


def _f(section, default, help_text, choices=None):
    return field(default=default, metadata={"section": section, "help": help_text, "choices": choices})


@dataclass
class RunConfig:
    # [run]
    model: str = _f("run", "mlp-784-300-100-10", "model name: mlp-784-300-100-10, lenet5-like or mlp-<sizes>")
    method: str = _f("run", "slr", "pruning method", RUN_METHODS)
    seed: int = _f("run", 0, "run seed; every random stream derives from it")
    output_dir: str = _f("run", "runs", "directory for checkpoints, logs and tables")
    checkpoint: Optional[str] = _f("run", None, "input checkpoint (defaults depend on the subcommand)")
    # [data]
    mnist_dir: Optional[str] = _f("data", "data/mnist", "directory holding MNIST IDX files (the bundled subset is exported there if missing)")
    train_images: Optional[str] = _f("data", None, "IDX training images (overrides mnist_dir)")
    train_labels: Optional[str] = _f("data", None, "IDX training labels")
    test_images: Optional[str] = _f("data", None, "IDX test images")
    test_labels: Optional[str] = _f("data", None, "IDX test labels")
    synthetic: Optional[str] = _f("data", None, "synthetic blobs 'points,classes,dim' used instead of IDX data")
    train_limit: Optional[int] = _f("data", None, "use only the first N training samples")
    # [sparsity]
    keep_fraction: float = _f("sparsity", 0.1, "fraction of weights kept in every prunable layer")
    layer_keep: Optional[str] = _f("sparsity", None, "per-layer keep fractions 'name:frac,name:frac'")
    # [optimizer]
    optimizer: str = _f("optimizer", "adam", "optimizer for the loss subproblem", OPTIMIZER_KINDS)
    lr: float = _f("optimizer", 1e-2, "learning rate for the loss subproblem")
    batch_size: int = _f("optimizer", 128, "minibatch size")
    momentum: float = _f("optimizer", 0.9, "momentum coefficient (optimizer = momentum)")
    train_lr: float = _f("optimizer", 1e-3, "Adam learning rate for baseline training and retraining")
    # [slr]
    rho: float = _f("slr", 0.1, "quadratic penalty coefficient (shared with ADMM)")
    M: float = _f("slr", 300.0, "stepsize-parameter constant M > 1")
    r: float = _f("slr", 0.1, "stepsize-parameter exponent 0 < r < 1")
    s0: float = _f("slr", 1e-2, "initial multiplier stepsize")
    inner_steps: Optional[int] = _f("slr", None, "minibatch steps per iteration (default: one epoch)")
    soc_fail_cap: int = _f("slr", 3, "consecutive SOC failures before a forced update (0 disables)")
    soc_mode: str = _f("slr", "gate", "whether SOCs gate multiplier updates", SOC_MODES)
    stage2_numerator: str = _f("slr", "intermediate", "violation in the second stepsize numerator", STAGE2_NUMERATORS)
    gamma: float = _f("slr", 1.0, "violation weight in the dual overestimates")
    # [budget]
    train_epochs: int = _f("budget", 10, "baseline training epochs")
    epochs: int = _f("budget", 20, "pruning epochs (same for every method)")
    retrain_epochs: int = _f("budget", 3, "masked retraining epochs")
    check_every: int = _f("budget", 1, "epochs between hardprune accuracy checks")
    threshold_drop: float = _f("budget", 0.02, "accuracy threshold = baseline accuracy minus this")

    def section_of(self, name):
        return _FIELDS[name].metadata["section"]

    def qualified(self, name):
        return f"{self.section_of(name)}.{name}"

    def validate(self, check_files=True):
        """Raise :class:`ConfigError` naming the first invalid field."""
        for name, f in _FIELDS.items():
            choices = f.metadata["choices"]
            value = getattr(self, name)
            if choices and value not in choices:
                raise ConfigError(self.qualified(name), f"must be one of {', '.join(choices)}; got {value!r}")
        try:
            from .models import build_model
            build_model(self.model, 0)
        except ValueError as exc:
            raise ConfigError(self.qualified("model"), str(exc)) from None
        checks = [
            ("keep_fraction", 0.0 <= self.keep_fraction <= 1.0, "must lie in [0, 1]"),
            ("lr", self.lr > 0, "must be > 0"),
            ("train_lr", self.train_lr > 0, "must be > 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("rho", self.rho > 0, "must be > 0"),
            ("M", self.M > 1, "must be > 1"),
            ("r", 0 < self.r < 1, "must lie in (0, 1)"),
            ("s0", self.s0 > 0, "must be > 0"),
            ("inner_steps", self.inner_steps is None or self.inner_steps >= 1, "must be >= 1"),
            ("soc_fail_cap", self.soc_fail_cap >= 0, "must be >= 0"),
            ("gamma", 0 <= self.gamma <= 1, "must lie in [0, 1]"),
            ("train_epochs", self.train_epochs >= 0, "must be >= 0"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("retrain_epochs", self.retrain_epochs >= 0, "must be >= 0"),
            ("check_every", self.check_every >= 1, "must be >= 1"),
            ("train_limit", self.train_limit is None or self.train_limit >= 1, "must be >= 1"),
            ("seed", self.seed >= 0, "must be >= 0"),
            ("threshold_drop", 0 <= self.threshold_drop <= 1, "must lie in [0, 1]"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(self.qualified(name), f"{message}; got {getattr(self, name)!r}")
        self.layer_keep_map()
        if self.synthetic is not None:
            self.synthetic_spec()
        if check_files:
            for name in ("train_images", "train_labels", "test_images", "test_labels", "checkpoint"):
                value = getattr(self, name)
                if value is not None and not Path(value).exists():
                    raise ConfigError(self.qualified(name), f"file not found: {value}")
            idx = [self.train_images, self.train_labels, self.test_images, self.test_labels]
            if any(v is not None for v in idx) and any(v is None for v in idx):
                raise ConfigError(self.qualified("train_images"),
                                  "train/test images and labels must be given together")
        return self

    def layer_keep_map(self):
        if not self.layer_keep:
            return {}
        out = {}
        for item in self.layer_keep.split(","):
            name, sep, frac = item.strip().partition(":")
            try:
                value = float(frac)
            except ValueError:
                value = None
            if not sep or not name or value is None or not 0.0 <= value <= 1.0:
                raise ConfigError(self.qualified("layer_keep"),
                                  f"expected 'name:fraction' with fraction in [0, 1], got {item!r}")
            out[name] = value
        return out

    def synthetic_spec(self):
        try:
            points, classes, dim = (int(v) for v in self.synthetic.split(","))
        except ValueError:
            raise ConfigError(self.qualified("synthetic"),
                              f"expected 'points,classes,dim', got {self.synthetic!r}") from None
        if min(points, classes, dim) < 1:
            raise ConfigError(self.qualified("synthetic"), "all entries must be >= 1")
        return points, classes, dim

    def optimizer_config(self):
        return OptimizerConfig(kind=self.optimizer, lr=self.lr, momentum=self.momentum,
                               batch_size=self.batch_size)

    def train_optimizer_config(self):
        return OptimizerConfig(kind="adam", lr=self.train_lr, batch_size=self.batch_size)

    def engine_config(self, method=None):
        method = method or self.method
        if method == "slr":
            return SlrConfig(rho=self.rho, M=self.M, r=self.r, s0=self.s0,
                             inner_steps=self.inner_steps, soc_fail_cap=self.soc_fail_cap,
                             soc_mode=self.soc_mode, stage2_numerator=self.stage2_numerator,
                             gamma=self.gamma)
        return AdmmConfig(rho=self.rho, inner_steps=self.inner_steps, gamma=self.gamma)

    def to_ini(self):
        """Render as a config file that :func:`load_config` reads back."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for name, f in _FIELDS.items():
            section = f.metadata["section"]
            if not parser.has_section(section):
                parser.add_section(section)
            value = getattr(self, name)
            if value is not None:
                parser.set(section, name, str(value))
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in parser.items(section))
            lines.append("")
        return "\n".join(lines)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TYPES = {
    name: (int if f.type in ("int", "Optional[int]") else
           float if f.type in ("float", "Optional[float]") else str)
    for name, f in _FIELDS.items()
}


def field_names():
    return list(_FIELDS)


def field_help(name):
    f = _FIELDS[name]
    return f.metadata["help"], f.metadata["choices"], f.default


def field_type(name):
    return _TYPES[name]


def coerce(name, raw):
    """Convert the text ``raw`` to the type of field ``name``."""
    if name not in _FIELDS:
        raise ConfigError(name, "unknown field")
    if isinstance(raw, str) and raw.strip().lower() in ("", "none"):
        if _FIELDS[name].default is None:
            return None
        raise ConfigError(RunConfig().qualified(name), "a value is required")
    kind = _TYPES[name]
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(RunConfig().qualified(name),
                          f"expected {kind.__name__}, got {raw!r}") from None


def load_config(path=None, overrides=None):
    """Build a :class:`RunConfig` from an optional file plus overrides.

    Args:
        path: INI file; sections must match each field's section.
        overrides: field name -> raw value (strings are coerced).
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc.message}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in _FIELDS:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                expected = _FIELDS[key].metadata["section"]
                if expected != section:
                    raise ConfigError(f"{section}.{key}", f"belongs in section [{expected}]")
                values[key] = coerce(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = coerce(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)
