"""Experiment configuration: a flat key/value text file with optional sections.

Format (one entry per line; ``#`` at line start or after whitespace starts a comment)::

    master_seed = 7
    L = 1
    [alpha]
    kind = "scaled_identity"
    norm = 0.1
    [z]
    r = [1.05]
    theta = [0.0]

A ``[section]`` header prefixes the following keys with ``section.``, so the
last two entries could equally be written ``z.r = [1.05]``.  Values are JSON
literals (numbers, lists, quoted strings, true/false); a bare word is read as
a string.  The ``config`` object of a run's summary.json is accepted as input
too, which reproduces that run.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .disorder import ZipperParams
from .errors import ConfigInvalid
from .moments import WindowPolicy

ENV_THREADS = "ZIPPERLAB_THREADS"


@dataclass
class ExperimentConfig:
    experiment_id: str = "run"
    master_seed: int = 0
    L: int = 1
    alpha_kind: str = "scaled_identity"
    alpha_norm: float = 0.1
    bernoulli_p: float = 0.5
    z_r: list = field(default_factory=lambda: [1.05])
    z_theta: list = field(default_factory=lambda: [0.0])
    s: list = field(default_factory=lambda: [0.1])
    distances: list = field(default_factory=lambda: [4, 8, 12, 16, 20])
    window: str = "reduced"
    n_samples: int = 100
    n_max: int = 50
    boundary: str = "identity"
    norm_kind: str = "spectral"
    threads: Optional[int] = None
    output_dir: str = "out"
    exclusion_threshold: int = 3
    moments_quantities: list = field(default_factory=lambda: ["fractional_green"])
    moments_k0: int = 0
    moments_coords: list = field(default_factory=lambda: [0, 0])
    moments_inverse_mode: str = "inverse"
    lyapunov_n_steps: int = 1000
    lyapunov_n_realizations: int = 10
    green_n_instances: int = 20
    green_span: list = field(default_factory=lambda: [3, 8])
    dynloc_source: list = field(default_factory=lambda: [1, 0])
    spectral_n: int = 3
    spectral_r: list = field(default_factory=lambda: [0.9, 0.95, 0.99])
    spectral_interval: list = field(default_factory=lambda: [0, 7])
    spectral_entry: list = field(default_factory=lambda: [2, 0, 3, 0])

    # -- conversion -------------------------------------------------------------------

    @staticmethod
    def field_for_key(key: str) -> str:
        name = key.strip().replace(".", "_").replace("-", "_")
        if name not in _FIELD_NAMES:
            raise ConfigInvalid(f"unknown configuration key {key!r}")
        return name

    def to_dict(self) -> dict:
        return {_dotted(f.name): getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        cfg = cls()
        for key, value in mapping.items():
            cfg.set(key, value)
        cfg.validate()
        return cfg

    def set(self, key: str, value: Any) -> None:
        name = self.field_for_key(key)
        default = getattr(ExperimentConfig(), name)
        setattr(self, name, _coerce(name, value, default))

    def apply_override(self, text: str) -> None:
        key, sep, raw = text.partition("=")
        if not sep:
            raise ConfigInvalid(f"override {text!r} is not of the form key=value")
        self.set(key, parse_value(raw))
        self.validate()

    # -- derived objects --------------------------------------------------------------

    def params(self) -> ZipperParams:
        kw = dict(bernoulli_p=self.bernoulli_p, norm_kind=self.norm_kind, master_seed=self.master_seed)
        if self.alpha_kind == "scaled_identity":
            return ZipperParams.scaled_identity(self.L, self.alpha_norm, **kw)
        return ZipperParams.scaled_random(self.L, self.alpha_norm, **kw)

    def z_grid(self) -> list[tuple[float, float, complex]]:
        return [(r, th, r * np.exp(1j * th)) for r in self.z_r for th in self.z_theta]

    def window_policy(self) -> WindowPolicy:
        return WindowPolicy.parse(self.window)

    def resolved_threads(self, cli_threads: Optional[int] = None) -> int:
        if cli_threads is not None:
            return max(1, int(cli_threads))
        if self.threads is not None:
            return max(1, int(self.threads))
        env = os.environ.get(ENV_THREADS)
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigInvalid(f"{ENV_THREADS}={env!r} is not an integer") from exc
        return 1

    # -- validation -------------------------------------------------------------------

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigInvalid(msg)

        need(self.L >= 1, "L must be a positive integer")
        need(self.alpha_kind in ("scaled_identity", "scaled_random"), "alpha.kind must be scaled_identity or scaled_random")
        need(0.0 < self.alpha_norm < 1.0, "alpha.norm must lie in (0, 1)")
        need(0.0 < self.bernoulli_p < 1.0, "bernoulli_p must lie in (0, 1)")
        need(len(self.z_r) > 0 and len(self.z_theta) > 0, "z grid must be non-empty")
        need(all(r > 0 for r in self.z_r), "z.r entries must be positive")
        need(all(0.0 < s < 1.0 for s in self.s), "s entries must lie in (0, 1)")
        need(all(int(d) == d and d >= 0 for d in self.distances), "distances must be non-negative integers")
        need(self.n_samples >= 2, "n_samples must be at least 2")
        need(self.n_max >= 0, "n_max must be non-negative")
        need(self.boundary in ("identity", "haar"), "boundary must be identity or haar")
        need(self.norm_kind in ("spectral", "frobenius"), "norm_kind must be spectral or frobenius")
        need(self.threads is None or self.threads >= 1, "threads must be positive")
        need(len(self.green_span) == 2 and 1 <= self.green_span[0] <= self.green_span[1], "green.span must be [lo, hi]")
        need(len(self.dynloc_source) == 2, "dynloc.source must be [block, coordinate]")
        need(len(self.moments_coords) == 2, "moments.coords must be [p, q]")
        need(self.moments_inverse_mode in ("inverse", "reciprocal"), "moments.inverse_mode must be inverse or reciprocal")
        need(all(0.0 < r < 1.0 for r in self.spectral_r), "spectral.r entries must lie in (0, 1)")
        need(len(self.spectral_entry) == 4, "spectral.entry must be [k, p, l, q]")
        try:
            WindowPolicy.parse(self.window)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    def validate_off_circle(self) -> None:
        if any(r == 1.0 for r in self.z_r):
            raise ConfigInvalid("z.r must differ from 1 for resolvent experiments")


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}
_SECTIONS = ("alpha", "z", "moments", "lyapunov", "green", "dynloc", "spectral")


def _dotted(name: str) -> str:
    for sec in _SECTIONS:
        if name.startswith(sec + "_"):
            return sec + "." + name[len(sec) + 1 :]
    return name


def _coerce(name: str, value: Any, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int) or name == "threads":
            if value is None:
                return None
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            return list(value) if isinstance(value, (list, tuple)) else [value]
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad value {value!r} for {_dotted(name)}") from exc


def parse_value(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if len(raw) >= 2 and raw[0] == raw[-1] == "'":
            return raw[1:-1]
        return raw


def parse_text(text: str) -> dict:
    out: dict = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = re.split(r"(?:^|\s)#", line, maxsplit=1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            section = line[1:-1].strip()
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigInvalid(f"line {lineno}: expected key = value")
        key = key.strip()
        out[f"{section}.{key}" if section else key] = parse_value(raw)
    return out


def load_config(path: str | os.PathLike | None, overrides=()) -> ExperimentConfig:
    mapping: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigInvalid(f"config file {p} not found")
        text = p.read_text()
        if p.suffix == ".json":
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{p}: {exc}") from exc
            mapping = data.get("config", data)
        else:
            mapping = parse_text(text)
    cfg = ExperimentConfig.from_mapping(mapping)
    for item in overrides:
        cfg.apply_override(item)
    return cfg
