"""Run configuration files: INI sections of key=value pairs.

The grammar is deliberately small: every key lives in a fixed section, has
a declared type and (unless required) a default.  Unknown sections or keys
are rejected by name rather than ignored, so a typo cannot silently run a
default.  ``resolved_text`` renders the fully defaulted configuration in
canonical form; its hash stamps every output file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields

from .nodes import CASES


class ConfigError(ValueError):
    pass


_REQUIRED = object()


def _floats(text):
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


# section -> key -> (parser, default); _REQUIRED marks keys with no default
SCHEMA = {
    "case": {
        "case": (str, _REQUIRED),
        "re": (float, 1.0),
        "h": (float, 0.0),
        "n_base": (int, 200),
        "h_surface": (float, 0.05),
        "h_far": (float, 0.0),
        "growth": (float, 1.3),
        "radius": (float, 0.5),
        "gamma": (float, 0.0),
        "mb": (int, 1),
        "apex_angle_deg": (float, 28.072),
        "lid_speed": (float, 1.0),
        "taylor_variant": (str, "corrected"),
        "box": (_floats, (-8.0, 30.0, -16.0, 16.0)),
        "extents": (_floats, ()),
    },
    "time": {
        "dt": (float, _REQUIRED),
        "t_end": (float, 0.0),
        "steady_tol": (float, 0.0),
        "max_steps": (int, 10_000_000),
    },
    "mls": {
        "dilation_factor": (float, 2.6),
        "min_neighbors": (int, 9),
        "offset_factor": (float, 0.5),
    },
    "solver": {
        "helmholtz_tol": (float, 1e-10),
        "poisson_tol": (float, 1e-8),
        "max_iter": (int, 5000),
        "precond": (str, "ilu"),
        "predictor": (str, "pressure_free"),
        "method": (str, "krylov"),
    },
    "output": {
        "outdir": (str, "out"),
        "snapshot_every": (int, 0),
        "diag_every": (int, 1),
        "drag_norm": (str, "standard"),
        "transient_fraction": (float, 0.5),
    },
    "suite": {
        "suite": (str, "none"),
        "h_levels": (_floats, ()),
        "dt_levels": (_floats, ()),
    },
}

_SECTION_OF = {key: sec for sec, keys in SCHEMA.items() for key in keys}


@dataclass
class RunConfig:
    case: str = ""
    re: float = 1.0
    h: float = 0.0
    n_base: int = 200
    h_surface: float = 0.05
    h_far: float = 0.0
    growth: float = 1.3
    radius: float = 0.5
    gamma: float = 0.0
    mb: int = 1
    apex_angle_deg: float = 28.072
    lid_speed: float = 1.0
    taylor_variant: str = "corrected"
    box: tuple = (-8.0, 30.0, -16.0, 16.0)
    extents: tuple = ()
    dt: float = 0.0
    t_end: float = 0.0
    steady_tol: float = 0.0
    max_steps: int = 10_000_000
    dilation_factor: float = 2.6
    min_neighbors: int = 9
    offset_factor: float = 0.5
    helmholtz_tol: float = 1e-10
    poisson_tol: float = 1e-8
    max_iter: int = 5000
    precond: str = "ilu"
    predictor: str = "pressure_free"
    method: str = "krylov"
    outdir: str = "out"
    snapshot_every: int = 0
    diag_every: int = 1
    drag_norm: str = "standard"
    transient_fraction: float = 0.5
    suite: str = "none"
    h_levels: tuple = ()
    dt_levels: tuple = ()

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"case: unknown case {self.case!r}, expected one of {CASES}")
        if self.re <= 0.0:
            raise ConfigError(f"re: must be positive, got {self.re}")
        if self.dt <= 0.0:
            raise ConfigError(f"dt: must be positive, got {self.dt}")
        if self.t_end <= 0.0 and self.steady_tol <= 0.0:
            raise ConfigError("t_end/steady_tol: need an end condition "
                              "(t_end > 0 or steady_tol > 0)")
        if self.suite not in ("none", "spatial", "temporal"):
            raise ConfigError(f"suite: unknown suite {self.suite!r}")
        if self.suite == "spatial" and len(self.h_levels) < 3:
            raise ConfigError("h_levels: spatial suite needs at least 3 levels")
        if self.suite == "temporal" and len(self.dt_levels) < 3:
            raise ConfigError("dt_levels: temporal suite needs at least 3 levels")
        if self.taylor_variant not in ("corrected", "printed"):
            raise ConfigError(f"taylor_variant: unknown variant {self.taylor_variant!r}")
        if self.drag_norm not in ("standard", "max-radius"):
            raise ConfigError(f"drag_norm: unknown normalization {self.drag_norm!r}")
        if self.predictor not in ("pressure_free", "incremental"):
            raise ConfigError(f"predictor: unknown predictor {self.predictor!r}")
        if self.method not in ("krylov", "direct"):
            raise ConfigError(f"method: unknown solve method {self.method!r}")
        if not self.outdir:
            raise ConfigError("outdir: must be a non-empty path")
        for key in ("helmholtz_tol", "poisson_tol", "transient_fraction"):
            if getattr(self, key) < 0.0:
                raise ConfigError(f"{key}: must be non-negative")
        return self

    def resolved_text(self):
        """Canonical echo: every key, schema order, round-trip formatting."""
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key in keys:
                value = getattr(self, key)
                if isinstance(value, tuple):
                    value = ",".join(repr(float(v)) for v in value)
                elif isinstance(value, float):
                    value = repr(value)
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self):
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:16]


def parse_config(source) -> RunConfig:
    """Parse and validate a config file (path or text)."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if hasattr(source, "read"):
            parser.read_file(source)
        elif "\n" in str(source) or "=" in str(source):
            parser.read_string(str(source))
        else:
            with open(source) as f:
                parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    cfg = RunConfig()
    seen = set()
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                hint = ""
                if key in _SECTION_OF:
                    hint = f" (belongs in [{_SECTION_OF[key]}])"
                raise ConfigError(f"unknown key {key!r} in [{sec}]{hint}")
            kind, _ = SCHEMA[sec][key]
            try:
                setattr(cfg, key, kind(raw))
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc
            seen.add(key)
    for sec, keys in SCHEMA.items():
        for key, (kind, default) in keys.items():
            if default is _REQUIRED and key not in seen:
                raise ConfigError(f"missing required key {key!r} in [{sec}]")
    return cfg.validate()


def config_from_dict(values) -> RunConfig:
    """Programmatic construction with the same validation as file parsing."""
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, value)
    return cfg.validate()
