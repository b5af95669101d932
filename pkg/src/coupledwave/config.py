"""Strict ``key = value`` configuration files with ``[section]`` headers.

Every key is declared in :data:`SCHEMA` with a type and, if optional, a
default.  Unknown sections or keys, malformed values and missing required
keys raise errors that carry the offending line number.  ``#`` and ``;``
start comments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

from .errors import ConfigTypeError, MissingRequired, UnknownKey

REQUIRED = object()


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    if not text:
        raise ValueError("empty string")
    return text


def _list(item: Callable) -> Callable:
    def parse(text: str):
        parts = [p.strip() for p in text.split(",")]
        if not parts or any(p == "" for p in parts):
            raise ValueError(f"malformed list: {text!r}")
        return tuple(item(p) for p in parts)
    parse.__name__ = f"list of {item.__name__.strip('_')}"
    return parse


def _interval(text: str) -> Tuple[float, float]:
    v = _list(_float)(text)
    if len(v) != 2:
        raise ValueError(f"an interval needs two numbers, got {text!r}")
    return v


def _optional_float(text: str) -> Optional[float]:
    return None if text.lower() == "none" else _float(text)


_interval.__name__ = "interval lo, hi"
_optional_float.__name__ = "float or none"

# section -> key -> (parser, default, description)
SCHEMA: Dict[str, Dict[str, Tuple[Callable, Any, str]]] = {
    "grid": {
        "n_nodes": (_int, REQUIRED, "number of grid nodes (>= 3)"),
        "length": (_float, 1.0, "domain length"),
        "dist_margin": (_optional_float, None, "minimal separation for compact inclusion (none: 2h)"),
        "cfl": (_float, 0.5, "CFL number of the time step"),
    },
    "layout": {
        "omega_tilde": (_interval, REQUIRED, "region where c11, c22 are known"),
        "omega1": (_interval, REQUIRED, "intermediate region"),
        "omega": (_interval, REQUIRED, "observation region"),
        "O3": (_interval, REQUIRED, "outer cutoff region"),
        "O2": (_interval, REQUIRED, "cutoff transition region"),
        "O1": (_interval, REQUIRED, "cutoff zero region"),
        "omega0": (_interval, REQUIRED, "small observation region"),
        "omega0_tilde": (_optional_float, None, "half width of the weight maximizer interval around the omega0 centre (none: quarter of omega0)"),
        "x0": (_float, REQUIRED, "observation point"),
        "T": (_optional_float, None, "final time (none: 2 sup|x - x0|)"),
    },
    "coefficients": {
        "a": (_float, 1.0, "constant principal coefficient"),
        "c12": (_float, 0.0, "constant coupling c12"),
        "c21": (_float, 1.0, "constant coupling c21"),
        "background_c11": (_float, 1.0, "c11 on omega_tilde and initial guess"),
        "background_c22": (_float, 1.0, "c22 on omega_tilde and initial guess"),
        "truth_c11_amplitude": (_float, 1.0, "bump height added to c11"),
        "truth_c11_center": (_float, 0.2, "bump centre for c11"),
        "truth_c11_radius": (_float, 0.12, "bump support radius for c11"),
        "truth_c22_amplitude": (_float, 0.0, "bump height added to c22"),
        "truth_c22_center": (_float, 0.2, "bump centre for c22"),
        "truth_c22_radius": (_float, 0.12, "bump support radius for c22"),
        "M1": (_float, 3.0, "sup-norm bound of c11, c22"),
        "c0": (_float, 0.5, "coupling threshold for c21 on omega0"),
        "check_coupling": (_bool, True, "refuse when the coupling condition fails"),
    },
    "initial": {
        "y1_offset": (_float, 1.0, "y1(0) = offset + amplitude cos(mode pi x / length)"),
        "y1_amplitude": (_float, 1.0, ""),
        "y1_mode": (_int, 1, ""),
        "y2_offset": (_float, 0.0, "y2(0) likewise"),
        "y2_amplitude": (_float, 0.0, ""),
        "y2_mode": (_int, 1, ""),
    },
    "observation": {
        "region": (_str, "omega", "omega | omega_minus_O2 | omega0"),
        "orders": (_list(_int), (1, 2), "time derivative orders"),
        "components": (_list(_str), ("y1", "y2"), "observed components"),
    },
    "inversion": {
        "alpha": (_optional_float, None, "Tikhonov weight (none: 1e-6 times squared data norm)"),
        "max_iter": (_int, 200, "iteration budget"),
        "tol": (_float, 1e-6, "relative projected-gradient tolerance"),
        "refine": (_int, 2, "refinement factor of the data grid"),
    },
    "noise": {
        "deltas": (_list(_float), (1e-1, 1e-2, 1e-3, 1e-4), "relative noise levels"),
        "seeds": (_int, 3, "noise realizations per level"),
        "base_seed": (_int, 0, "seed of the first realization"),
    },
    "fbi": {
        "lambdas": (_list(_float), (10.0, 20.0), "transform parameters"),
        "A": (_float, 2.0, "window scale, L = 8 A b"),
        "b": (_float, 2.0, "s range"),
        "b0": (_float, 1.8, "inner s range"),
        "mu": (_float, 1.0, "weight exponent"),
        "M": (_optional_float, None, "weight scale (none: midpoint of the admissible interval)"),
        "slope_constant": (_optional_float, None, "window slope constant (none: quintic, 7.5)"),
        "l0": (_float, 0.0, "real centre of the transform"),
        "s_nodes": (_int, 21, "s lattice size"),
        "refine": (_int, 1, "quadrature refinement over the time step"),
        "angular_nodes": (_int, 256, "circle nodes of the mean-value diagnostic"),
        "rho": (_float, 0.5, "circle radius of the mean-value diagnostic"),
    },
    "rates": {
        "C3": (_float, 1.0, "constant of the theoretical bound"),
        "C4": (_float, 1.0, ""),
        "CM": (_float, 1.0, ""),
    },
}


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]
    lines: Dict[Tuple[str, str], int]
    source: Optional[str] = None

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def override(self, section: str, key: str, value) -> None:
        if key not in SCHEMA.get(section, {}):
            raise UnknownKey(f"unknown key {section}.{key}")
        self.values[section][key] = value

    def resolved_text(self) -> str:
        """Every key with its effective value, in schema order."""
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {format_value(self.values[section][key])}")
            out.append("")
        return "\n".join(out)


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: Optional[str] = None) -> ExperimentConfig:
    values: Dict[str, Dict[str, Any]] = {s: {} for s in SCHEMA}
    lines: Dict[Tuple[str, str], int] = {}
    section_lines: Dict[str, int] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise UnknownKey(f"unknown section [{section}]", lineno)
            section_lines.setdefault(section, lineno)
            continue
        if "=" not in line:
            raise ConfigTypeError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise UnknownKey("key outside of any section", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise UnknownKey(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in lines:
            raise ConfigTypeError(f"duplicate key {key!r} (first on line {lines[(section, key)]})", lineno)
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(val)
        except ValueError as exc:
            raise ConfigTypeError(f"{section}.{key}: expected {parser.__name__.strip('_')}: {exc}",
                                  lineno) from None
        lines[(section, key)] = lineno
    for sec, keys in SCHEMA.items():
        for key, (_, default, _) in keys.items():
            if key in values[sec]:
                continue
            if default is REQUIRED:
                raise MissingRequired(f"missing required key {sec}.{key}", section_lines.get(sec))
            values[sec][key] = default
    return ExperimentConfig(values, lines, source)


def parse_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), str(path))


DEFAULT_CONFIG = """\
# coupled wave identification experiment
[grid]
n_nodes = 101
length = 1.0

[layout]
omega_tilde = 0.4, 1.0
omega1 = 0.45, 1.0
omega = 0.5, 1.0
O3 = 0.53, 1.0
O2 = 0.56, 0.62
O1 = 0.58, 0.60
omega0 = 0.70, 0.80
x0 = 0.75

[coefficients]
c21 = 1.0
truth_c11_amplitude = 1.0
truth_c11_center = 0.2
truth_c11_radius = 0.12

[noise]
deltas = 1e-1, 1e-2, 1e-3, 1e-4
seeds = 3
"""


def line_of(cfg: ExperimentConfig, section: str, key: str) -> Optional[int]:
    return cfg.lines.get((section, key))


def schema_keys() -> List[str]:
    return [f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys]
