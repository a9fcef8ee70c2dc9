"""Experiment configuration read from ``key = value`` files with ``[section]`` headers."""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace

from ..coefficient import DilationParams, make_system

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "CONFIG_HELP"]

METHODS = ("none", "local", "partial", "hybrid", "structure-aware")
REFERENCES = ("closed-form", "tensor-table", "fine-mesh")
MESH_RULES = ("L", "meps", "n")

CONFIG_HELP = """\
configuration keys (all optional unless noted):
  [system]    name (layered|het|channel|sin1d, required), eps, eta, theta, dim,
              eps_c, k, b, eta_c, eta_o, s, sigma
  [dilation]  method (none|local|partial|hybrid|structure-aware), L, m, nu
  [mesh]      rule (L|meps|n), fraction (h = fraction*L or fraction*m*eps), n
  [sweep]     values (comma list), q_ref, m_values, L_factors, L_values
  [reference] kind (closed-form|tensor-table|fine-mesh), grid_n, cell_n
  [solver]    rel_tol, method (direct|cg)
  [averaging] integrator (euler|seamless|flavors), dx, tau, v0, target, shoot
  [run]       force (true|false), output
"""


class ConfigError(ValueError):
    """Invalid or missing configuration."""


def _floats(text):
    if text is None or str(text).strip() == "":
        return []
    out = []
    for tok in str(text).replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "/" in tok:
            num, den = tok.split("/")
            out.append(float(num) / float(den))
        else:
            out.append(float(tok))
    return out


def _number(text):
    vals = _floats(text)
    if len(vals) != 1:
        raise ConfigError(f"expected a single number, got {text!r}")
    return vals[0]


SYSTEM_KEYS = {
    "layered": ("eps", "eta", "theta", "dim"),
    "het": ("eps", "eta"),
    "channel": ("eps", "eps_c", "k", "b", "eta_c", "eta_o", "s", "sigma"),
    "sin1d": ("eps",),
}


@dataclass
class ExperimentConfig:
    system: str = "layered"
    system_params: dict = field(default_factory=dict)
    method: str = "local"
    L: float = 0.1
    m: float = 1.0
    nu: float = 0.5
    mesh_rule: str = "L"
    mesh_fraction: float = 0.15
    mesh_n: int = 64
    values: list = field(default_factory=list)
    q_ref: int | None = None
    m_values: list = field(default_factory=lambda: [2.0, 4.0, 6.0, 8.0])
    L_factors: list = field(default_factory=lambda: [2.0, 8.0])
    L_values: list = field(default_factory=list)
    reference: str = "closed-form"
    grid_n: int = 17
    cell_n: int = 64
    rel_tol: float = 1e-10
    solver: str = "direct"
    integrator: str = "euler"
    dx: float | None = None
    tau: float | None = None
    v0: float = 1.0
    target: float = 1.0
    shoot: bool = True
    force: bool = False
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.system not in SYSTEM_KEYS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {sorted(SYSTEM_KEYS)}")
        unknown = set(self.system_params) - set(SYSTEM_KEYS[self.system])
        if unknown:
            raise ConfigError(f"system {self.system!r} does not take {sorted(unknown)}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.reference not in REFERENCES:
            raise ConfigError(f"unknown reference {self.reference!r}; choose from {REFERENCES}")
        if self.mesh_rule not in MESH_RULES:
            raise ConfigError(f"unknown mesh rule {self.mesh_rule!r}; choose from {MESH_RULES}")
        if self.solver not in ("direct", "cg"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if not self.mesh_fraction > 0:
            raise ConfigError("mesh fraction must be positive")
        try:
            self.dilation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def make_system(self):
        try:
            return make_system(self.system, **self.system_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def eps(self) -> float:
        return self.make_system().eps

    def dilation(self, L: float | None = None, m: float | None = None) -> DilationParams:
        return DilationParams(self.L if L is None else L, self.m if m is None else m, self.nu)

    def check_scale(self, h: float, eps: float, m: float, L: float | None):
        """Enforce ``h <= m eps / 5 <= L / 2`` and ``m eps < L`` unless forced."""
        if self.force:
            return
        me = m * eps
        if h > me / 5 * (1 + 1e-9):
            raise ConfigError(f"mesh size h={h:.4g} exceeds m*eps/5={me / 5:.4g} (use force)")
        if L is not None and m > 1:
            if me / 5 > L / 2 * (1 + 1e-9):
                raise ConfigError(f"m*eps/5={me / 5:.4g} exceeds L/2={L / 2:.4g} (use force)")
            if not me < L:
                raise ConfigError(f"scale condition m*eps < L violated: m*eps={me:.4g}, "
                                  f"L={L:.4g} (use force)")

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not parser.has_section("system") or "name" not in parser["system"]:
        raise ConfigError(f"{source}: [system] name is required")

    sysec = parser["system"]
    name = sysec["name"].strip()
    params = {}
    for key, val in sysec.items():
        if key == "name":
            continue
        params[key] = int(_number(val)) if key == "dim" else _number(val)
    kw = dict(system=name, system_params=params)

    def get(section, key, conv, dest=None):
        if parser.has_section(section) and key in parser[section]:
            try:
                kw[dest or key] = conv(parser[section][key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{source}: [{section}] {key}: {exc}") from None

    known = {
        "dilation": {"method": (str.strip, None), "L": (_number, None), "m": (_number, None),
                     "nu": (_number, None)},
        "mesh": {"rule": (str.strip, "mesh_rule"), "fraction": (_number, "mesh_fraction"),
                 "n": (lambda t: int(_number(t)), "mesh_n")},
        "sweep": {"values": (_floats, None), "q_ref": (lambda t: int(_number(t)), None),
                  "m_values": (_floats, None), "L_factors": (_floats, None),
                  "L_values": (_floats, None)},
        "reference": {"kind": (str.strip, "reference"),
                      "grid_n": (lambda t: int(_number(t)), None),
                      "cell_n": (lambda t: int(_number(t)), None)},
        "solver": {"rel_tol": (_number, None), "method": (str.strip, "solver")},
        "averaging": {"integrator": (str.strip, None), "dx": (_number, None),
                      "tau": (_number, None), "v0": (_number, None), "target": (_number, None),
                      "shoot": (_bool, None)},
        "run": {"force": (_bool, None), "output": (str.strip, None)},
    }
    for section in parser.sections():
        if section == "system":
            continue
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            conv, dest = known[section][key]
            get(section, key, conv, dest)
    try:
        cfg = ExperimentConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg.make_system()
    return cfg


def load_config(path) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))
