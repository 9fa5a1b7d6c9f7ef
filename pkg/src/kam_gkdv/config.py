"""Run configuration: a JSON file with nested sections.

Example::

    {
      "sites": [1, 2],
      "coefficients": {"c2": 0.5, "c3": 0.4},
      "eps": 0.01,
      "eps_ladder": [0.05, 0.02, 0.01],
      "xi": [1.3, 1.6],
      "a": 0.1,
      "trunc": {"L": 8, "J": 24, "M": 64},
      "seed": 0
    }
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model import Coefficients
from .spectral import SiteSet


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


_COEFF_NAMES = ("c1", "c2", "c3", "c4", "c5", "c6", "c7")

DEFAULT_TRUNC = {"L": 8, "J": 24, "M": 64, "L_op": 6, "J_op": 24,
                 "L_measure": 12, "J_measure": 20}
DEFAULT_SIM = {"dt": 1e-3, "T": None, "integrator": "etdrk4", "save_every": 100}
DEFAULT_MEASURE = {"n_samples": 10000, "gamma_scale": 1.0}


@dataclass
class RunConfig:
    sites: SiteSet
    coeffs: Coefficients
    eps: float | None = None
    eps_ladder: tuple = ()
    xi: tuple = ()
    a: float = 0.1
    tau: float | None = None
    trunc: dict = field(default_factory=lambda: dict(DEFAULT_TRUNC))
    simulation: dict = field(default_factory=lambda: dict(DEFAULT_SIM))
    measure: dict = field(default_factory=lambda: dict(DEFAULT_MEASURE))
    seed: int = 0
    output_dir: str = "out"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def nu(self) -> int:
        return self.sites.nu

    @property
    def gamma(self) -> float | None:
        return None if self.eps is None else self.eps ** (2 + self.a)

    @property
    def b(self) -> float:
        return 1 + self.a / 2

    @property
    def tau_value(self) -> float:
        return self.nu + 2 if self.tau is None else self.tau

    def hash(self) -> str:
        body = {k: v for k, v in self.raw.items() if k != "output_dir"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def ladder(self) -> list[float]:
        if self.eps_ladder:
            return list(self.eps_ladder)
        if self.eps is None:
            raise ConfigError("need eps or eps_ladder")
        return [self.eps]

    def require_eps(self) -> float:
        if self.eps is None:
            raise ConfigError("this command needs eps")
        return self.eps

    def require_xi(self) -> tuple:
        if not self.xi:
            return tuple([1.5] * self.nu)
        return self.xi


def _check_eps(value, name="eps") -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number")
    if not (0 < v <= 0.5):
        raise ConfigError(f"{name} must lie in (0, 0.5], got {v}")
    return v


def parse_config(data: dict) -> RunConfig:
    """Validate a decoded JSON object; every problem surfaces as ConfigError."""
    try:
        return _parse(data)
    except ConfigError:
        raise
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad value: {exc}")


def _parse(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"sites", "nu", "coefficients", "eps", "eps_ladder", "xi", "a", "tau", "trunc",
             "simulation", "measure", "seed", "output_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    try:
        sites = SiteSet(tuple(int(s) for s in data["sites"]))
    except KeyError:
        raise ConfigError("missing 'sites'")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sites: {exc}")
    if "nu" in data and int(data["nu"]) != sites.nu:
        raise ConfigError("nu does not match the number of sites")
    raw_c = data.get("coefficients", {})
    if isinstance(raw_c, list):
        if len(raw_c) != 7:
            raise ConfigError("coefficients list must have seven entries")
        raw_c = dict(zip(_COEFF_NAMES, raw_c))
    if not isinstance(raw_c, dict) or set(raw_c) - set(_COEFF_NAMES):
        raise ConfigError("coefficients must map c1..c7 to numbers")
    try:
        coeffs = Coefficients(**{k: float(v) for k, v in raw_c.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad coefficients: {exc}")
    eps = _check_eps(data["eps"]) if data.get("eps") is not None else None
    ladder = tuple(_check_eps(e, "eps_ladder entry") for e in data.get("eps_ladder", ()))
    a = float(data.get("a", 0.1))
    if not (0 < a < 1.0 / 6.0):
        raise ConfigError(f"a must lie in (0, 1/6), got {a}")
    xi = tuple(float(v) for v in data.get("xi", ()))
    if xi and (len(xi) != sites.nu or min(xi) <= 0):
        raise ConfigError("xi must have one positive entry per site")
    tau = data.get("tau")
    if tau is not None and float(tau) <= 0:
        raise ConfigError("tau must be positive")
    trunc = dict(DEFAULT_TRUNC)
    trunc.update(data.get("trunc", {}))
    if set(trunc) - set(DEFAULT_TRUNC):
        raise ConfigError(f"unknown trunc keys: {sorted(set(trunc) - set(DEFAULT_TRUNC))}")
    if any(int(v) < 1 for v in trunc.values()):
        raise ConfigError("truncation sizes must be positive")
    sim = dict(DEFAULT_SIM)
    sim.update(data.get("simulation", {}))
    meas = dict(DEFAULT_MEASURE)
    meas.update(data.get("measure", {}))
    out = os.environ.get("KAM_GKDV_OUTPUT_DIR", data.get("output_dir", "out"))
    return RunConfig(sites, coeffs, eps, ladder, xi, a, None if tau is None else float(tau),
                     {k: int(v) for k, v in trunc.items()}, sim, meas, int(data.get("seed", 0)),
                     out, data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}")
    return parse_config(data)
