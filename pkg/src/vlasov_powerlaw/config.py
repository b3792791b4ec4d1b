"""Run configuration: JSON schema version 1, parsing and validation.

Every error names the offending field with a dotted path, for example
``law.p: must be > 1``.  ``RunConfig.to_dict`` produces the fully resolved
form written to ``config.echo.json``; parsing it again yields an equal
config.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core import GridSpec
from .fluid import PowerLaw
from .kinetic import PROFILES, FluidMode, InitialData

__all__ = ["ConfigError", "RunConfig", "load_config", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _num(d, key, path, default=None, lo=None, lo_strict=False, hi=None, integer=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}{key}", "required field is missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}{key}", f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(f"{path}{key}", f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}{key}", "must be finite")
    if lo is not None and (v <= lo if lo_strict else v < lo):
        raise ConfigError(f"{path}{key}", f"must be {'>' if lo_strict else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{path}{key}", f"must be <= {hi}, got {v}")
    return int(v) if integer else float(v)


def _vec(d, key, path, dim, default):
    v = d.get(key, default)
    if not isinstance(v, (list, tuple)) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{path}{key}", f"expected a list of numbers, got {v!r}")
    if len(v) != dim:
        raise ConfigError(f"{path}{key}", f"expected {dim} components, got {len(v)}")
    return tuple(float(x) for x in v)


def _ivec(v, path, dim):
    if not isinstance(v, (list, tuple)) or len(v) != dim or not all(
            isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(path, f"expected {dim} integers, got {v!r}")
    return tuple(int(x) for x in v)


def _choice(d, key, path, options, default):
    v = d.get(key, default)
    if v not in options:
        raise ConfigError(f"{path}{key}", f"must be one of {list(options)}, got {v!r}")
    return v


def _known(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(path.rstrip(".") or "<root>", f"expected an object, got {d!r}")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}{extra[0]}", "unknown field")


@dataclass(frozen=True)
class DtPolicy:
    policy: str = "cfl"          # "cfl" or "fixed"
    value: float = 1e-3          # fixed step
    c_visc: float = 0.25
    c_adv: float = 0.5
    dt_max: float = 1e-2


@dataclass(frozen=True)
class CouplingConfig:
    scheme: str = "splitting"    # "splitting" or "picard"
    tol: float = 1e-10
    max_iter: int = 20
    double_mollify: bool = True
    viscous: str = "auto"        # "explicit", "implicit" or "auto"


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = GridSpec()
    law: PowerLaw = PowerLaw()
    eps: float = 0.0
    coupling: CouplingConfig = CouplingConfig()
    dt: DtPolicy = DtPolicy()
    t_end: float = 1.0
    n_particles: int = 10000
    initial: InitialData = InitialData()
    seed: int = 0
    output: str = "out"
    cadence: int = 1
    rho_norms: tuple = (1.0, 2.0, math.inf)
    name: str = ""

    # -------------------------------------------------------------- parsing
    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _known(d, {"schema", "grid", "law", "eps", "coupling", "dt", "t_end", "n_particles",
                   "initial", "seed", "output", "cadence", "rho_norms", "name"}, "")
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigError("schema", f"must be {SCHEMA_VERSION}, got {d.get('schema')!r}")

        gd = d.get("grid", {})
        _known(gd, {"dim", "n"}, "grid.")
        dim = _num(gd, "dim", "grid.", 3, integer=True)
        n = _num(gd, "n", "grid.", 16, integer=True)
        try:
            grid = GridSpec(dim, n)
        except ValueError as e:
            raise ConfigError("grid", str(e)) from None

        ld = d.get("law", {})
        _known(ld, {"mu", "p", "delta"}, "law.")
        law = PowerLaw(_num(ld, "mu", "law.", 1.0, lo=0, lo_strict=True),
                       _num(ld, "p", "law.", 2.0, lo=1, lo_strict=True),
                       _num(ld, "delta", "law.", 1e-8, lo=0))

        cd = d.get("coupling", {})
        _known(cd, {"scheme", "tol", "max_iter", "double_mollify", "viscous"}, "coupling.")
        dm = cd.get("double_mollify", True)
        if not isinstance(dm, bool):
            raise ConfigError("coupling.double_mollify", "expected true or false")
        coupling = CouplingConfig(
            _choice(cd, "scheme", "coupling.", ("splitting", "picard"), "splitting"),
            _num(cd, "tol", "coupling.", 1e-10, lo=0, lo_strict=True),
            _num(cd, "max_iter", "coupling.", 20, lo=1, integer=True),
            dm,
            _choice(cd, "viscous", "coupling.", ("explicit", "implicit", "auto"), "auto"),
        )

        td = d.get("dt", {})
        _known(td, {"policy", "value", "c_visc", "c_adv", "dt_max"}, "dt.")
        dt = DtPolicy(
            _choice(td, "policy", "dt.", ("cfl", "fixed"), "cfl"),
            _num(td, "value", "dt.", 1e-3, lo=0, lo_strict=True),
            _num(td, "c_visc", "dt.", 0.25, lo=0, lo_strict=True),
            _num(td, "c_adv", "dt.", 0.5, lo=0, lo_strict=True),
            _num(td, "dt_max", "dt.", 1e-2, lo=0, lo_strict=True),
        )

        initial = _parse_initial(d.get("initial", {}), dim, _num(d, "seed", "", 0, lo=0,
                                                                 integer=True))
        qs = d.get("rho_norms", [1, 2, "inf"])
        if not isinstance(qs, list):
            raise ConfigError("rho_norms", "expected a list")
        rho_norms = []
        for i, q in enumerate(qs):
            if q == "inf":
                rho_norms.append(math.inf)
            elif isinstance(q, (int, float)) and not isinstance(q, bool) and q >= 1:
                rho_norms.append(float(q))
            else:
                raise ConfigError(f"rho_norms[{i}]", f"expected a number >= 1 or 'inf', got {q!r}")
        output = d.get("output", "out")
        if not isinstance(output, str):
            raise ConfigError("output", "expected a string")
        name = d.get("name", "")
        if not isinstance(name, str):
            raise ConfigError("name", "expected a string")
        return cls(
            grid=grid,
            law=law,
            eps=_num(d, "eps", "", 0.0, lo=0),
            coupling=coupling,
            dt=dt,
            t_end=_num(d, "t_end", "", None, lo=0, lo_strict=True),
            n_particles=_num(d, "n_particles", "", None, lo=1, integer=True),
            initial=initial,
            seed=initial.seed,
            output=output,
            cadence=_num(d, "cadence", "", 1, lo=1, integer=True),
            rho_norms=tuple(rho_norms),
            name=name,
        )

    def to_dict(self) -> dict:
        ini = self.initial
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "grid": {"dim": self.grid.dim, "n": self.grid.n},
            "law": {"mu": self.law.mu, "p": self.law.p, "delta": self.law.delta},
            "eps": self.eps,
            "coupling": asdict(self.coupling),
            "dt": asdict(self.dt),
            "t_end": self.t_end,
            "n_particles": self.n_particles,
            "initial": {
                "profile": ini.profile,
                "v_mean": list(ini.v_mean),
                "v_sigma": ini.v_sigma,
                "beam_velocity": list(ini.beam_velocity),
                "density_modes": [{"k": list(k), "a": a} for k, a in ini.density_modes],
                "u0_modes": [{"k": list(m.k), "cos": list(m.cos), "sin": list(m.sin)}
                             for m in ini.u0_modes],
                "u0_mean": list(ini.u0_mean),
                "eps_v": ini.eps_v,
            },
            "seed": self.seed,
            "output": self.output,
            "cadence": self.cadence,
            "rho_norms": ["inf" if math.isinf(q) else q for q in self.rho_norms],
        }

    def replace(self, **kw) -> "RunConfig":
        from dataclasses import replace as _replace
        return _replace(self, **kw)


def _parse_initial(d, dim, seed) -> InitialData:
    _known(d, {"profile", "v_mean", "v_sigma", "beam_velocity", "density_modes", "u0_modes",
               "u0_mean", "eps_v"}, "initial.")
    p = "initial."
    zero = [0.0] * dim
    dens = []
    for i, m in enumerate(d.get("density_modes", [])):
        mp = f"{p}density_modes[{i}]."
        _known(m, {"k", "a"}, mp)
        dens.append((_ivec(m.get("k"), mp + "k", dim), _num(m, "a", mp, None)))
    modes = []
    for i, m in enumerate(d.get("u0_modes", [])):
        mp = f"{p}u0_modes[{i}]."
        _known(m, {"k", "cos", "sin"}, mp)
        k = _ivec(m.get("k"), mp + "k", dim)
        modes.append(FluidMode(k, _vec(m, "cos", mp, dim, zero), _vec(m, "sin", mp, dim, zero)))
    beam = [1.0] + [0.0] * (dim - 1)
    try:
        return InitialData(
            profile=_choice(d, "profile", p, tuple(PROFILES), "maxwellian"),
            v_mean=_vec(d, "v_mean", p, dim, zero),
            v_sigma=_num(d, "v_sigma", p, 1.0, lo=0),
            beam_velocity=_vec(d, "beam_velocity", p, dim, beam),
            density_modes=tuple(dens),
            u0_modes=tuple(modes),
            u0_mean=_vec(d, "u0_mean", p, dim, zero),
            eps_v=_num(d, "eps_v", p, 0.0, lo=0),
            seed=seed,
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("initial", str(e)) from None


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {path}: {e.strerror}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return RunConfig.from_dict(d)
