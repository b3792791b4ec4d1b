"""Particle representation of the distribution function and its drag flow.

Characteristics are ``dx/dt = v`` and ``dv/dt = u(x) - v``.  Each step is a
drift / exact exponential kick / drift sequence; the kick is exact for a
frozen fluid velocity, so aligned particles are fixed points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cic import drift_kick_drift, gather
from .core import to_physical
from .fluid import FluidState, mollify

__all__ = [
    "ConfigurationError",
    "ParticleEnsemble",
    "FluidMode",
    "InitialData",
    "sample_initial",
    "interp_velocity",
    "push",
    "moment",
    "PROFILES",
]


class ConfigurationError(ValueError):
    """Raised when initial-data parameters cannot be realized."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted particles: positions ``x`` (N, dim), velocities ``v``, weights ``wgt``."""

    x: np.ndarray
    v: np.ndarray
    wgt: np.ndarray

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def mass(self) -> float:
        return float(np.sum(self.wgt))

    @property
    def momentum(self) -> np.ndarray:
        return self.wgt @ self.v

    def check(self) -> None:
        if not (self.x.shape == self.v.shape and self.wgt.shape == (self.x.shape[0],)):
            raise ValueError("inconsistent particle array shapes")
        if np.any(self.wgt < 0):
            raise ValueError("negative particle weight")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite particle data")
        if np.any(self.x < 0) or np.any(self.x >= 1):
            raise ValueError("positions outside [0, 1)")


@dataclass(frozen=True)
class FluidMode:
    """One real Fourier mode ``cos * cos(2 pi k.x) + sin * sin(2 pi k.x)``."""

    k: tuple
    cos: tuple = (0.0, 0.0, 0.0)
    sin: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class InitialData:
    """Initial particle distribution and fluid velocity.

    ``profile`` names a velocity distribution in :data:`PROFILES`; the
    spatial density is ``1 + sum a cos(2 pi k.x)`` over ``density_modes``
    (pairs ``(k, a)``).  With ``eps_v > 0`` particles are kept only if
    ``|v| <= 1/eps_v``.
    """

    profile: str = "maxwellian"
    v_mean: tuple = (0.0, 0.0, 0.0)
    v_sigma: float = 1.0
    beam_velocity: tuple = (1.0, 0.0, 0.0)
    density_modes: tuple = ()
    u0_modes: tuple = ()
    u0_mean: tuple = (0.0, 0.0, 0.0)
    eps_v: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigurationError(
                f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}"
            )
        if self.v_sigma < 0:
            raise ConfigurationError("v_sigma must be >= 0")
        if self.eps_v < 0:
            raise ConfigurationError("eps_v must be >= 0")
        if sum(abs(a) for _, a in self.density_modes) >= 1:
            raise ConfigurationError("density modulation amplitudes must sum to < 1")
        for mode in self.u0_modes:
            k = np.asarray(mode.k, dtype=float)
            for name in ("cos", "sin"):
                a = np.asarray(getattr(mode, name), dtype=float)[: k.size]
                if abs(k @ a) > 1e-12 * max(1.0, float(np.abs(a).max(initial=0))):
                    raise ConfigurationError(
                        f"u0 mode k={tuple(mode.k)} has {name} amplitude not orthogonal to k"
                    )


def _maxwellian(spec: InitialData, rng, size: int, dim: int) -> np.ndarray:
    mean = np.asarray(spec.v_mean, dtype=float)[:dim]
    return mean + spec.v_sigma * rng.standard_normal((size, dim))


def _two_beam(spec: InitialData, rng, size: int, dim: int) -> np.ndarray:
    mean = np.asarray(spec.v_mean, dtype=float)[:dim]
    beam = np.asarray(spec.beam_velocity, dtype=float)[:dim]
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)[:, None]
    return mean + sign * beam + spec.v_sigma * rng.standard_normal((size, dim))


PROFILES = {"maxwellian": _maxwellian, "two_beam": _two_beam}


def _density_profile(spec: InitialData, x: np.ndarray) -> np.ndarray:
    rho = np.ones(x.shape[0])
    for k, a in spec.density_modes:
        k = np.asarray(k, dtype=float)[: x.shape[1]]
        rho += a * np.cos(2 * np.pi * x @ k)
    return rho


def sample_initial(spec: InitialData, n_particles: int, dim: int = 3) -> ParticleEnsemble:
    """Draw ``n_particles`` i.i.d. samples of ``f0 1_eps`` with equal weights.

    Uses a counter-based (Philox) generator, so the ensemble depends only on
    ``spec.seed`` and ``n_particles``.
    """
    if n_particles < 1:
        raise ConfigurationError("n_particles must be >= 1")
    rng = np.random.Generator(np.random.Philox(spec.seed))
    budget = 10**6 * n_particles

    bound = 1.0 + sum(abs(a) for _, a in spec.density_modes)
    xs, got, draws = [], 0, 0
    while got < n_particles:
        batch = max(2 * (n_particles - got), 64)
        x = rng.random((batch, dim))
        draws += batch
        if spec.density_modes:
            keep = rng.random(batch) * bound < _density_profile(spec, x)
            x = x[keep]
        xs.append(x)
        got += x.shape[0]
        if got < n_particles and draws > budget:
            raise ConfigurationError("position sampler exceeded its draw budget")
    x = np.concatenate(xs)[:n_particles]

    sampler = PROFILES[spec.profile]
    vmax = np.inf if spec.eps_v == 0 else 1.0 / spec.eps_v
    vs, got, draws = [], 0, 0
    while got < n_particles:
        batch = max(2 * (n_particles - got), 64)
        v = sampler(spec, rng, batch, dim)
        draws += batch
        if np.isfinite(vmax):
            v = v[np.linalg.norm(v, axis=1) <= vmax]
        vs.append(v)
        got += v.shape[0]
        if got < n_particles and draws > budget:
            raise ConfigurationError(
                f"velocity cutoff |v| <= {vmax:g} rejected too many draws"
            )
    v = np.concatenate(vs)[:n_particles]
    wgt = np.full(n_particles, 1.0 / n_particles)
    return ParticleEnsemble(x, v, wgt)


def interp_velocity(state: FluidState, x: np.ndarray) -> np.ndarray:
    """Fluid velocity ``theta_eps * w + u_c`` at particle positions (CIC gather)."""
    g = state.grid
    w = to_physical(mollify(state.w, state.eps, g), g, check=False)
    return gather(w, x) + state.u_c


def push(ens: ParticleEnsemble, state: FluidState, dt: float):
    """Advance particles by ``dt`` against a frozen fluid velocity.

    Returns the new ensemble and the impulse field: the CIC-deposited
    momentum density ``-sum wgt (v' - v)`` handed to the fluid, deposited at
    the mid-step positions where the velocity was sampled.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = state.grid
    w = to_physical(mollify(state.w, state.eps, g), g, check=False)
    x, v, impulse = drift_kick_drift(ens.x, ens.v, ens.wgt, w, state.u_c, dt)
    return ParticleEnsemble(x, v, ens.wgt), impulse


def moment(ens: ParticleEnsemble, ell: float) -> float:
    """``sum wgt (1 + |v|)^ell``."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    speed = np.linalg.norm(ens.v, axis=1)
    return float(ens.wgt @ (1.0 + speed) ** ell)
