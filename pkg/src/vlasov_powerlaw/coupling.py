"""Drag exchange between particles and fluid, and the two time steppers.

``step_splitting`` is the production stepper: a Heun step of the fluid
(stress and convection), then the particle push against the updated
velocity, then the particle impulse handed back to the fluid with the
same CIC kernel.  The fluid gains exactly the momentum the particles lose.

``step_picard`` iterates the decoupled solution map over one step: the
kinetic half is advanced against a frozen fluid velocity, the fluid half
against frozen moments, until the fluid iterates stop moving.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cic import deposit
from .core import GridSpec, dealias, leray_project, norm2, to_physical, to_spectral
from .fluid import (
    FluidState,
    PowerLaw,
    admissible_dt,
    advance_fluid,
    mollify,
    step_mean,
)
from .kinetic import ConfigurationError, InitialData, ParticleEnsemble, push, sample_initial

__all__ = [
    "SystemState",
    "MomentFields",
    "StepRejected",
    "deposit_moments",
    "drag_force",
    "initial_fluid",
    "initial_state",
    "step_splitting",
    "step_picard",
    "total_momentum",
]

log = logging.getLogger(__name__)


class StepRejected(RuntimeError):
    """The requested step exceeds the explicit stability limit."""

    def __init__(self, dt: float, admissible: float):
        super().__init__(f"dt={dt:.6g} exceeds admissible dt={admissible:.6g}")
        self.dt = dt
        self.admissible_dt = admissible


@dataclass(frozen=True)
class SystemState:
    fluid: FluidState
    particles: ParticleEnsemble
    t: float = 0.0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def grid(self) -> GridSpec:
        return self.fluid.grid


@dataclass(frozen=True)
class MomentFields:
    """Grid density ``rho`` (shape ``grid.shape``) and momentum ``m`` (``(dim,) + shape``)."""

    rho: np.ndarray
    m: np.ndarray


def deposit_moments(ens: ParticleEnsemble, grid: GridSpec) -> MomentFields:
    q = np.concatenate([ens.wgt[:, None], ens.wgt[:, None] * ens.v], axis=1)
    dep = deposit(ens.x, q, grid.n)
    return MomentFields(rho=dep[0], m=dep[1:])


def drag_force(mom: MomentFields, state: FluidState, double_mollify: bool = True,
               u_c=None) -> np.ndarray:
    """Spectral drag on ``w``: ``-P[theta_eps * (rho (theta_eps * w + u_c) - m)]``.

    The projection removes the mean, which is the mean-correction term of
    the regularized momentum equation.  ``u_c`` overrides ``state.u_c``.
    """
    g = state.grid
    u_c = state.u_c if u_c is None else np.asarray(u_c)
    w = to_physical(mollify(state.w, state.eps, g), g, check=False)
    u = w + u_c.reshape((g.dim,) + (1,) * g.dim)
    F = to_spectral(mom.rho * u - mom.m, g)
    if double_mollify:
        F = mollify(F, state.eps, g)
    return -leray_project(dealias(F, g), g)


def total_momentum(s: SystemState) -> np.ndarray:
    """``sum wgt v + int u dx`` (only ``u_c`` contributes to the fluid integral)."""
    return s.particles.momentum + s.fluid.u_c


def initial_fluid(spec: InitialData, grid: GridSpec, eps: float = 0.0) -> FluidState:
    """Mollified, projected initial velocity built from ``spec.u0_modes``."""
    d = grid.dim
    w = np.zeros((d,) + grid.shape, dtype=complex)
    for mode in spec.u0_modes:
        k = np.asarray(mode.k, dtype=int)[:d]
        if np.any(3 * np.abs(k) > grid.n):
            raise ConfigurationError(
                f"u0 mode k={tuple(k)} lies outside the retained modes |k_j| <= n/3")
        if not np.any(k):
            raise ConfigurationError("u0 modes must have k != 0; use u0_mean for the mean")
        a = np.asarray(mode.cos, dtype=float)[:d]
        b = np.asarray(mode.sin, dtype=float)[:d]
        ip = tuple(k % grid.n)
        im = tuple((-k) % grid.n)
        w[(slice(None),) + ip] += 0.5 * (a - 1j * b)
        w[(slice(None),) + im] += 0.5 * (a + 1j * b)
    w = leray_project(dealias(mollify(w, eps, grid), grid), grid)
    u_c = np.asarray(spec.u0_mean, dtype=float)[:d]
    return FluidState(grid, w, u_c, eps)


def initial_state(spec: InitialData, grid: GridSpec, n_particles: int,
                  eps: float = 0.0) -> SystemState:
    fluid = initial_fluid(spec, grid, eps)
    particles = sample_initial(spec, n_particles, grid.dim)
    return SystemState(fluid, particles, 0.0)


def _apply_impulse(fluid: FluidState, impulse: np.ndarray, double_mollify: bool):
    g = fluid.grid
    J = to_spectral(impulse, g)
    if double_mollify:
        J = mollify(J, fluid.eps, g)
    mean = J[(slice(None),) + (0,) * g.dim].real
    w = fluid.w + leray_project(dealias(J, g), g)
    return fluid.with_(w=w, u_c=fluid.u_c + mean)


def step_splitting(s: SystemState, law: PowerLaw, dt: float, c_visc: float = 0.25,
                   c_adv: float = 0.5, double_mollify: bool = True,
                   check_cfl: bool = True, viscous: str = "auto") -> SystemState:
    """One momentum-conserving split step of length ``dt``.

    Raises :class:`StepRejected` when ``dt`` exceeds the admissible step.
    ``viscous`` selects the stress treatment (see :func:`advance_fluid`).
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if check_cfl:
        adm = admissible_dt(s.fluid, law, c_visc, c_adv, viscous)
        if dt > adm * (1 + 1e-12):
            raise StepRejected(dt, adm)
    fluid = advance_fluid(s.fluid, law, dt, viscous=viscous)
    particles, impulse = push(s.particles, fluid, dt)
    fluid = _apply_impulse(fluid, impulse, double_mollify)
    return SystemState(fluid, particles, s.t + dt)


def step_picard(s: SystemState, law: PowerLaw, dt: float, tol: float = 1e-10,
                max_iter: int = 20, double_mollify: bool = True,
                viscous: str = "auto") -> SystemState:
    """One step by fixed-point iteration on the frozen triple ``(rho, m, w)``.

    The frozen quantities are step averages (start and current end
    iterate).  ``info`` of the returned state carries ``iterations``,
    ``converged``, the successive fluid update norms ``diffs`` and their
    ratios ``contraction``.  Non-convergence is logged, not raised.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    g = s.grid
    eps = s.fluid.eps
    mom0 = deposit_moments(s.particles, g)
    rho_bar, m_bar = mom0.rho, mom0.m
    w_bar, uc_bar = s.fluid.w, s.fluid.u_c
    w_prev = s.fluid.w
    diffs = []
    converged = False
    for it in range(1, max_iter + 1):
        kin_fluid = s.fluid.with_(w=w_bar, u_c=uc_bar)
        particles, _ = push(s.particles, kin_fluid, dt)

        frozen = MomentFields(rho_bar, m_bar)

        def forcing(st, frozen=frozen, uc=uc_bar):
            return drag_force(frozen, st, double_mollify, u_c=uc)

        fluid = advance_fluid(s.fluid, law, dt, forcing, viscous)
        u_c = step_mean(s.fluid.u_c, rho_bar, m_bar, w_bar, eps, dt, g)
        fluid = fluid.with_(u_c=u_c)

        diffs.append(norm2(fluid.w - w_prev))
        if diffs[-1] < tol:
            converged = True
            break
        w_prev = fluid.w
        mom1 = deposit_moments(particles, g)
        rho_bar = 0.5 * (mom0.rho + mom1.rho)
        m_bar = 0.5 * (mom0.m + mom1.m)
        w_bar = 0.5 * (s.fluid.w + fluid.w)
        uc_bar = 0.5 * (s.fluid.u_c + fluid.u_c)
    if not converged:
        log.warning("Picard iteration did not converge in %d iterations (last update %.3e)",
                    max_iter, diffs[-1])
    contraction = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0]
    info = {"iterations": it, "converged": converged, "diffs": diffs,
            "contraction": contraction}
    return SystemState(fluid, particles, s.t + dt, info)


def with_time(s: SystemState, t: float) -> SystemState:
    return replace(s, t=t)
