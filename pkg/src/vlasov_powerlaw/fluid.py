"""Power-law fluid: stress, mollifier, convection, mean velocity and time steps.

The fluid velocity is split as ``u = w + u_c`` with ``w`` mean-free and
divergence-free (stored spectrally, band-limited to the 2/3-rule modes) and
``u_c`` the spatial mean.

Two viscous treatments are available.  ``explicit`` advances stress and
convection together with Heun's method under a viscous step limit.
``implicit`` advances convection with Heun and then takes a backward Euler
stress step, computed as the minimizer of the convex functional
``1/2 |w - w*|^2 + dt mu/p int (delta^2 + |Dw|^2)^(p/2)``.  The implicit
form is needed for ``p < 2``, where the tangent viscosity ``mu |Du|^(p-2)``
is unbounded as the strain decays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    GridSpec,
    dealias,
    inner,
    leray_project,
    norm2,
    to_physical,
    to_spectral,
)

__all__ = [
    "PowerLaw",
    "FluidState",
    "InvalidStateError",
    "sym_gradient",
    "stress",
    "stress_divergence",
    "mollify",
    "convective_term",
    "step_mean",
    "fluid_rhs",
    "heun_step",
    "implicit_stress_step",
    "advance_fluid",
    "resolve_viscous",
    "admissible_dt",
    "velocity_field",
    "dissipation_potential",
]

log = logging.getLogger(__name__)

VISCOUS_SCHEMES = ("explicit", "implicit", "auto")


class InvalidStateError(ValueError):
    """Raised when a state violates a precondition of an update."""


@dataclass(frozen=True)
class PowerLaw:
    """Regularized power-law stress ``mu (delta^2 + |D|^2)^((p-2)/2) D``."""

    mu: float = 1.0
    p: float = 2.0
    delta: float = 1e-8

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.p > 1:
            raise ValueError(f"p must be > 1, got {self.p}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


@dataclass(frozen=True)
class FluidState:
    grid: GridSpec
    w: np.ndarray
    u_c: np.ndarray
    eps: float = 0.0
    kernel: str = field(default="gaussian")

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.kernel != "gaussian":
            raise ValueError(f"unknown mollifier kernel {self.kernel!r}")
        object.__setattr__(self, "u_c", np.asarray(self.u_c, dtype=float))

    @classmethod
    def zero(cls, grid: GridSpec, u_c=None, eps: float = 0.0) -> "FluidState":
        w = np.zeros((grid.dim,) + grid.shape, dtype=complex)
        u_c = np.zeros(grid.dim) if u_c is None else np.asarray(u_c, dtype=float)
        return cls(grid, w, u_c, eps)

    def with_(self, **kw) -> "FluidState":
        return replace(self, **kw)

    def divergence_defect(self) -> float:
        k = self.grid.k.astype(float)
        return float(np.max(np.abs(np.sum(k * self.w, axis=0))))

    def check(self, tol: float = 1e-10) -> None:
        """Verify the mean-free / divergence-free / finite invariants."""
        g = self.grid
        if self.w.shape != (g.dim,) + g.shape:
            raise InvalidStateError(f"w has shape {self.w.shape}")
        if self.u_c.shape != (g.dim,):
            raise InvalidStateError(f"u_c has shape {self.u_c.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.u_c))):
            raise InvalidStateError("non-finite fluid state")
        scale = max(1.0, float(np.max(np.abs(self.w))))
        if np.max(np.abs(self.w[(slice(None),) + (0,) * g.dim])) != 0.0:
            raise InvalidStateError("w has a nonzero mean")
        if self.divergence_defect() > tol * scale * g.n:
            raise InvalidStateError("w is not divergence-free")


def mollify(F: np.ndarray, eps: float, grid: GridSpec) -> np.ndarray:
    """Gaussian mollifier as the multiplier ``exp(-eps^2 (2 pi |k|)^2 / 2)``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return F
    return F * np.exp(-0.5 * eps**2 * (2 * np.pi) ** 2 * grid.k2)


# Symmetric tensors are handled internally as their upper-triangle components.

def _pairs(dim: int):
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def _strain(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Physical upper-triangle strain components, shape ``(npairs,) + shape``."""
    ik = grid.ik
    hat = np.stack([0.5 * (ik[j] * w[i] + ik[i] * w[j]) for i, j in _pairs(grid.dim)])
    return to_physical(hat, grid, check=False)


def _frob_sq_pairs(Dp: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(Dp.shape[1:])
    for a, (i, j) in enumerate(_pairs(dim)):
        out += (1.0 if i == j else 2.0) * Dp[a] * Dp[a]
    return out


def _inner_pairs(A: np.ndarray, B: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros(A.shape[1:])
    for a, (i, j) in enumerate(_pairs(dim)):
        out += (1.0 if i == j else 2.0) * A[a] * B[a]
    return out


def _divergence_pairs(Tp: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Projected, dealiased spectral ``div T`` from physical pair components."""
    That = dealias(to_spectral(Tp, grid), grid)
    ik = grid.ik
    d = grid.dim
    div = np.zeros((d,) + grid.shape, dtype=complex)
    for a, (i, j) in enumerate(_pairs(d)):
        div[i] += ik[j] * That[a]
        if i != j:
            div[j] += ik[i] * That[a]
    return leray_project(div, grid)


def _expand_pairs(Dp: np.ndarray, dim: int) -> np.ndarray:
    D = np.empty((dim, dim) + Dp.shape[1:])
    for a, (i, j) in enumerate(_pairs(dim)):
        D[i, j] = Dp[a]
        D[j, i] = Dp[a]
    return D


def sym_gradient(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Strain rate ``Du = (grad u + grad u^T)/2`` on the grid.

    ``u_c`` is constant in space and does not contribute, so only ``w`` is
    needed.  Returns shape ``(dim, dim) + grid.shape``.
    """
    return _expand_pairs(_strain(w, grid), grid.dim)


def _frobenius_sq(D: np.ndarray) -> np.ndarray:
    return np.sum(D * D, axis=(0, 1))


def _coefficient(s2: np.ndarray, law: PowerLaw) -> np.ndarray:
    if law.p == 2:
        return np.full(s2.shape, law.mu)
    with np.errstate(divide="ignore"):
        c = law.mu * s2 ** (0.5 * (law.p - 2))
    if law.p < 2:
        # continuous extension: tau -> 0 as D -> 0 when delta = 0
        c = np.where(s2 > 0, c, 0.0)
    return c


def viscosity_coefficient(D: np.ndarray, law: PowerLaw) -> np.ndarray:
    """Pointwise ``mu (delta^2 + |D|^2)^((p-2)/2)`` (0 where it would be infinite)."""
    return _coefficient(law.delta**2 + _frobenius_sq(D), law)


def stress(D: np.ndarray, law: PowerLaw) -> np.ndarray:
    """Pointwise power-law stress of a strain-rate field."""
    return viscosity_coefficient(D, law) * D


def stress_divergence(state: FluidState, law: PowerLaw) -> np.ndarray:
    """Leray-projected, dealiased ``div tau(Dw)`` as a spectral vector field."""
    g = state.grid
    Dp = _strain(state.w, g)
    c = _coefficient(law.delta**2 + _frob_sq_pairs(Dp, g.dim), law)
    return _divergence_pairs(c * Dp, g)


def dissipation_potential(w: np.ndarray, law: PowerLaw, grid: GridSpec) -> float:
    """Grid quadrature of ``mu/p (delta^2 + |Dw|^2)^(p/2)``.

    Its gradient with respect to ``w`` (in the discrete L2 pairing) is
    ``-stress_divergence``.
    """
    s2 = law.delta**2 + _frob_sq_pairs(_strain(w, grid), grid.dim)
    return float(law.mu / law.p * np.mean(s2 ** (0.5 * law.p)))


def velocity_field(state: FluidState, mollified: bool = True) -> np.ndarray:
    """Physical samples of ``theta_eps * w + u_c`` (or ``w + u_c``)."""
    g = state.grid
    w = mollify(state.w, state.eps, g) if mollified else state.w
    u = to_physical(w, g, check=False)
    return u + state.u_c.reshape((g.dim,) + (1,) * g.dim)


def convective_term(state: FluidState) -> np.ndarray:
    """``-P[((theta_eps * w + u_c) . grad) w]``, dealiased, spectral."""
    g = state.grid
    d = g.dim
    wm = mollify(state.w, state.eps, g)
    # one batched inverse transform for u and all first derivatives of w
    hat = np.concatenate([wm, (g.ik[:, None] * state.w[None]).reshape((d * d,) + g.shape)])
    phys = to_physical(hat, g, check=False)
    u = phys[:d] + state.u_c.reshape((d,) + (1,) * d)
    grad = phys[d:].reshape((d, d) + g.shape)  # grad[j, i] = d_j w_i
    adv = np.einsum("j...,ji...->i...", u, grad)
    return -leray_project(dealias(to_spectral(adv, g), g), g)


def step_mean(u_c, rho, m, w, eps: float, dt: float, grid: GridSpec) -> np.ndarray:
    """Advance ``du_c/dt = -int[rho (theta_eps*w + u_c) - m] dx`` over ``dt``.

    The forcing ``int rho theta_eps*w - m`` is frozen over the step and the
    linear relaxation with rate ``M = int rho`` is integrated exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    u_c = np.asarray(u_c, dtype=float)
    M = float(np.mean(rho))
    if M < 0:
        raise InvalidStateError(f"total particle mass must be >= 0, got {M}")
    wm = to_physical(mollify(w, eps, grid), grid, check=False)
    forcing = np.mean(m, axis=grid.axes) - np.mean(rho * wm, axis=grid.axes)
    if M == 0:
        return u_c + dt * forcing
    decay = np.exp(-M * dt)
    return u_c * decay - np.expm1(-M * dt) * forcing / M


def fluid_rhs(state: FluidState, law: PowerLaw | None, extra: np.ndarray | None = None):
    """Stress divergence (skipped when ``law`` is None) plus convection plus ``extra``."""
    rhs = convective_term(state)
    if law is not None:
        rhs = rhs + stress_divergence(state, law)
    if extra is not None:
        rhs = rhs + extra
    return rhs


def heun_step(state: FluidState, law: PowerLaw | None, dt: float, forcing=None) -> FluidState:
    """Explicit RK2 (Heun) update of ``w``; ``u_c`` is left unchanged.

    ``forcing`` is an optional callable ``FluidState -> spectral field`` added
    to the right-hand side at both stages.  With ``law=None`` the stress is
    omitted (convection and forcing only).
    """
    def rhs(s):
        return fluid_rhs(s, law, None if forcing is None else forcing(s))

    k1 = rhs(state)
    s1 = state.with_(w=state.w + dt * k1)
    k2 = rhs(s1)
    return state.with_(w=state.w + 0.5 * dt * (k1 + k2))


class _Tangent:
    """Linearized stress at a fixed ``w``, optionally in primal-dual form.

    With ``sigma=None`` this is the exact derivative of ``tau(Dw)``.  Given
    a separate stress iterate ``sigma`` the rank-two correction uses the
    symmetrized pair ``(D, sigma)`` instead of ``(D, tau)``; the two agree
    when ``sigma = tau(Dw)``.
    """

    def __init__(self, w, law: PowerLaw, grid: GridSpec, sigma=None):
        d = grid.dim
        self.grid = grid
        self.Dp = _strain(w, grid)
        s2 = law.delta**2 + _frob_sq_pairs(self.Dp, d)
        self.c = _coefficient(s2, law)
        self.tau = self.c * self.Dp
        if sigma is None:
            sigma = self.tau
        else:
            # keep |sigma| <= c s so the linearized operator stays positive
            sn = np.sqrt(_frob_sq_pairs(sigma, d))
            lim = self.c * np.sqrt(s2)
            with np.errstate(divide="ignore", invalid="ignore"):
                sigma = sigma * np.where(sn > lim, lim / sn, 1.0)
        self.sigma = sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            self.k = np.where(s2 > 0, 0.5 * (2 - law.p) / s2, 0.0)
        self.residual = _divergence_pairs(self.tau, grid)

    def tensor(self, E: np.ndarray) -> np.ndarray:
        d = self.grid.dim
        return self.c * E - self.k * (_inner_pairs(self.Dp, E, d) * self.sigma
                                      + _inner_pairs(self.sigma, E, d) * self.Dp)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return _divergence_pairs(self.tensor(_strain(v, self.grid)), self.grid)


def _pcg(apply, rhs, precond, rtol, maxiter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = precond * r
    p = z.copy()
    rz = inner(r, z)
    r0 = norm2(rhs)
    it = 0
    for it in range(1, maxiter + 1):
        Ap = apply(p)
        pAp = inner(p, Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if norm2(r) <= rtol * r0:
            break
        z = precond * r
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it


def implicit_stress_step(state: FluidState, law: PowerLaw, dt: float,
                         tol: float = 1e-10, max_newton: int = 50) -> FluidState:
    """Backward Euler step of ``w_t = P div tau(Dw)``.

    Solves ``w - w* - dt P div tau(Dw) = 0``, the optimality condition of
    the strongly convex functional ``1/2 |w - w*|^2 + dt Phi(w)``.  A plain
    Newton iteration crawls for ``p < 2`` because ``tau`` is nearly
    non-differentiable at zero strain; the stress is therefore carried as a
    separate unknown and the constitutive law is linearized in the form
    ``sigma |D|^(2-p) / mu = D``, which stays smooth there.  Each linear
    system is solved by conjugate gradients with a Fourier-diagonal
    preconditioner.  Stops when the residual falls below ``tol |w*|``.
    """
    g = state.grid
    wstar = state.w
    scale = norm2(wstar)
    if scale == 0:
        return state
    lap = 0.5 * (2 * np.pi) ** 2 * g.k2
    w = wstar
    sigma = None
    gn = np.inf
    for _ in range(max_newton):
        tan = _Tangent(w, law, g, sigma)
        grad = w - wstar - dt * tan.residual
        gn = norm2(grad)
        if gn <= tol * scale:
            break
        nu = float(np.mean(tan.c)) * min(1.0, law.p - 1)
        precond = 1.0 / (1.0 + dt * nu * lap)
        dw, _ = _pcg(lambda v: v - dt * tan.apply(v), -grad, precond,
                     rtol=min(0.1, np.sqrt(gn / scale)), maxiter=500)
        sigma = tan.tau + tan.tensor(_strain(dw, g))
        w = w + dw
    else:
        log.warning("implicit stress step: no convergence in %d iterations "
                    "(relative residual %.3e)", max_newton, gn / scale)
    return state.with_(w=w)


def resolve_viscous(viscous: str, law: PowerLaw) -> str:
    """Map ``auto`` to ``implicit`` for ``p < 2`` and ``explicit`` otherwise."""
    if viscous not in VISCOUS_SCHEMES:
        raise ValueError(f"viscous must be one of {VISCOUS_SCHEMES}, got {viscous!r}")
    if viscous == "auto":
        return "implicit" if law.p < 2 else "explicit"
    return viscous


def advance_fluid(state: FluidState, law: PowerLaw, dt: float, forcing=None,
                  viscous: str = "auto") -> FluidState:
    """Advance ``w`` by ``dt`` with the chosen viscous treatment."""
    if resolve_viscous(viscous, law) == "explicit":
        return heun_step(state, law, dt, forcing)
    return implicit_stress_step(heun_step(state, None, dt, forcing), law, dt)


def admissible_dt(state: FluidState, law: PowerLaw, c_visc: float = 0.25,
                  c_adv: float = 0.5, viscous: str = "explicit") -> float:
    """Largest step allowed by the viscous and advective limits.

    ``dt <= c_visc h^2 / nu_max`` where ``nu_max`` bounds the linearized
    stress tangent (explicit treatment only), and ``dt <= c_adv h / max|u|``.
    """
    g = state.grid
    h = g.h
    dt_visc = np.inf
    if resolve_viscous(viscous, law) == "explicit":
        if law.p == 2:
            nu = law.mu
        else:
            s2 = law.delta**2 + _frob_sq_pairs(_strain(state.w, g), g.dim)
            if law.p > 2:
                nu = (law.p - 1) * law.mu * float(np.max(s2)) ** (0.5 * (law.p - 2))
            else:
                smin2 = float(np.min(s2))
                nu = np.inf if smin2 == 0 else law.mu * smin2 ** (0.5 * (law.p - 2))
        dt_visc = c_visc * h * h / nu if nu > 0 else np.inf
    umax = float(np.max(np.abs(velocity_field(state))))
    dt_adv = c_adv * h / umax if umax > 0 else np.inf
    return min(dt_visc, dt_adv)
