"""Energies, dissipation, balance residuals, decay fits and weak-form residuals."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from .core import norm2, to_physical
from .coupling import MomentFields, SystemState, deposit_moments
from .fluid import PowerLaw, _coefficient, _frob_sq_pairs, _strain, sym_gradient
from .kinetic import interp_velocity, moment

__all__ = [
    "DiagnosticsRow",
    "DecayFit",
    "DegenerateInputError",
    "InsufficientDataError",
    "InvalidInputError",
    "KineticTest",
    "FluidTest",
    "modulated_energy",
    "total_energy",
    "dissipation",
    "viscous_dissipation",
    "balance_residual",
    "fit_decay",
    "v_infinity",
    "weak_residual",
    "density_norms",
    "compute_row",
    "mean_velocities",
]


class DegenerateInputError(ValueError):
    """The series starts at (or is identically) an equilibrium."""


class InsufficientDataError(ValueError):
    """Too few samples for the requested fit."""


class InvalidInputError(ValueError):
    """A test function or series violates the documented preconditions."""


@dataclass
class DiagnosticsRow:
    t: float
    E_tot: float
    E_mod: float
    D: float
    D_visc: float
    D_drag: float
    u_c: np.ndarray
    v_c: np.ndarray
    mass: float
    momentum: np.ndarray
    rho_norms: list = field(default_factory=list)
    max_moment: float = float("nan")
    D_visc_reg: float = float("nan")

    @property
    def visc_regularization_flag(self) -> bool:
        """True when the delta-regularized viscous dissipation differs by more than 1%."""
        return abs(self.D_visc_reg - self.D_visc) > 0.01 * abs(self.D_visc)


@dataclass
class DecayFit:
    mode: str                 # "exponential" (p <= 2) or "algebraic" (p > 2)
    window: tuple             # (t0, t1)
    n_samples: int
    slope: float              # of log E (exponential) or E^((2-p)/2) (algebraic)
    intercept: float
    rate: float               # C0 implied by the slope
    r2: float
    envelope_c0: float        # min over the window of D/E or D/E^(p/2); nan without D
    envelope_ratio: float     # max_t E(t) / envelope(t)
    envelope_ok: bool
    r2_alternative: float     # R^2 of the other regime's transform
    regime_flag: str          # "consistent" or "faster_than_algebraic"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def mean_velocities(s: SystemState):
    """``(u_c, v_c)`` with ``v_c = sum wgt v``."""
    return s.fluid.u_c.copy(), s.particles.momentum


def modulated_energy(s: SystemState) -> float:
    """``1/2 sum wgt |v - v_c|^2 + 1/2 |w|^2 + 1/4 |u_c - v_c|^2``."""
    ens = s.particles
    v_c = ens.momentum
    dv = ens.v - v_c
    kin = 0.5 * float(ens.wgt @ np.einsum("ij,ij->i", dv, dv))
    flu = 0.5 * norm2(s.fluid.w) ** 2
    mis = 0.25 * float(np.sum((s.fluid.u_c - v_c) ** 2))
    return kin + flu + mis


def total_energy(s: SystemState) -> float:
    """``1/2 sum wgt |v|^2 + 1/2 int |u|^2``."""
    ens = s.particles
    kin = 0.5 * float(ens.wgt @ np.einsum("ij,ij->i", ens.v, ens.v))
    return kin + 0.5 * norm2(s.fluid.w) ** 2 + 0.5 * float(np.sum(s.fluid.u_c**2))


def viscous_dissipation(s: SystemState, law: PowerLaw, regularized: bool = False) -> float:
    """Midpoint quadrature of ``mu |Du|^p`` (or ``tau_delta(Du) : Du`` if regularized)."""
    g = s.grid
    f2 = _frob_sq_pairs(_strain(s.fluid.w, g), g.dim)
    if regularized:
        return float(np.mean(_coefficient(law.delta**2 + f2, law) * f2))
    return float(law.mu * np.mean(f2 ** (0.5 * law.p)))


def dissipation(s: SystemState, law: PowerLaw):
    """``(D, D_visc, D_drag)`` with ``D_visc`` at ``delta = 0``."""
    d_visc = viscous_dissipation(s, law)
    ens = s.particles
    du = interp_velocity(s.fluid, ens.x) - ens.v
    d_drag = float(ens.wgt @ np.einsum("ij,ij->i", du, du))
    return d_visc + d_drag, d_visc, d_drag


def density_norms(mom, qs) -> list:
    """``[(q, |rho|_q)]`` by grid quadrature; ``q = inf`` gives the maximum."""
    rho = mom.rho if isinstance(mom, MomentFields) else np.asarray(mom)
    out = []
    for q in qs:
        q = float(q)
        if math.isinf(q):
            val = float(np.max(np.abs(rho)))
        else:
            if q < 1:
                raise InvalidInputError(f"norm exponent must be >= 1, got {q}")
            val = float(np.mean(np.abs(rho) ** q) ** (1.0 / q))
        out.append((q, val))
    return out


def v_infinity(initial: SystemState) -> np.ndarray:
    """Common limit velocity ``(sum wgt v + u_c) / 2`` of the initial state."""
    return 0.5 * (initial.particles.momentum + initial.fluid.u_c)


def compute_row(s: SystemState, law: PowerLaw, qs=(1, 2, float("inf"))) -> DiagnosticsRow:
    D, Dv, Dd = dissipation(s, law)
    u_c, v_c = mean_velocities(s)
    mom = deposit_moments(s.particles, s.grid)
    return DiagnosticsRow(
        t=s.t,
        E_tot=total_energy(s),
        E_mod=modulated_energy(s),
        D=D,
        D_visc=Dv,
        D_drag=Dd,
        u_c=u_c,
        v_c=v_c,
        mass=s.particles.mass,
        momentum=v_c + u_c,
        rho_norms=density_norms(mom, qs),
        max_moment=moment(s.particles, 2),
        D_visc_reg=viscous_dissipation(s, law, regularized=True),
    )


# ---------------------------------------------------------------- series tools

def _columns(series):
    """Return ``(t, E_mod, E_tot, D)`` arrays from rows or a mapping of columns."""
    if isinstance(series, dict):
        t = np.asarray(series["t"], dtype=float)
        e = np.asarray(series["E_mod"], dtype=float)
        et = np.asarray(series.get("E_tot", np.full_like(t, np.nan)), dtype=float)
        d = np.asarray(series.get("D", np.full_like(t, np.nan)), dtype=float)
        return t, e, et, d
    rows = list(series)
    t = np.array([r.t for r in rows], dtype=float)
    e = np.array([r.E_mod for r in rows], dtype=float)
    et = np.array([r.E_tot for r in rows], dtype=float)
    d = np.array([r.D for r in rows], dtype=float)
    return t, e, et, d


def balance_residual(series):
    """Relative energy-balance residuals ``(r_mod, r_tot)``.

    ``r = max_k |E(t_k) + int_0^t_k D - E(0)| / E(0)`` with the trapezoidal
    rule in time.  Times must be strictly increasing; they need not be
    uniform.
    """
    t, e_mod, e_tot, d = _columns(series)
    if t.size < 3:
        raise InsufficientDataError("balance_residual needs at least 3 rows")
    if np.any(np.diff(t) <= 0):
        raise InvalidInputError("times must be strictly increasing")
    if e_mod[0] == 0:
        raise DegenerateInputError("E_mod(0) = 0: the state starts at equilibrium")
    integral = cumulative_trapezoid(d, t, initial=0.0)
    r_mod = float(np.max(np.abs(e_mod + integral - e_mod[0])) / e_mod[0])
    r_tot = float(np.max(np.abs(e_tot + integral - e_tot[0])) / e_tot[0])
    return r_mod, r_tot


def _r2(x, y):
    if np.ptp(y) == 0:
        return 1.0
    res = stats.linregress(x, y)
    return float(res.rvalue**2)


def fit_decay(series, p: float, lo: float = 1e-8, hi: float = 1e-1,
              envelope_tol: float = 1.05, min_samples: int = 10) -> DecayFit:
    """Fit the decay law predicted for exponent ``p``.

    ``p <= 2``: linear regression of ``log E`` on ``t``.  ``p > 2``: linear
    regression of ``E^((2-p)/2)`` on ``t``, whose slope is ``C0 (p/2 - 1)``.
    The window runs from the first sample with ``E <= hi E(0)`` to the last
    sample before ``E`` first drops below ``lo E(0)``.
    """
    t, e, _, d = _columns(series)
    if t.size == 0:
        raise InsufficientDataError("empty series")
    if np.any(np.diff(t) <= 0):
        raise InvalidInputError("times must be strictly increasing")
    if np.any(~(e > 0)):
        raise InvalidInputError("E_mod must be strictly positive")
    e0 = e[0]
    below_hi = np.nonzero(e <= hi * e0)[0]
    if below_hi.size == 0:
        raise InsufficientDataError("E never drops to the upper window bound")
    i0 = below_hi[0]
    below_lo = np.nonzero(e[i0:] < lo * e0)[0]
    i1 = i0 + (below_lo[0] if below_lo.size else e.size - i0)
    tw, ew, dw = t[i0:i1], e[i0:i1], d[i0:i1]
    if tw.size < min_samples:
        raise InsufficientDataError(
            f"fit window has {tw.size} samples, need at least {min_samples}")

    y_exp = np.log(ew)
    if p <= 2:
        mode = "exponential"
        reg = stats.linregress(tw, y_exp)
        rate = -reg.slope
        c0 = float(np.min(dw / ew)) if np.all(np.isfinite(dw)) else float("nan")
        envelope = e0 * np.exp(-c0 * t)
        r2_alt = _r2(tw, ew ** (-0.5))
    else:
        mode = "algebraic"
        y = ew ** ((2 - p) / 2)
        reg = stats.linregress(tw, y)
        rate = reg.slope / (p / 2 - 1)
        c0 = float(np.min(dw / ew ** (p / 2))) if np.all(np.isfinite(dw)) else float("nan")
        envelope = (e0 ** ((2 - p) / 2) + c0 * (p / 2 - 1) * t) ** (-2 / (p - 2))
        r2_alt = _r2(tw, y_exp)
    r2 = min(max(float(reg.rvalue**2), 0.0), 1.0)
    if math.isnan(c0):
        ratio = float("nan")
        ok = False
    else:
        ratio = float(np.max(e / envelope))
        ok = ratio <= envelope_tol
    flag = "consistent"
    if mode == "algebraic" and r2_alt > r2:
        flag = "faster_than_algebraic"
    return DecayFit(mode, (float(tw[0]), float(tw[-1])), int(tw.size), float(reg.slope),
                    float(reg.intercept), float(rate), r2, c0, ratio, ok, float(r2_alt), flag)


# ---------------------------------------------------------------- weak forms

@dataclass(frozen=True)
class KineticTest:
    """``phi = chi(t) g(k.x) (c0 + c1.v + c2 |v|^2)`` with ``g`` cos or sin."""

    k: tuple = (0, 0, 0)
    kind: str = "cos"
    c0: float = 1.0
    c1: tuple = (0.0, 0.0, 0.0)
    c2: float = 0.0


@dataclass(frozen=True)
class FluidTest:
    """``psi = chi(t) (a cos(2 pi k.x) + b sin(2 pi k.x))`` with ``k.a = k.b = 0``."""

    k: tuple = (0, 0, 0)
    a: tuple = (1.0, 0.0, 0.0)
    b: tuple = (0.0, 0.0, 0.0)


def _cutoff(t, T):
    r = np.clip(1.0 - t / T, 0.0, None)
    return r**3, -3.0 / T * r**2


def _product_integral(times, T, A, B):
    """``int_0^T chi'(t) A(t) + chi(t) B(t) dt`` with A, B piecewise linear.

    Three-point Gauss-Legendre per interval integrates the cubic cutoff times
    a linear interpolant exactly.
    """
    xg, wg = np.polynomial.legendre.leggauss(3)
    total = 0.0
    for k in range(len(times) - 1):
        a, b = times[k], times[k + 1]
        tau = 0.5 * (b - a) * (xg + 1.0) + a
        lam = (tau - a) / (b - a)
        chi, dchi = _cutoff(tau, T)
        Ai = (1 - lam) * A[k] + lam * A[k + 1]
        Bi = (1 - lam) * B[k] + lam * B[k + 1]
        total += 0.5 * (b - a) * float(np.sum(wg * (dchi * Ai + chi * Bi)))
    return total


def _kinetic_terms(s: SystemState, test: KineticTest):
    ens = s.particles
    d = ens.dim
    k = 2 * np.pi * np.asarray(test.k, dtype=float)[:d]
    phase = ens.x @ k
    if test.kind == "cos":
        g, dg = np.cos(phase), -np.sin(phase)
    elif test.kind == "sin":
        g, dg = np.sin(phase), np.cos(phase)
    else:
        raise InvalidInputError(f"kind must be 'cos' or 'sin', got {test.kind!r}")
    c1 = np.asarray(test.c1, dtype=float)[:d]
    v = ens.v
    P = test.c0 + v @ c1 + test.c2 * np.einsum("ij,ij->i", v, v)
    gradP = c1[None, :] + 2 * test.c2 * v
    u = interp_velocity(s.fluid, ens.x)
    A = float(ens.wgt @ (g * P))
    B = float(ens.wgt @ ((v @ k) * dg * P + g * np.einsum("ij,ij->i", u - v, gradP)))
    return A, B


def _fluid_terms(s: SystemState, law: PowerLaw, test: FluidTest):
    g = s.grid
    d = g.dim
    k = np.asarray(test.k, dtype=float)[:d]
    a = np.asarray(test.a, dtype=float)[:d]
    b = np.asarray(test.b, dtype=float)[:d]
    bc = (d,) + (1,) * d
    phase = 2 * np.pi * np.tensordot(k, g.x, axes=1)
    psi = a.reshape(bc) * np.cos(phase) + b.reshape(bc) * np.sin(phase)
    # grad psi [i, j] = d_j psi_i
    dphase = 2 * np.pi * k
    gpsi = (-a.reshape(bc) * np.sin(phase) + b.reshape(bc) * np.cos(phase))[:, None] \
        * dphase.reshape((1, d) + (1,) * d)
    Dpsi = 0.5 * (gpsi + np.swapaxes(gpsi, 0, 1))
    w = s.fluid.w
    u = to_physical(w, g, check=False) + s.fluid.u_c.reshape(bc)
    grad_u = to_physical(g.ik[:, None] * w[None], g, check=False)  # [j, i] = d_j u_i
    adv = np.einsum("j...,ji...->i...", u, grad_u)
    D = sym_gradient(w, g)
    tau = _coefficient(law.delta**2 + np.sum(D * D, axis=(0, 1)), law) * D
    A = float(np.mean(np.sum(u * psi, axis=0)))
    B_grid = float(np.mean(np.sum(adv * psi, axis=0) + np.sum(tau * Dpsi, axis=(0, 1))))
    ens = s.particles
    psi_p = (np.cos(ens.x @ (2 * np.pi * k))[:, None] * a
             + np.sin(ens.x @ (2 * np.pi * k))[:, None] * b)
    uf = interp_velocity(s.fluid, ens.x)
    B_drag = float(ens.wgt @ np.einsum("ij,ij->i", uf - ens.v, psi_p))
    return A, B_grid + B_drag


def weak_residual(traj, tests, law: PowerLaw | None = None) -> list:
    """Weak-form residuals of the kinetic and fluid equations along ``traj``.

    ``traj`` is a list of states at increasing times starting at ``t = 0``.
    Each test function is multiplied by the cutoff ``chi(t) = (1 - t/T)^3``
    with ``T`` the last snapshot time.  Returns one float per test.
    """
    traj = list(traj)
    if len(traj) < 2:
        raise InsufficientDataError("need at least two snapshots")
    times = np.array([s.t for s in traj])
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("snapshot times must be strictly increasing")
    T = times[-1] - times[0]
    rel = times - times[0]
    out = []
    for test in tests:
        if isinstance(test, KineticTest):
            AB = [_kinetic_terms(s, test) for s in traj]
            A = [x[0] for x in AB]
            B = [x[1] for x in AB]
            out.append(_product_integral(rel, T, A, B) + A[0])
        elif isinstance(test, FluidTest):
            d = traj[0].grid.dim
            k = np.asarray(test.k, dtype=float)[:d]
            for name in ("a", "b"):
                amp = np.asarray(getattr(test, name), dtype=float)[:d]
                if abs(k @ amp) > 1e-12 * max(1.0, float(np.max(np.abs(amp)))):
                    raise InvalidInputError(
                        f"fluid test function with k={tuple(test.k)} is not divergence-free")
            if law is None:
                raise InvalidInputError("fluid tests need the power law")
            AB = [_fluid_terms(s, law, test) for s in traj]
            A = [x[0] for x in AB]
            B = [x[1] for x in AB]
            out.append(_product_integral(rel, T, [-x for x in A], B) - A[0])
        else:
            raise InvalidInputError(f"unknown test function {test!r}")
    return out
