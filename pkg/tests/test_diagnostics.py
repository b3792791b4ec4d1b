import math

import numpy as np
import pytest

from vlasov_powerlaw.core import GridSpec, to_spectral
from vlasov_powerlaw.coupling import SystemState, initial_state, step_splitting
from vlasov_powerlaw.diagnostics import (
    DegenerateInputError,
    DiagnosticsRow,
    FluidTest,
    InsufficientDataError,
    InvalidInputError,
    KineticTest,
    balance_residual,
    compute_row,
    density_norms,
    dissipation,
    fit_decay,
    modulated_energy,
    total_energy,
    v_infinity,
    weak_residual,
)
from vlasov_powerlaw.fluid import FluidState, PowerLaw
from vlasov_powerlaw.kinetic import ParticleEnsemble

from .test_coupling import aligned_state, smooth_spec


def row(t, E, D, E_tot=None):
    return DiagnosticsRow(t=t, E_tot=E if E_tot is None else E_tot, E_mod=E, D=D, D_visc=D,
                          D_drag=0.0, u_c=np.zeros(3), v_c=np.zeros(3), mass=1.0,
                          momentum=np.zeros(3))


def series(ts, E, D=None):
    D = np.zeros_like(ts) if D is None else D
    return [row(t, e, d) for t, e, d in zip(ts, E, D)]


def two_particles(g, u_c=(0.0, 0.0, 0.0), shift=0.0):
    v = np.array([[1.0, 0, 0], [-1.0, 0, 0]]) + shift
    ens = ParticleEnsemble(np.array([[0.1, 0.2, 0.3], [0.6, 0.7, 0.8]]), v, np.full(2, 0.5))
    return SystemState(FluidState.zero(g, u_c=np.asarray(u_c) + shift), ens)


# --- energies -----------------------------------------------------------------

def test_modulated_energy_examples():
    g = GridSpec(3, 8)
    assert modulated_energy(aligned_state(g)) <= 1e-28
    assert modulated_energy(two_particles(g)) == pytest.approx(0.5, abs=1e-15)
    s = initial_state(smooth_spec(), GridSpec(3, 16), 1000)
    c = np.array([0.7, -1.1, 0.4])
    shifted = SystemState(s.fluid.with_(u_c=s.fluid.u_c + c),
                          ParticleEnsemble(s.particles.x, s.particles.v + c, s.particles.wgt))
    assert modulated_energy(shifted) == pytest.approx(modulated_energy(s), rel=1e-13)


def test_energy_identity_on_rows():
    s = initial_state(smooth_spec(), GridSpec(3, 16), 2000)
    law = PowerLaw(1.0, 2.5)
    for _ in range(3):
        r = compute_row(s, law)
        lhs = r.E_tot - r.E_mod
        rhs = (0.5 * r.v_c @ r.v_c + 0.5 * r.u_c @ r.u_c
               - 0.25 * np.sum((r.u_c - r.v_c) ** 2))
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert r.D == pytest.approx(r.D_visc + r.D_drag, rel=1e-15)
        assert min(r.E_tot, r.E_mod, r.D) >= 0
        s = step_splitting(s, law, 1e-4)


def test_dissipation_examples():
    g = GridSpec(3, 8)
    law = PowerLaw(1.0, 2.0)
    assert dissipation(aligned_state(g), law) == (0.0, 0.0, 0.0)
    # p = 2, u = e1 sin(2 pi x2), no particles: mu int |Du|^2 = mu (2 pi)^2 / 4
    g = GridSpec(3, 16)
    u = np.zeros((3,) + g.shape)
    u[0] = np.sin(2 * np.pi * g.x[1])
    empty = ParticleEnsemble(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    s = SystemState(FluidState(g, to_spectral(u, g), np.zeros(3)), empty)
    D, Dv, Dd = dissipation(s, PowerLaw(1.5, 2.0))
    assert Dv == pytest.approx(1.5 * (2 * np.pi) ** 2 / 4, abs=1e-10)
    assert Dd == 0
    # linearity of the drag term in the weights
    s = initial_state(smooth_spec(), g, 500)
    ens = s.particles
    doubled = SystemState(s.fluid, ParticleEnsemble(ens.x, ens.v, 2 * ens.wgt))
    assert dissipation(doubled, law)[2] == 2 * dissipation(s, law)[2]


def test_regularization_flag():
    g = GridSpec(3, 16)
    s = initial_state(smooth_spec(amp=1e-4), g, 10)
    law = PowerLaw(1.0, 1.5, delta=1e-2)
    r = compute_row(s, law)
    assert r.visc_regularization_flag
    r = compute_row(s, PowerLaw(1.0, 1.5, delta=1e-12))
    assert not r.visc_regularization_flag


def test_density_norms_examples():
    ones = np.ones((16, 16, 16))
    assert [v for _, v in density_norms(ones, [1, 2, 3.5, math.inf])] == pytest.approx([1] * 4)
    rng = np.random.default_rng(0)
    rho = rng.random((8, 8, 8))
    assert density_norms(rho, [1])[0][1] == pytest.approx(rho.mean())
    spike = np.zeros((16, 16, 16))
    spike[3, 4, 5] = 16**3  # unit mass in one cell
    assert density_norms(spike, [math.inf])[0][1] == 4096
    assert density_norms(spike, [1])[0][1] == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        density_norms(ones, [0.5])


def test_v_infinity_examples():
    g = GridSpec(3, 8)
    s = two_particles(g, shift=0.0)
    assert np.all(v_infinity(s) == 0)
    ens = ParticleEnsemble(np.array([[0.1, 0.1, 0.1]]), np.array([[1.0, 0, 0]]), np.ones(1))
    np.testing.assert_allclose(v_infinity(SystemState(FluidState.zero(g), ens)), [0.5, 0, 0])
    c = np.array([0.3, 0.2, -0.1])
    np.testing.assert_allclose(v_infinity(two_particles(g, shift=c)), c, atol=1e-15)


# --- balance residual ----------------------------------------------------------

def test_balance_residual_constant_rows():
    ts = np.linspace(0, 1, 11)
    assert balance_residual(series(ts, np.full(11, 2.0))) == (0.0, 0.0)


def test_balance_residual_exponential():
    ts = np.arange(0, 5 + 1e-12, 1e-3)
    r_mod, r_tot = balance_residual(series(ts, np.exp(-ts), np.exp(-ts)))
    assert r_mod <= 1e-6 and r_tot <= 1e-6


def test_balance_residual_errors():
    ts = np.linspace(0, 1, 5)
    rows = series(ts, np.exp(-ts), np.exp(-ts))
    with pytest.raises(InvalidInputError):
        balance_residual(rows[::-1])
    with pytest.raises(InsufficientDataError):
        balance_residual(rows[:2])
    with pytest.raises(DegenerateInputError):
        balance_residual(series(ts, np.zeros(5)))


# --- decay fits ---------------------------------------------------------------

def test_fit_exponential_exact():
    ts = np.linspace(0, 10, 2001)
    fit = fit_decay(series(ts, np.exp(-3 * ts), 3 * np.exp(-3 * ts)), 2.0)
    assert fit.mode == "exponential"
    assert fit.rate == pytest.approx(3.0, abs=1e-6)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.envelope_c0 == pytest.approx(3.0)
    assert fit.envelope_ok
    # window: first E <= 0.1 E0 to last sample before E < 1e-8 E0
    assert fit.window[0] == pytest.approx(np.log(10) / 3, abs=5e-3)
    assert fit.window[1] == pytest.approx(np.log(1e8) / 3, abs=5e-3)


def test_fit_algebraic_exact():
    ts = np.linspace(0, 2e4, 40001)
    E = (1 + ts) ** -2.0
    D = 2 * (1 + ts) ** -3.0  # -dE/dt
    fit = fit_decay(series(ts, E, D), 3.0)
    assert fit.mode == "algebraic"
    assert fit.slope == pytest.approx(1.0, abs=1e-6)
    assert fit.rate == pytest.approx(2.0, abs=1e-6)  # C0 = slope / (p/2 - 1)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.envelope_ok
    assert fit.regime_flag == "consistent"


def test_fit_flags_faster_than_algebraic():
    ts = np.linspace(0, 10, 2001)
    fit = fit_decay(series(ts, np.exp(-3 * ts), 3 * np.exp(-3 * ts)), 3.0)
    assert fit.regime_flag == "faster_than_algebraic"
    assert fit.r2_alternative > fit.r2


def test_fit_errors():
    ts = np.linspace(0, 1, 5)
    with pytest.raises(InsufficientDataError):
        fit_decay(series(ts, np.exp(-10 * ts)), 2.0)
    with pytest.raises(InvalidInputError):
        fit_decay(series(ts, np.array([1, 0.5, 0, 0.1, 0.1])), 2.0)
    with pytest.raises(InsufficientDataError):
        fit_decay(series(ts, np.ones(5)), 2.0)


def test_fit_envelope_violation_detected():
    ts = np.linspace(0, 10, 2001)
    E = np.exp(-3 * ts)
    fit = fit_decay(series(ts, E, 2.0 * E), 2.0)  # slower envelope than the data
    assert fit.envelope_ok and fit.envelope_c0 == pytest.approx(2.0)
    # dissipation that claims a faster decay than observed
    fit = fit_decay(series(ts, E, 10.0 * E), 2.0)
    assert not fit.envelope_ok and fit.envelope_ratio > 1.05


# --- weak form residual -------------------------------------------------------

def _trajectory(dt, T, N=3000, seed=0):
    g = GridSpec(3, 16)
    s = initial_state(smooth_spec(seed=seed), g, N)
    law = PowerLaw(1.0, 2.5)
    traj = [s]
    for _ in range(int(round(T / dt))):
        s = step_splitting(s, law, dt, check_cfl=False)
        traj.append(s)
    return traj, law


def test_weak_residual_mass_and_mean_velocity():
    traj, law = _trajectory(2e-4, 0.01)
    kin_const, flu_const = weak_residual(
        traj, [KineticTest(), FluidTest(k=(0, 0, 0), a=(1.0, 0.0, 0.0))], law)
    assert abs(kin_const) <= 1e-12
    # constant psi: the u_c equation; O(dt)
    assert abs(flu_const) <= 5e-3


def test_weak_residual_rejects_divergent_fluid_test():
    traj, law = _trajectory(2e-4, 4e-4)
    with pytest.raises(InvalidInputError):
        weak_residual(traj, [FluidTest(k=(1, 0, 0), a=(1.0, 0.0, 0.0))], law)
    with pytest.raises(InsufficientDataError):
        weak_residual(traj[:1], [KineticTest()], law)


def test_weak_residual_first_order_in_time():
    tests = [KineticTest(k=(1, 0, 0), c1=(0.0, 1.0, 0.0)), KineticTest(k=(0, 1, 0), kind="sin", c2=1.0)]
    res = []
    for dt in (4e-4, 2e-4, 1e-4):
        traj, law = _trajectory(dt, 0.016)
        res.append(np.abs(weak_residual(traj, tests, law)))
    for a, b in zip(res, res[1:]):
        np.testing.assert_allclose(b / a, 0.5, atol=0.1)
