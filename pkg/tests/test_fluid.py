import numpy as np
import pytest

from vlasov_powerlaw.core import GridSpec, dealias, inner, leray_project, norm2, to_physical, to_spectral
from vlasov_powerlaw.fluid import (
    FluidState,
    InvalidStateError,
    PowerLaw,
    admissible_dt,
    advance_fluid,
    convective_term,
    dissipation_potential,
    heun_step,
    implicit_stress_step,
    mollify,
    step_mean,
    stress,
    stress_divergence,
    sym_gradient,
)

from .oracles import central_difference, fd_stress_divergence, rk4, velocity_and_gradient


def shear_state(g, amp=1.0):
    """u = amp e1 sin(2 pi x2)."""
    x = g.x
    u = np.zeros((g.dim,) + g.shape)
    u[0] = amp * np.sin(2 * np.pi * x[1])
    return FluidState(g, to_spectral(u, g), np.zeros(g.dim)), u


def random_state(g, seed=0, amp=0.3):
    rng = np.random.default_rng(seed)
    F = to_spectral(rng.standard_normal((g.dim,) + g.shape), g)
    F *= np.exp(-0.5 * g.k2)  # smooth
    w = leray_project(dealias(F, g), g)
    w *= amp / norm2(w)
    return FluidState(g, w, np.zeros(g.dim))


def analytic_state(n):
    g = GridSpec(3, n)
    u, _ = velocity_and_gradient(g.x)
    return FluidState(g, leray_project(dealias(to_spectral(u, g), g), g), np.zeros(3))


def test_powerlaw_validation():
    with pytest.raises(ValueError):
        PowerLaw(mu=0.0)
    with pytest.raises(ValueError):
        PowerLaw(p=1.0)
    with pytest.raises(ValueError):
        PowerLaw(delta=-1.0)


def test_state_check_rejects_bad_fields():
    g = GridSpec(2, 8)
    s = FluidState.zero(g)
    s.check()
    w = s.w.copy()
    w[0, 0, 0] = 1.0
    with pytest.raises(InvalidStateError):
        s.with_(w=w).check()
    w = np.zeros_like(s.w)
    w[0, 1, 0] = w[0, -1, 0] = 1.0  # u1 varies along x1: divergent
    with pytest.raises(InvalidStateError):
        s.with_(w=w).check()


# --- sym_gradient -----------------------------------------------------------

def test_sym_gradient_zero():
    g = GridSpec(3, 8)
    assert np.all(sym_gradient(FluidState.zero(g).w, g) == 0)


def test_sym_gradient_shear_mode():
    g = GridSpec(2, 64)
    s, u = shear_state(g)
    D = sym_gradient(s.w, g)
    exact = np.pi * np.cos(2 * np.pi * g.x[1])
    np.testing.assert_allclose(D[0, 1], exact, atol=1e-12)
    np.testing.assert_allclose(D[1, 0], exact, atol=1e-12)
    assert np.max(np.abs(D[0, 0])) < 1e-12 and np.max(np.abs(D[1, 1])) < 1e-12
    # independent cross-check: sixth-order central differences on the samples
    fd = 0.5 * central_difference(u[0], 1, g.h)
    assert np.max(np.abs(fd - D[0, 1])) <= 1e-6


def test_sym_gradient_symmetric_and_matches_analytic():
    g = GridSpec(3, 16)
    s = analytic_state(16)
    D = sym_gradient(s.w, g)
    assert np.array_equal(D, D.transpose(1, 0, 2, 3, 4))
    _, G = velocity_and_gradient(g.x)
    np.testing.assert_allclose(D, 0.5 * (G + G.transpose(1, 0, 2, 3, 4)), atol=1e-12)


# --- stress -------------------------------------------------------------------

@pytest.mark.parametrize("delta", [0.0, 1e-3, 0.5])
def test_stress_newtonian(delta):
    g = GridSpec(3, 8)
    D = sym_gradient(random_state(g).w, g)
    assert np.array_equal(stress(D, PowerLaw(1.7, 2.0, delta)), 1.7 * D)


def test_stress_homogeneity_p3():
    g = GridSpec(3, 8)
    D = sym_gradient(random_state(g, 1).w, g)
    law = PowerLaw(1.0, 3.0, 0.0)
    np.testing.assert_allclose(stress(2 * D, law), 4 * stress(D, law), rtol=1e-12, atol=1e-15)


def test_stress_pointwise_magnitude():
    D = np.zeros((3, 3, 1))
    D[0, 0, 0] = 2.0  # |D| = 2
    tau = stress(D, PowerLaw(1.0, 3.0, 0.0))
    assert np.sqrt(np.sum(tau**2)) == pytest.approx(4.0, abs=1e-14)


def test_stress_continuous_extension_at_zero():
    D = np.zeros((2, 2, 3))
    tau = stress(D, PowerLaw(1.0, 1.5, 0.0))
    assert np.all(np.isfinite(tau)) and np.all(tau == 0)


# --- stress_divergence --------------------------------------------------------

def test_stress_divergence_newtonian_single_mode():
    g = GridSpec(2, 16)
    s, _ = shear_state(g, 0.7)
    out = stress_divergence(s, PowerLaw(1.3, 2.0, 0.0))
    np.testing.assert_allclose(out, -1.3 * (2 * np.pi) ** 2 / 2 * s.w, atol=1e-10)


def test_stress_divergence_of_zero():
    g = GridSpec(3, 8)
    assert np.max(np.abs(stress_divergence(FluidState.zero(g), PowerLaw(1, 2.5)))) == 0


def test_stress_divergence_matches_finite_difference_oracle():
    s = analytic_state(8)
    out = stress_divergence(s, PowerLaw(1.0, 2.5, 0.0))
    ref = fd_stress_divergence(8, 4, 1.0, 2.5)
    assert norm2(out - ref) / norm2(ref) <= 1e-2


@pytest.mark.parametrize("p", [1.5, 2.0, 2.5, 3.0])
def test_stress_divergence_projected_and_dissipative(p):
    g = GridSpec(3, 16)
    s = random_state(g, 2)
    law = PowerLaw(1.0, p, 0.0)
    out = stress_divergence(s, law)
    assert np.all(out[(slice(None), 0, 0, 0)] == 0)
    assert np.max(np.abs(np.sum(g.k * out, axis=0))) <= 1e-12 * np.max(np.abs(out)) * g.n
    # <div tau(Dw), w> = -int tau(Dw):Dw = -mu int |Dw|^p
    D = sym_gradient(s.w, g)
    diss = np.mean(np.sum(stress(D, law) * D, axis=(0, 1)))
    assert diss > 0
    assert inner(out, s.w) == pytest.approx(-diss, rel=1e-8)


def test_dissipation_potential_gradient():
    """-stress_divergence is the L2 gradient of the dissipation potential."""
    g = GridSpec(3, 8)
    s = random_state(g, 3)
    law = PowerLaw(1.0, 2.5, 1e-3)
    v = random_state(g, 4).w
    h = 1e-6
    fd = (dissipation_potential(s.w + h * v, law, g)
          - dissipation_potential(s.w - h * v, law, g)) / (2 * h)
    assert fd == pytest.approx(-inner(stress_divergence(s, law), v), rel=1e-6)


# --- mollify ----------------------------------------------------------------

def test_mollify_examples():
    g = GridSpec(3, 8)
    F = to_spectral(np.random.default_rng(5).standard_normal(g.shape), g)
    assert mollify(F, 0.0, g) is F
    const = to_spectral(np.full(g.shape, 3.0), g)
    np.testing.assert_allclose(mollify(const, 0.3, g), const)
    one = np.zeros(g.shape, dtype=complex)
    one[1, 0, 0] = 1.0
    assert mollify(one, 0.1, g)[1, 0, 0].real == pytest.approx(0.8211, abs=1e-3)  # quoted to 3 digits
    assert mollify(one, 0.1, g)[1, 0, 0].real == pytest.approx(np.exp(-0.01 * (2 * np.pi) ** 2 / 2))
    for eps in (0.01, 0.1, 1.0):
        assert norm2(mollify(F, eps, g)) <= norm2(F)
    with pytest.raises(ValueError):
        mollify(F, -1.0, g)


# --- convection -------------------------------------------------------------

def test_convection_zero():
    g = GridSpec(3, 8)
    assert np.max(np.abs(convective_term(FluidState.zero(g, u_c=[1, 2, 3])))) == 0


def test_convection_by_mean_flow_single_mode():
    g = GridSpec(3, 16)
    s, _ = shear_state(g)
    uc = np.array([0.3, -0.2, 0.5])
    out = convective_term(s.with_(u_c=uc))
    # -(u_c . grad) acting on exp(2 pi i k.x) gives -2 pi i (u_c . k)
    expected = -2j * np.pi * np.einsum("i,i...->...", uc, g.k)[None] * s.w
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_convection_is_energy_neutral(dim):
    g = GridSpec(dim, 16)
    s = random_state(g, 6, amp=1.0).with_(u_c=np.full(dim, 0.4))
    out = convective_term(s)
    assert abs(inner(out, s.w)) <= 1e-10 * norm2(s.w) ** 2


# --- step_mean ----------------------------------------------------------------

def test_step_mean_without_particles():
    g = GridSpec(3, 8)
    uc = np.array([1.0, 2.0, 3.0])
    out = step_mean(uc, np.zeros(g.shape), np.zeros((3,) + g.shape),
                    random_state(g).w, 0.0, 0.1, g)
    np.testing.assert_array_equal(out, uc)


def test_step_mean_exponential_relaxation():
    g = GridSpec(3, 8)
    out = step_mean([1.0, 0, 0], np.ones(g.shape), np.zeros((3,) + g.shape),
                    FluidState.zero(g).w, 0.0, np.log(2.0), g)
    np.testing.assert_allclose(out, [0.5, 0, 0], atol=1e-15)


def test_step_mean_matches_rk4():
    g = GridSpec(3, 8)
    rng = np.random.default_rng(7)
    rho = 0.5 + rng.random(g.shape)
    m = rng.standard_normal((3,) + g.shape)
    s = random_state(g, 8)
    eps, dt = 0.05, 0.3
    wm = to_physical(mollify(s.w, eps, g), g)
    M = rho.mean()
    forcing = m.mean(axis=(1, 2, 3)) - (rho * wm).mean(axis=(1, 2, 3))
    uc0 = np.array([0.2, -0.1, 0.4])
    ref = rk4(lambda u: -M * u + forcing, uc0, dt, 2000)
    np.testing.assert_allclose(step_mean(uc0, rho, m, s.w, eps, dt, g), ref, atol=1e-10)


def test_step_mean_negative_mass():
    g = GridSpec(2, 8)
    with pytest.raises(InvalidStateError):
        step_mean([0, 0], -np.ones(g.shape), np.zeros((2,) + g.shape),
                  FluidState.zero(g).w, 0.0, 0.1, g)


# --- time stepping ------------------------------------------------------------

def test_heun_decays_newtonian_mode_at_rk2_rate():
    g = GridSpec(2, 16)
    s, _ = shear_state(g)
    law = PowerLaw(1.0, 2.0, 0.0)
    lam = (2 * np.pi) ** 2 / 2
    dt = 1e-3
    out = heun_step(s, law, dt)
    z = -lam * dt
    np.testing.assert_allclose(out.w, (1 + z + z * z / 2) * s.w, atol=1e-13)


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0])
def test_implicit_step_solves_backward_euler(p):
    g = GridSpec(3, 16)
    s = random_state(g, 9, amp=1.0)
    law = PowerLaw(1.0, p, 1e-8)
    dt = 5e-3
    out = implicit_stress_step(s, law, dt)
    res = out.w - s.w - dt * stress_divergence(out, law)
    assert norm2(res) <= 1e-9 * norm2(s.w)
    assert norm2(out.w) < norm2(s.w)
    out.check()


def test_implicit_and_explicit_agree_for_small_steps():
    g = GridSpec(3, 16)
    s = random_state(g, 10, amp=0.5)
    law = PowerLaw(1.0, 2.5, 1e-8)
    errs = []
    for dt in (2e-4, 1e-4):
        a = advance_fluid(s, law, dt, viscous="explicit")
        b = advance_fluid(s, law, dt, viscous="implicit")
        errs.append(norm2(a.w - b.w))
    # backward Euler vs Heun: local difference O(dt^2)
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.05)


def test_admissible_dt_newtonian_formula():
    g = GridSpec(2, 16)
    s, _ = shear_state(g, 0.5)
    law = PowerLaw(2.0, 2.0, 0.0)
    dt = admissible_dt(s, law, c_visc=0.25, c_adv=0.5)
    assert dt == pytest.approx(min(0.25 * g.h**2 / 2.0, 0.5 * g.h / 0.5), rel=1e-12)
    # no viscous limit with the implicit stress treatment
    assert admissible_dt(s, law, viscous="implicit") == pytest.approx(0.5 * g.h / 0.5)
