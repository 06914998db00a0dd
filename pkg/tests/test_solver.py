import math

import numpy as np
import pytest

from plateforge.errors import InstabilityError, ShapeError, UnsupportedRegimeError
from plateforge.plate import PlateParams, build_basis
from plateforge.solver import (
    ModalState,
    Trajectory,
    damped_frequencies,
    integrate_modal,
    linear_modal_response,
    linear_superposition,
    modal_derivatives,
    modal_energy,
    nonlinear_tension,
    project_snapshot,
    rk4_step,
    simulate,
)


def _hand_f11():
    rho, D, T0, d1, d3 = 0.2622, 2.198e-3, 800.0, 0.5, 0.005
    lam = (math.pi / 0.4) ** 2 + (math.pi / 0.36) ** 2
    sigma = (d3 * lam + d1) / (2 * rho)
    w0 = math.sqrt(lam * (lam * D + T0) / rho)
    return math.sqrt(w0**2 - sigma**2) / (2 * math.pi), sigma


def test_fundamental_matches_hand_formula(basis, linear_params):
    f11, sigma11 = _hand_f11()
    sigma, omega = damped_frequencies(linear_params, basis.lambdas[:1])
    assert omega[0] / (2 * math.pi) == pytest.approx(f11, rel=1e-13)
    assert sigma[0] == pytest.approx(sigma11, rel=1e-13)
    assert f11 == pytest.approx(103.23, abs=0.01)


def test_top_mode_below_nyquist(basis):
    f = basis.frequencies() / (2 * math.pi)  # rad/s -> Hz
    assert f.max() == pytest.approx(1612.8, abs=1.0)
    assert f.max() < 16000 / 2
    assert f.argmax() == basis.size - 1


def test_overdamped_is_unsupported(linear_params):
    p = linear_params.replace(d1=1e4)
    with pytest.raises(UnsupportedRegimeError):
        damped_frequencies(p, np.array([137.8]))


def test_closed_form_satisfies_ode(linear_params):
    # central differences of the closed form reproduce the modal ODE
    p = linear_params
    lam = 500.0
    t = np.linspace(0.01, 0.02, 11)
    h = 1e-6
    u, v = linear_modal_response(p, lam, 1e-3, 0.2, t)
    up, vp = linear_modal_response(p, lam, 1e-3, 0.2, t + h)
    um, vm = linear_modal_response(p, lam, 1e-3, 0.2, t - h)
    assert np.allclose((up - um) / (2 * h), v, rtol=1e-6)
    acc = -((p.d3 * lam + p.d1) * v + lam * (lam * p.D + p.T0) * u) / p.rho2
    assert np.allclose((vp - vm) / (2 * h), acc, rtol=1e-5, atol=1e-6 * np.abs(acc).max())


def test_simulate_matches_closed_form(linear_params, basis, strike):
    traj = simulate(linear_params, basis, strike.to_array(), 2000)
    ref = linear_superposition(linear_params, basis, strike.to_array(), 2000)
    for c in range(2):
        err = np.linalg.norm(traj.data[..., c] - ref.data[..., c]) / np.linalg.norm(ref.data[..., c])
        assert err < 1e-7


def test_frame_zero_is_projected_initial(linear_params, basis, strike):
    traj = simulate(linear_params, basis, strike.to_array(), 3)
    state = project_snapshot(strike, basis)
    assert np.array_equal(traj.modal[0, 0], state.u_bar)
    assert traj.data.shape == (3, 37, 41, 2)
    assert traj.meta["solver"]["oversample"] == 8


def test_rk4_step_matches_integrator(small_params, small_basis, rng):
    s = ModalState(rng.standard_normal(small_basis.size) * 1e-3, rng.standard_normal(small_basis.size))
    st = s
    for k in range(4):
        st = rk4_step(st, 1.0 / (small_params.fs * 4), small_basis, small_params, k)
    U, V = integrate_modal(s, 2, small_basis, small_params, oversample=4)
    assert np.allclose(U[1], st.u_bar, rtol=0, atol=1e-15)
    assert np.allclose(V[1], st.v_bar, rtol=0, atol=1e-13)


def test_derivatives_formula(small_params, small_basis, rng):
    p, b = small_params, small_basis
    u = rng.standard_normal(b.size) * 1e-3
    v = rng.standard_normal(b.size)
    du, dv = modal_derivatives(ModalState(u, v), b, p)
    t_nl = 0.5 * p.cnl_over_s0 * np.sum(b.lambdas * u**2 / b.norms_sq)
    expected = -((p.d3 * b.lambdas + p.d1) * v + b.lambdas * (b.lambdas * p.D + p.T0 + t_nl) * u) / p.rho2
    assert np.array_equal(du, v)
    assert np.allclose(dv, expected, rtol=1e-13)


def test_rk4_fourth_order_single_mode(linear_params):
    p = linear_params.replace(fs=2000.0)
    b = build_basis(p, 1, 1)
    s0 = ModalState(np.array([1e-3]), np.array([0.0]))
    t_end = 0.05
    errors = []
    for over in (1, 2, 4, 8):
        n = int(round(t_end * p.fs)) + 1
        U, _ = integrate_modal(s0, n, b, p, oversample=over)
        exact, _ = linear_modal_response(p, b.lambdas[0], 1e-3, 0.0, t_end)
        errors.append(abs(U[-1, 0] - exact))
    slopes = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(np.abs(slopes - 4.0) < 0.2), slopes


def test_energy_never_increases(nonlinear_params, nl_basis):
    from plateforge.dataset import gaussian_strike

    ic = gaussian_strike(nonlinear_params, 25.0, 0.05, 0.2, 0.18)
    s = project_snapshot(ic, nl_basis)
    U, V, tension = integrate_modal(s, 1600, nl_basis, nonlinear_params, record_tension=True)
    E = modal_energy(U, V, nl_basis, nonlinear_params)
    assert np.all(np.diff(E) <= 1e-9 * E[0])
    assert np.all(tension >= 0)
    assert tension.max() > 10.0


def test_quarter_coefficient_energy_would_increase(nonlinear_params, nl_basis):
    # with a 1/4 coefficient on the tension term the discrete energy drifts upward
    from plateforge.dataset import gaussian_strike

    ic = gaussian_strike(nonlinear_params, 25.0, 0.05, 0.2, 0.18)
    U, V = integrate_modal(project_snapshot(ic, nl_basis), 400, nl_basis, nonlinear_params)
    lin = modal_energy(U, V, nl_basis, nonlinear_params.replace(cnl_over_s0=0.0))
    quartic = modal_energy(U, V, nl_basis, nonlinear_params) - lin
    assert np.any(np.diff(lin + 2 * quartic) > 1e-6 * lin[0])


def test_nonlinear_tension_closed_form(small_basis, small_params):
    u = np.zeros(small_basis.size)
    u[0] = 2e-3
    expected = 0.5 * small_params.cnl_over_s0 * small_basis.lambdas[0] * u[0] ** 2 / small_basis.norms_sq[0]
    assert nonlinear_tension(ModalState(u, u), small_basis, small_params) == pytest.approx(expected)
    with pytest.raises(ShapeError):
        nonlinear_tension(np.zeros(3), small_basis, small_params)


def test_instability_detected(linear_params):
    p = linear_params.replace(fs=100.0)
    b = build_basis(p, 15, 15)
    s = ModalState(np.full(b.size, 1e-3), np.zeros(b.size))
    with pytest.raises(InstabilityError) as info:
        integrate_modal(s, 200, b, p, oversample=1)
    assert info.value.step is not None


def test_integrate_argument_checks(small_basis, small_params):
    s = ModalState(np.zeros(small_basis.size), np.zeros(small_basis.size))
    with pytest.raises(ValueError):
        integrate_modal(s, 0, small_basis, small_params)
    with pytest.raises(ValueError):
        integrate_modal(s, 3, small_basis, small_params, oversample=0)
    with pytest.raises(ShapeError):
        ModalState(np.zeros(3), np.zeros(4))


def test_zero_initial_condition_stays_zero(small_params, small_basis):
    traj = simulate(small_params, small_basis, np.zeros((8, 9, 2)), 10)
    assert not traj.data.any()


def test_trajectory_validation():
    with pytest.raises(ShapeError):
        Trajectory(data=np.zeros((3, 4, 5)), fs=1.0)
    t = Trajectory(data=np.zeros((3, 4, 5, 2)), fs=1.0)
    assert t.grid_shape == (4, 5) and len(t) == 3
