"""Time evolution of the modal coordinates.

Each mode obeys

    rho2 * ubar'' + (d3*lam + d1) * ubar' + lam*(lam*D + T0) * ubar = -lam * T_NL * ubar

with the homogeneous Berger tension

    T_NL = 1/2 * (C_NL/S0) * sum_eta lam_eta * ubar_eta**2 / ||K_eta||^2,

which couples every mode to the global state. ``linear_modal_response`` is the
closed-form solution for T_NL = 0 and serves as the oracle for the RK4 path.
"""

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InstabilityError, ShapeError, UnsupportedRegimeError
from .plate import FieldSnapshot, project_field, reconstruct_field

DEFAULT_OVERSAMPLE = 8


@dataclass
class ModalState:
    u_bar: np.ndarray
    v_bar: np.ndarray

    def __post_init__(self):
        self.u_bar = np.asarray(self.u_bar, dtype=np.float64)
        self.v_bar = np.asarray(self.v_bar, dtype=np.float64)
        if self.u_bar.shape != self.v_bar.shape or self.u_bar.ndim != 1:
            raise ShapeError(f"u_bar {self.u_bar.shape} and v_bar {self.v_bar.shape} must be equal 1-D vectors")

    def __len__(self):
        return self.u_bar.size


@dataclass
class Trajectory:
    """A sequence of T grid snapshots stored as one (T, Ny, Nx, 2) array.

    Channel 0 is displacement, channel 1 velocity. ``modal`` optionally
    holds the (T, 2, M) modal coordinates the frames were reconstructed from.
    """

    data: np.ndarray
    fs: float
    meta: dict = field(default_factory=dict)
    modal: np.ndarray = None

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != 2:
            raise ShapeError(f"trajectory data must be (T, Ny, Nx, 2), got {self.data.shape}")
        if self.data.shape[0] < 1:
            raise ShapeError("a trajectory needs at least one frame")

    def __len__(self):
        return self.data.shape[0]

    @property
    def grid_shape(self):
        return self.data.shape[1:3]

    @property
    def displacement(self):
        return self.data[..., 0]

    @property
    def velocity(self):
        return self.data[..., 1]

    def frame(self, k):
        return FieldSnapshot(self.data[k, ..., 0], self.data[k, ..., 1])


def _mode_coefficients(params, lam):
    lam = np.asarray(lam, dtype=np.float64)
    sigma = (params.d3 * lam + params.d1) / (2.0 * params.rho2)
    omega0_sq = lam * (lam * params.D + params.T0) / params.rho2
    return sigma, omega0_sq


def damped_frequencies(params, lam):
    """Decay rates sigma (1/s) and damped angular frequencies omega_d (rad/s)."""
    sigma, omega0_sq = _mode_coefficients(params, lam)
    disc = omega0_sq - sigma**2
    if np.any(disc <= 0):
        bad = np.flatnonzero(np.atleast_1d(disc <= 0))
        raise UnsupportedRegimeError(f"modes {bad.tolist()} are not underdamped (sigma^2 >= omega0^2)")
    return sigma, np.sqrt(disc)


def linear_modal_response(params, lam, u0, v0, t):
    """Exact (u, v) of the damped modal oscillator at times ``t``.

    All arguments broadcast, so a vector of modes against a column of times
    gives the full (T, M) superposition in one call.
    """
    sigma, omega_d = damped_frequencies(params, lam)
    u0 = np.asarray(u0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    A = u0
    B = (v0 + sigma * u0) / omega_d
    decay = np.exp(-sigma * t)
    c = np.cos(omega_d * t)
    s = np.sin(omega_d * t)
    u = decay * (A * c + B * s)
    v = decay * ((B * omega_d - sigma * A) * c - (A * omega_d + sigma * B) * s)
    return u, v


def nonlinear_tension(state, basis, params):
    u = state.u_bar if isinstance(state, ModalState) else np.asarray(state)
    if u.shape[-1] != basis.size:
        raise ShapeError(f"state has {u.shape[-1]} modes, basis has {basis.size}")
    return 0.5 * params.cnl_over_s0 * np.sum(basis.lambdas * u**2 / basis.norms_sq, axis=-1)


class _Coefficients:
    """Per-mode constants of the modal ODE, packed for the compiled kernels."""

    def __init__(self, basis, params):
        lam = basis.lambdas
        self.lam = np.ascontiguousarray(lam, dtype=np.float64)
        self.damp = np.ascontiguousarray((params.d3 * lam + params.d1) / params.rho2)
        self.stiff = np.ascontiguousarray(lam * (lam * params.D + params.T0) / params.rho2)
        self.lam_rho = np.ascontiguousarray(lam / params.rho2)
        self.tension_w = np.ascontiguousarray(0.5 * params.cnl_over_s0 * lam / basis.norms_sq)

    def args(self):
        return self.lam_rho, self.damp, self.stiff, self.tension_w


@numba.njit(cache=True)
def _accel(u, v, lam_rho, damp, stiff, tension_w, out):
    t_nl = 0.0
    for i in range(u.size):
        t_nl += tension_w[i] * u[i] * u[i]
    for i in range(u.size):
        out[i] = -damp[i] * v[i] - (stiff[i] + lam_rho[i] * t_nl) * u[i]
    return t_nl


@numba.njit(cache=True)
def _rk4(u, v, dt, lam_rho, damp, stiff, tension_w, work):
    # work: (8, M) scratch; u, v updated in place. Returns the tension at the start of the step.
    M = u.size
    a1, a2, a3, a4 = work[0], work[1], work[2], work[3]
    ut, v2, v3, v4 = work[4], work[5], work[6], work[7]
    h = 0.5 * dt
    t_nl = _accel(u, v, lam_rho, damp, stiff, tension_w, a1)
    for i in range(M):
        ut[i] = u[i] + h * v[i]
        v2[i] = v[i] + h * a1[i]
    _accel(ut, v2, lam_rho, damp, stiff, tension_w, a2)
    for i in range(M):
        ut[i] = u[i] + h * v2[i]
        v3[i] = v[i] + h * a2[i]
    _accel(ut, v3, lam_rho, damp, stiff, tension_w, a3)
    for i in range(M):
        ut[i] = u[i] + dt * v3[i]
        v4[i] = v[i] + dt * a3[i]
    _accel(ut, v4, lam_rho, damp, stiff, tension_w, a4)
    s = dt / 6.0
    for i in range(M):
        u[i] = u[i] + s * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])
        v[i] = v[i] + s * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
    return t_nl


@numba.njit(cache=True)
def _integrate(u0, v0, dt, n_frames, oversample, lam_rho, damp, stiff, tension_w, record, tension_out):
    M = u0.size
    U = np.empty((n_frames, M))
    V = np.empty((n_frames, M))
    u = u0.copy()
    v = v0.copy()
    work = np.empty((8, M))
    U[0] = u
    V[0] = v
    step = 0
    for k in range(1, n_frames):
        for _ in range(oversample):
            t_nl = _rk4(u, v, dt, lam_rho, damp, stiff, tension_w, work)
            if record:
                tension_out[step] = t_nl
            step += 1
            acc = 0.0
            for i in range(M):
                acc += u[i] * u[i] + v[i] * v[i]
            if not np.isfinite(acc):
                return U[:k], V[:k], step
        U[k] = u
        V[k] = v
    if record:
        t_nl = 0.0
        for i in range(M):
            t_nl += tension_w[i] * u[i] * u[i]
        tension_out[step] = t_nl
    return U, V, -1


def modal_derivatives(state, basis, params):
    c = _Coefficients(basis, params)
    acc = np.empty(basis.size)
    _accel(state.u_bar, state.v_bar, *c.args(), acc)
    return state.v_bar.copy(), acc


def rk4_step(state, dt, basis, params, step_index=0):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if len(state) != basis.size:
        raise ShapeError(f"state has {len(state)} modes, basis has {basis.size}")
    c = _Coefficients(basis, params)
    u = state.u_bar.copy()
    v = state.v_bar.copy()
    _rk4(u, v, float(dt), *c.args(), np.empty((8, basis.size)))
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InstabilityError(f"non-finite state after RK4 step {step_index}", step=step_index)
    return ModalState(u, v)


def integrate_modal(state, n_frames, basis, params, oversample=DEFAULT_OVERSAMPLE, record_tension=False):
    """Integrate from ``state`` and emit ``n_frames`` modal states (frame 0 = ``state``).

    The internal step is 1 / (fs * oversample). Returns ``(U, V)`` of shape
    (n_frames, M), plus the tension at every internal step when
    ``record_tension`` is set.
    """
    if oversample < 1 or int(oversample) != oversample:
        raise ValueError(f"oversample must be a positive integer, got {oversample}")
    if n_frames < 1:
        raise ValueError(f"need at least one frame, got {n_frames}")
    c = _Coefficients(basis, params)
    dt = 1.0 / (params.fs * oversample)
    n_internal = (n_frames - 1) * oversample
    tension = np.empty(n_internal + 1 if record_tension else 0)
    U, V, failed = _integrate(
        np.ascontiguousarray(state.u_bar), np.ascontiguousarray(state.v_bar),
        dt, int(n_frames), int(oversample), *c.args(), record_tension, tension,
    )
    if failed >= 0:
        raise InstabilityError(f"non-finite modal state at internal RK4 step {failed} (dt={dt:g} s)", step=failed)
    if record_tension:
        return U, V, tension
    return U, V


def modal_energy(U, V, basis, params):
    """Discrete energy of modal states; broadcasts over leading axes.

    E = sum[ rho2 v^2/2 + lam (lam D + T0) u^2 / 2 ] / ||K||^2
        + (C_NL/S0)/8 * (sum lam u^2 / ||K||^2)^2
    """
    lam = basis.lambdas
    nsq = basis.norms_sq
    U = np.asarray(U)
    V = np.asarray(V)
    linear = np.sum((0.5 * params.rho2 * V**2 + 0.5 * lam * (lam * params.D + params.T0) * U**2) / nsq, axis=-1)
    grad_sq = np.sum(lam * U**2 / nsq, axis=-1)
    return linear + 0.125 * params.cnl_over_s0 * grad_sq**2


def frames_from_modal(U, V, basis):
    data = np.empty((U.shape[0], *basis.params.grid_shape, 2))
    data[..., 0] = reconstruct_field(U, basis)
    data[..., 1] = reconstruct_field(V, basis)
    return data


def project_snapshot(initial, basis):
    if isinstance(initial, FieldSnapshot):
        return ModalState(project_field(initial.displacement, basis), project_field(initial.velocity, basis))
    a = np.asarray(initial)
    return ModalState(project_field(a[..., 0], basis), project_field(a[..., 1], basis))


def simulate(params, basis, initial, steps, oversample=DEFAULT_OVERSAMPLE, keep_modal=True):
    """Full solver pipeline: project, integrate, reconstruct ``steps`` grid frames."""
    if initial.shape[:2] != params.grid_shape:
        raise ShapeError(f"initial condition grid {initial.shape[:2]} does not match {params.grid_shape}")
    state = project_snapshot(initial, basis)
    U, V = integrate_modal(state, steps, basis, params, oversample)
    meta = {
        "solver": {"method": "modal-rk4", "oversample": int(oversample), "Mx": basis.Mx, "My": basis.My},
        "params": params.to_dict(),
    }
    return Trajectory(
        data=frames_from_modal(U, V, basis),
        fs=params.fs,
        meta=meta,
        modal=np.stack([U, V], axis=1) if keep_modal else None,
    )


def linear_superposition(params, basis, initial, steps):
    """Closed-form linear trajectory of the projected initial condition."""
    state = project_snapshot(initial, basis)
    t = (np.arange(steps) / params.fs)[:, None]
    U, V = linear_modal_response(params, basis.lambdas, state.u_bar, state.v_bar, t)
    return Trajectory(data=frames_from_modal(U, V, basis), fs=params.fs, modal=np.stack([U, V], axis=1))
