"""Modal basis of the simply-supported rectangular plate.

The displacement field is expanded in sine-product eigenfunctions of the
Laplacian,

    u(x, y, t) = sum_eta  ubar_eta(t) K_eta(x, y) / ||K_eta||^2,
    K_eta(x, y) = sin(m pi x / Lx) sin(n pi y / Ly),
    lambda_eta = (m pi / Lx)^2 + (n pi / Ly)^2,

and a grid field is taken to modal coordinates by quadrature of the
field against each eigenfunction.
"""

from dataclasses import asdict, dataclass, field
import math

import numba
import numpy as np

from .errors import DomainError, ParameterError, ShapeError


@dataclass(frozen=True, kw_only=True)
class PlateParams:
    """Physical constants of the Berger plate plus grid and sampling setup.

    Defaults are the mylar-membrane values of the reference dataset. The
    nonlinear tension coefficient ``cnl_over_s0`` (C_NL / S_0) has no
    default: it must be supplied, ``0.0`` giving the linear plate.
    """

    cnl_over_s0: float
    rho2: float = 0.2622
    D: float = 2.198e-3
    T0: float = 800.0
    d1: float = 0.5
    d3: float = 0.005
    Lx: float = 0.4
    Ly: float = 0.36
    Nx: int = 41
    Ny: int = 37
    dx: float = None
    dy: float = None
    fs: float = 16000.0

    def __post_init__(self):
        if self.Nx < 2 or self.Ny < 2:
            raise ParameterError(f"grid needs at least 2 points per axis, got {self.Ny}x{self.Nx}")
        if self.dx is None:
            object.__setattr__(self, "dx", self.Lx / (self.Nx - 1))
        if self.dy is None:
            object.__setattr__(self, "dy", self.Ly / (self.Ny - 1))
        self.validate()

    def validate(self):
        if not self.rho2 > 0:
            raise ParameterError(f"rho2 must be positive, got {self.rho2}")
        for name in ("T0", "D", "d1", "d3", "cnl_over_s0"):
            value = getattr(self, name)
            if not value >= 0:
                raise ParameterError(f"{name} must be non-negative, got {value}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ParameterError(f"plate sides must be positive, got {self.Lx} x {self.Ly}")
        if not math.isclose(self.dx * (self.Nx - 1), self.Lx, rel_tol=1e-9):
            raise ParameterError(f"dx*(Nx-1) = {self.dx * (self.Nx - 1)} does not match Lx = {self.Lx}")
        if not math.isclose(self.dy * (self.Ny - 1), self.Ly, rel_tol=1e-9):
            raise ParameterError(f"dy*(Ny-1) = {self.dy * (self.Ny - 1)} does not match Ly = {self.Ly}")
        if not self.fs > 0:
            raise ParameterError(f"fs must be positive, got {self.fs}")

    @property
    def grid_shape(self):
        return (self.Ny, self.Nx)

    @property
    def area(self):
        return self.Lx * self.Ly

    def coords(self):
        """Grid coordinates ``(x, y)`` as 1-D arrays of length Nx and Ny."""
        return np.arange(self.Nx) * self.dx, np.arange(self.Ny) * self.dy

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        if {"Lx", "Nx"} & changes.keys() and "dx" not in changes:
            values["dx"] = None
        if {"Ly", "Ny"} & changes.keys() and "dy" not in changes:
            values["dy"] = None
        return PlateParams(**values)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, order=True)
class ModeIndex:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ParameterError(f"mode indices start at 1, got ({self.m}, {self.n})")


@dataclass(frozen=True, eq=False)
class ModalBasis:
    """Eigenfunctions sampled on the plate grid.

    ``lambdas``, ``norms_sq`` and ``m``/``n`` are length-M arrays ordered
    lexicographically by (m, n); ``grid_shapes`` has shape (M, Ny, Nx).
    """

    params: PlateParams
    Mx: int
    My: int
    m: np.ndarray
    n: np.ndarray
    lambdas: np.ndarray
    norms_sq: np.ndarray
    grid_shapes: np.ndarray
    axis_x: np.ndarray = field(repr=False)
    axis_y: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.m.size

    @property
    def modes(self):
        return [ModeIndex(int(a), int(b)) for a, b in zip(self.m, self.n)]

    def index_of(self, eta):
        m, n = (eta.m, eta.n) if isinstance(eta, ModeIndex) else eta
        if not (1 <= m <= self.Mx and 1 <= n <= self.My):
            raise ParameterError(f"mode ({m}, {n}) outside the {self.Mx}x{self.My} basis")
        return (m - 1) * self.My + (n - 1)

    def frequencies(self):
        """Undamped angular eigenfrequencies omega_0 (rad/s) of the linear plate."""
        p = self.params
        return np.sqrt(self.lambdas * (self.lambdas * p.D + p.T0) / p.rho2)


def _freeze(a):
    a.setflags(write=False)
    return a


def build_basis(params, Mx=15, My=15):
    if Mx < 1 or My < 1:
        raise ParameterError(f"need at least one mode per axis, got Mx={Mx}, My={My}")
    params.validate()
    mm, nn = np.meshgrid(np.arange(1, Mx + 1), np.arange(1, My + 1), indexing="ij")
    m = mm.ravel()
    n = nn.ravel()
    kx = m * np.pi / params.Lx
    ky = n * np.pi / params.Ly
    lambdas = kx**2 + ky**2
    norms_sq = np.full(m.size, params.Lx * params.Ly / 4.0)
    x, y = params.coords()
    sx = np.sin(np.outer(kx, x))  # (M, Nx)
    sy = np.sin(np.outer(ky, y))  # (M, Ny)
    shapes = sy[:, :, None] * sx[:, None, :]
    # sin(m pi) is ~1e-16 rather than 0 in floating point; simply-supported edges are exact zeros.
    shapes[:, 0, :] = 0.0
    shapes[:, -1, :] = 0.0
    shapes[:, :, 0] = 0.0
    shapes[:, :, -1] = 0.0
    sx[:, [0, -1]] = 0.0
    sy[:, [0, -1]] = 0.0
    return ModalBasis(
        params=params,
        Mx=Mx,
        My=My,
        m=_freeze(m),
        n=_freeze(n),
        lambdas=_freeze(lambdas),
        norms_sq=_freeze(norms_sq),
        grid_shapes=_freeze(shapes),
        axis_x=_freeze(np.ascontiguousarray(sx[::My])),
        axis_y=_freeze(np.ascontiguousarray(sy[:My])),
    )


def eigenfunction_value(basis, eta, x, y):
    p = basis.params
    tol = 1e-12 * max(p.Lx, p.Ly)
    if not (-tol <= x <= p.Lx + tol and -tol <= y <= p.Ly + tol):
        raise DomainError(f"point ({x}, {y}) outside [0, {p.Lx}] x [0, {p.Ly}]")
    m, n = (eta.m, eta.n) if isinstance(eta, ModeIndex) else eta
    if x <= 0 or y <= 0 or x >= p.Lx or y >= p.Ly:
        return 0.0
    return math.sin(m * math.pi * x / p.Lx) * math.sin(n * math.pi * y / p.Ly)


def _check_grid(field_, basis):
    shape = basis.params.grid_shape
    field_ = np.asarray(field_, dtype=np.float64)
    if field_.shape[-2:] != shape:
        raise ShapeError(f"field grid {field_.shape[-2:]} does not match plate grid {shape}")
    return field_


def _trapezoid_weights(params):
    wx = np.full(params.Nx, params.dx)
    wx[[0, -1]] *= 0.5
    wy = np.full(params.Ny, params.dy)
    wy[[0, -1]] *= 0.5
    return np.outer(wy, wx)


def project_field(field_, basis):
    """Modal coordinates of a grid field, ``ubar_eta = sum field * K_eta * dA``.

    Accepts a single (Ny, Nx) grid or a stack (..., Ny, Nx); the mode axis
    is appended last.
    """
    field_ = _check_grid(field_, basis)
    w = _trapezoid_weights(basis.params)
    lead = field_.shape[:-2]
    flat = (field_ * w).reshape(-1, field_.shape[-2] * field_.shape[-1])
    coords = flat @ basis.grid_shapes.reshape(basis.size, -1).T
    return coords.reshape(*lead, basis.size)


@numba.njit(cache=True)
def _separable_synthesis(C, sx, sy, out):
    # out[t, y, x] = sum_n sy[n, y] * sum_m C[t, m, n] * sx[m, x], fixed summation order per frame
    T, Mx, My = C.shape
    Nx = sx.shape[1]
    Ny = sy.shape[1]
    tmp = np.empty((My, Nx))
    for t in range(T):
        tmp[:, :] = 0.0
        for m in range(Mx):
            for n in range(My):
                c = C[t, m, n]
                for x in range(Nx):
                    tmp[n, x] += c * sx[m, x]
        for y in range(Ny):
            for x in range(Nx):
                out[t, y, x] = 0.0
            for n in range(My):
                s = sy[n, y]
                for x in range(Nx):
                    out[t, y, x] += s * tmp[n, x]


def reconstruct_field(coords, basis):
    """Grid field from modal coordinates; the inverse expansion of project_field.

    Each frame is synthesised independently in a fixed summation order, so
    the result for a frame does not depend on how many frames are batched.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != basis.size:
        raise ShapeError(f"expected {basis.size} modal coordinates, got {coords.shape[-1]}")
    lead = coords.shape[:-1]
    # every sine-product mode has the same norm Lx*Ly/4
    C = np.ascontiguousarray(coords.reshape(-1, basis.Mx, basis.My) / basis.norms_sq[0])
    out = np.empty((C.shape[0], *basis.params.grid_shape))
    _separable_synthesis(C, basis.axis_x, basis.axis_y, out)
    return out.reshape(*lead, *basis.params.grid_shape)


@dataclass
class FieldSnapshot:
    displacement: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.displacement = np.asarray(self.displacement, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.displacement.shape != self.velocity.shape or self.displacement.ndim != 2:
            raise ShapeError(
                f"displacement {self.displacement.shape} and velocity {self.velocity.shape} must be equal 2-D grids"
            )

    @property
    def shape(self):
        return self.displacement.shape

    def to_array(self):
        """Stack as (Ny, Nx, 2), the channel-last layout used on disk."""
        return np.stack([self.displacement, self.velocity], axis=-1)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a)
        if a.ndim != 3 or a.shape[-1] != 2:
            raise ShapeError(f"snapshot array must be (Ny, Nx, 2), got {a.shape}")
        return cls(a[..., 0], a[..., 1])

    @classmethod
    def zeros(cls, params):
        return cls(np.zeros(params.grid_shape), np.zeros(params.grid_shape))
