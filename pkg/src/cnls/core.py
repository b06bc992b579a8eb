"""Numerical substrate: parameters, grids, fields, transforms and quadrature.

Two discretisations are supported. A periodic cartesian box ``[-L, L)^d`` with
``n`` points per axis carries the time evolution and all spectral work. A
uniform radial grid on ``[0, r_max]`` carries ground-state profiles and the
radial diagnostics; integrals over R^d of radial functions reduce there to
``|S^{d-1}| * int_0^r_max f(r) r^{d-1} dr``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
import scipy.fft as sfft
from scipy.special import bernoulli, gamma


class AdmissibilityError(ValueError):
    """Physical parameters outside the admissible (d, p, omega) range."""


class GridError(ValueError):
    """Invalid grid construction or mismatched grids."""


class NonFiniteFieldError(ValueError):
    """A field contains NaN or Inf entries."""


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

_CRITICAL_TOL = 1e-12


@dataclass(frozen=True)
class Params:
    """Dimension ``d``, focusing exponent ``p`` and frequency ``omega``.

    The equation is ``i u_t + Lap u = |u|^{4/d} u - |u|^{p-1} u``. Admissible
    exponents are ``p > 1 + 4/d`` for d = 1, 2 and ``1 + 4/d < p <= 5`` for
    d = 3, where ``p = 5`` is the energy-critical case.
    """

    d: int
    p: float
    omega: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise AdmissibilityError(f"dimension must be 1, 2 or 3, got {self.d!r}")
        if not (math.isfinite(self.p) and math.isfinite(self.omega)):
            raise AdmissibilityError("p and omega must be finite")
        if self.omega <= 0:
            raise AdmissibilityError(f"omega must be positive, got {self.omega}")
        # the mass-critical endpoint is excluded, including values that round past it
        if not self.p > 1 + 4 / self.d + _CRITICAL_TOL:
            raise AdmissibilityError(
                f"p must exceed the mass-critical exponent 1 + 4/d = {1 + 4 / self.d:g}, got {self.p}"
            )
        if self.d == 3 and self.p > 5 + _CRITICAL_TOL:
            raise AdmissibilityError(f"p must not exceed the energy-critical exponent 5 in d = 3, got {self.p}")

    @property
    def regime(self) -> str:
        if self.d == 3 and abs(self.p - 5) <= _CRITICAL_TOL:
            return "energy-critical"
        return "subcritical"

    @property
    def mass_critical_power(self) -> float:
        """Exponent ``2(d+2)/d`` of the defocusing term in the energy."""
        return 2 * (self.d + 2) / self.d

    @property
    def scaling_exponent(self) -> float:
        """``d(p-1)/2``: the power of lambda picked up by ``||T_lambda u||_{p+1}^{p+1}``."""
        return self.d * (self.p - 1) / 2

    @property
    def blowup_theorem_applies(self) -> bool:
        """Whether finite-time blowup is predicted for A_{omega,-} data (d >= 2, p <= 5)."""
        return self.d >= 2 and self.p <= 5 + _CRITICAL_TOL

    def with_omega(self, omega: float) -> "Params":
        return Params(self.d, self.p, omega)


def sphere_area(d: int) -> float:
    """Surface measure ``|S^{d-1}|``; equals 2 for d = 1 (the two-point sphere)."""
    return 2 * math.pi ** (d / 2) / gamma(d / 2)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CartesianGrid:
    """Periodic box ``[-L, L)^d`` with ``n`` points per axis."""

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"cartesian grids support d in (1, 2, 3), got {self.d}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 16 or not _is_power_of_two(int(self.n)):
            raise GridError(f"points per axis must be a power of two >= 16, got {self.n!r}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise GridError(f"box half-length must be positive, got {self.L!r}")

    @property
    def h(self) -> float:
        return 2 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """1-D wavenumbers ``(pi/L) m`` in FFT order."""
        return 2 * np.pi * sfft.fftfreq(self.n, d=self.h)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij", sparse=True))

    @cached_property
    def radius(self) -> np.ndarray:
        r2 = sum(c**2 for c in self.coords)
        return np.sqrt(np.broadcast_to(r2, self.shape))

    @cached_property
    def kvec(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.wavenumbers] * self.d), indexing="ij", sparse=True))

    @cached_property
    def kvec_odd(self) -> tuple[np.ndarray, ...]:
        """Wavenumbers for first derivatives: the unpaired Nyquist mode is zeroed."""
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        return tuple(np.meshgrid(*([k] * self.d), indexing="ij", sparse=True))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.broadcast_to(sum(k**2 for k in self.kvec), self.shape)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keeps modes with every ``|m_j| < n/3``."""
        kmax = (np.pi / self.L) * self.n / 3
        mask = np.ones(self.shape, dtype=bool)
        for k in self.kvec:
            mask = mask & (np.abs(k) < kmax)
        return mask


_GREGORY_ORDER = 8


def _gregory_end_correction(k: int = _GREGORY_ORDER) -> np.ndarray:
    """Endpoint corrections that make the trapezoid rule exact for degree < k.

    Solves ``sum_j a_j j^m = B_{m+1}/(m+1)`` (odd m) and 0 (even m); the right
    hand side is minus the one-sided Euler-Maclaurin error of the trapezoid
    rule for the monomial ``t^m``.
    """
    b = bernoulli(k + 1)
    rhs = np.array([b[m + 1] / (m + 1) if m % 2 == 1 else 0.0 for m in range(k)])
    vander = np.vander(np.arange(k, dtype=float), k, increasing=True).T
    return np.linalg.solve(vander, rhs)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform nodes ``r_i = i * r_max / (n-1)`` with weights for integrals over R^d.

    The weights are the trapezoid rule with order-8 Gregory end corrections,
    multiplied by ``|S^{d-1}| r^{d-1}``. For d = 1 the factor 2 is the even
    extension to the whole line.
    """

    d: int
    n: int
    r_max: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"radial grids support d in (1, 2, 3), got {self.d}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 2 * _GREGORY_ORDER:
            raise GridError(f"radial grid needs at least {2 * _GREGORY_ORDER} nodes, got {self.n!r}")
        if not (self.r_max > 0 and math.isfinite(self.r_max)):
            raise GridError(f"r_max must be positive, got {self.r_max!r}")

    @property
    def h(self) -> float:
        return self.r_max / (self.n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    @property
    def size(self) -> int:
        return self.n

    @cached_property
    def r(self) -> np.ndarray:
        return self.h * np.arange(self.n)

    @cached_property
    def line_weights(self) -> np.ndarray:
        """Weights for ``int_0^r_max g(r) dr``."""
        w = np.ones(self.n)
        w[0] = w[-1] = 0.5
        a = _gregory_end_correction()
        w[: a.size] += a
        w[-a.size :] += a[::-1]
        return self.h * w

    @cached_property
    def weights(self) -> np.ndarray:
        return sphere_area(self.d) * self.r ** (self.d - 1) * self.line_weights

    def ball_volume(self) -> float:
        return float(np.sum(self.weights))


Grid = Union[CartesianGrid, RadialGrid]


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Field:
    """Complex values aligned with a grid. Values are stored read-only."""

    grid: Grid
    values: np.ndarray
    tag: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != self.grid.shape:
            raise GridError(f"values of shape {vals.shape} do not match grid shape {self.grid.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def require_finite(self) -> "Field":
        if not self.is_finite:
            raise NonFiniteFieldError(f"field {self.tag!r} has non-finite entries")
        return self

    def with_values(self, values: np.ndarray, tag: str | None = None) -> "Field":
        return Field(self.grid, values, self.tag if tag is None else tag)

    def __mul__(self, c) -> "Field":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        require_same_grid(self, other)
        return self.with_values(self.values + other.values)


def require_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridError("fields live on different grids")


def zeros(grid: Grid, tag: str = "zero") -> Field:
    return Field(grid, np.zeros(grid.shape), tag)


def from_function(grid: Grid, f, tag: str = "") -> Field:
    """Sample ``f`` at the grid points: ``f(*coords)`` or ``f(r)``."""
    if isinstance(grid, RadialGrid):
        return Field(grid, f(grid.r), tag)
    return Field(grid, np.broadcast_to(f(*grid.coords), grid.shape), tag)


def radial_on_cartesian(grid: CartesianGrid, f, tag: str = "") -> Field:
    """Sample a radial profile ``f(r)`` on a cartesian grid."""
    return Field(grid, f(grid.radius), tag)


# ---------------------------------------------------------------------------
# spectral transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Orthonormal discrete Fourier coefficients of a cartesian field."""

    grid: CartesianGrid
    coeffs: np.ndarray


def _require_cartesian(u: Field) -> CartesianGrid:
    if not isinstance(u.grid, CartesianGrid):
        raise GridError("operation needs a field on a cartesian grid")
    return u.grid


def fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, norm="ortho")


def ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, norm="ortho")


def forward_transform(u: Field) -> SpectralField:
    grid = _require_cartesian(u)
    return SpectralField(grid, fftn(u.values))


def inverse_transform(s: SpectralField, grid: CartesianGrid | None = None) -> Field:
    if grid is not None and grid != s.grid:
        raise GridError("spectral field belongs to a different grid")
    return Field(s.grid, ifftn(s.coeffs), "inverse_transform")


def spectral_gradient(grid: CartesianGrid, values: np.ndarray) -> list[np.ndarray]:
    """Components of the spectral gradient of ``values``."""
    hat = fftn(values)
    return [ifftn(1j * k * hat) for k in grid.kvec_odd]


def free_propagate(u: Field, t: float) -> Field:
    """Apply ``exp(i t Lap)``, i.e. the multiplier ``exp(-i t |k|^2)``."""
    grid = _require_cartesian(u)
    return u.with_values(ifftn(np.exp(-1j * t * grid.k2) * fftn(u.values)))


def translate(u: Field, shift) -> Field:
    """``u(x - shift)`` by a Fourier phase ramp (exact for band-limited fields)."""
    grid = _require_cartesian(u)
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (grid.d,))
    phase = sum(k * s for k, s in zip(grid.kvec, shift))
    return u.with_values(ifftn(np.exp(-1j * phase) * fftn(u.values)))


# ---------------------------------------------------------------------------
# radial finite differences
# ---------------------------------------------------------------------------

# fourth-order one-sided first-derivative stencil on points 0..4
_ONE_SIDED_D1 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_ONE_OFF_D1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0
# fourth-order one-sided second derivative at point 0 (points 0..5) and point 1 (0..5)
_ONE_SIDED_D2_0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0
_ONE_SIDED_D2_1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0


def _even_padded(f: np.ndarray) -> np.ndarray:
    # ghost values f(-r_i) = f(r_i): radial functions are even in r
    return np.concatenate([f[2:0:-1], f])


def radial_derivative(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central first derivative; even extension at r = 0, one-sided at r_max."""
    g = _even_padded(f)
    out = np.empty_like(f)
    out[:-2] = (g[:-4] - 8 * g[1:-3] + 8 * g[3:-1] - g[4:]) / (12 * h)
    tail = f[-5:][::-1]
    out[-1] = -(_ONE_SIDED_D1 @ tail) / h
    out[-2] = -(_ONE_OFF_D1 @ tail) / h
    return out


def radial_second_derivative(f: np.ndarray, h: float) -> np.ndarray:
    g = _even_padded(f)
    out = np.empty_like(f)
    out[:-2] = (-g[:-4] + 16 * g[1:-3] - 30 * g[2:-2] + 16 * g[3:-1] - g[4:]) / (12 * h * h)
    tail = f[-6:][::-1]
    out[-1] = (_ONE_SIDED_D2_0 @ tail) / (h * h)
    out[-2] = (_ONE_SIDED_D2_1 @ tail) / (h * h)
    return out


def radial_laplacian(f: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """``f'' + (d-1) f'/r`` with the r = 0 limit ``d f''(0)``."""
    d2 = radial_second_derivative(f, grid.h)
    if grid.d == 1:
        return d2
    d1 = radial_derivative(f, grid.h)
    out = d2.copy()
    r = grid.r
    out[1:] += (grid.d - 1) * d1[1:] / r[1:]
    out[0] = grid.d * d2[0]
    return out


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def integrate(u: Field | Grid, density: np.ndarray) -> float:
    """Integral over R^d of a real density sampled on the grid."""
    grid = u.grid if isinstance(u, Field) else u
    if isinstance(grid, RadialGrid):
        return float(np.dot(grid.weights, density))
    return float(np.sum(density) * grid.cell_volume)


def quadrature_Lq(u: Field, q: float) -> float:
    """``int |u|^q dx``."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    a = np.abs(u.values)
    return integrate(u, a**2 if q == 2 else a**q)


def gradient_norm_sq(u: Field) -> float:
    """``int |grad u|^2 dx``: spectral on cartesian grids, finite differences on radial ones."""
    if isinstance(u.grid, RadialGrid):
        du = radial_derivative(u.values, u.grid.h)
        return integrate(u, np.abs(du) ** 2)
    grid = u.grid
    hat = fftn(u.values)
    return float(np.sum(grid.k2 * np.abs(hat) ** 2) * grid.cell_volume)


def spectral_mass(u: Field) -> float:
    """``sum |u_hat|^2 (2L)^d / n^d`` with orthonormal coefficients."""
    grid = _require_cartesian(u)
    hat = fftn(u.values)
    return float(np.sum(np.abs(hat) ** 2) * (2 * grid.L) ** grid.d / grid.n**grid.d)


def boundary_ratio(u: Field, width: int = 2) -> float:
    """Largest amplitude in the outer ``width`` cells of the box relative to the maximum."""
    grid = _require_cartesian(u)
    a = np.abs(u.values)
    peak = a.max()
    if peak == 0:
        return 0.0
    edge = 0.0
    for ax in range(grid.d):
        lo = np.take(a, range(width), axis=ax)
        hi = np.take(a, range(grid.n - width, grid.n), axis=ax)
        edge = max(edge, lo.max(), hi.max())
    return float(edge / peak)
