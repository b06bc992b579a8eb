"""Variational functionals of the combined-power NLS and their scaling structure.

Every functional here is a fixed combination of four integrals::

    M = int |u|^2          G = int |grad u|^2
    P = int |u|^{p+1}      C = int |u|^{2(d+2)/d}

Under the mass-invariant scaling ``T_lambda u(x) = lambda^{d/2} u(lambda x)``
they transform as ``M -> M``, ``G -> lambda^2 G``, ``C -> lambda^2 C`` and
``P -> lambda^{d(p-1)/2} P``, which is what makes the lambda-structure of
``K(T_lambda u)`` available in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import bisect

from .core import (
    CartesianGrid,
    Field,
    GridError,
    Params,
    RadialGrid,
    boundary_ratio,
    fftn,
    free_propagate,
    gradient_norm_sq,
    ifftn,
    quadrature_Lq,
    translate,
)

EPS_ABS = 1e-12


class SupportOverflowError(ValueError):
    """A rescaled or translated field no longer fits on its grid."""


class ScalingRangeError(ValueError):
    """The zero of ``K(T_lambda u)`` lies outside the representable range."""


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Integrals:
    mass: float
    grad: float
    lp1: float
    lmc: float

    def scaled(self, lam: float, params: Params) -> "Integrals":
        """Integrals of ``T_lambda u`` from those of ``u``."""
        return Integrals(
            self.mass,
            lam**2 * self.grad,
            lam**params.scaling_exponent * self.lp1,
            lam**2 * self.lmc,
        )

    def __add__(self, other: "Integrals") -> "Integrals":
        return Integrals(
            self.mass + other.mass, self.grad + other.grad, self.lp1 + other.lp1, self.lmc + other.lmc
        )


def integrals(u: Field, params: Params) -> Integrals:
    u.require_finite()
    return Integrals(
        quadrature_Lq(u, 2),
        gradient_norm_sq(u),
        quadrature_Lq(u, params.p + 1),
        quadrature_Lq(u, params.mass_critical_power),
    )


@dataclass(frozen=True)
class FunctionalBundle:
    mass: float
    energy: float
    S_omega: float
    K: float
    K_quadratic: float
    K_nonlinear: float
    H_omega: float
    Lp1: float
    L_mass_crit: float

    @property
    def grad_norm_sq(self) -> float:
        return self.K_quadratic


def bundle_from_integrals(I: Integrals, params: Params) -> FunctionalBundle:
    d, p, om = params.d, params.p, params.omega
    energy = 0.5 * I.grad - I.lp1 / (p + 1) + d / (2 * (d + 2)) * I.lmc
    S = energy + 0.5 * om * I.mass
    KN = -d * (p - 1) / (2 * (p + 1)) * I.lp1 + d / (d + 2) * I.lmc
    K = I.grad + KN
    H = 0.5 * om * I.mass + (d * (p - 1) - 4) / (4 * (p + 1)) * I.lp1
    return FunctionalBundle(I.mass, energy, S, K, I.grad, KN, H, I.lp1, I.lmc)


def evaluate(u: Field, params: Params) -> FunctionalBundle:
    """Mass, energy, action, K (and its parts), H_omega and the two power integrals."""
    return bundle_from_integrals(integrals(u, params), params)


def trapping_bound(b: FunctionalBundle, params: Params) -> float:
    """``int |grad u|^2/2 + d/(2(d+2)) |u|^{2(d+2)/d}``: the upper side of the energy trap."""
    d = params.d
    return 0.5 * b.K_quadratic + d / (2 * (d + 2)) * b.L_mass_crit


def trapping_factor(params: Params) -> float:
    """``(d(p-1)-4)/(d(p-1))``."""
    dp = params.d * (params.p - 1)
    return (dp - 4) / dp


# ---------------------------------------------------------------------------
# energy-critical functionals (d = 3)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalBundle:
    K0: float
    H0: float
    E0: float
    sobolev_ratio: float


def critical_from_integrals(grad: float, crit: float, d: int) -> CriticalBundle:
    """``crit`` is ``int |u|^{2d/(d-2)}``."""
    q = 2 * d / (d - 2)
    ratio = math.sqrt(grad) / crit ** (1 / q) if crit > 0 else math.inf
    return CriticalBundle(
        K0=grad - crit,
        H0=crit / d,
        E0=0.5 * grad - (d - 2) / (2 * d) * crit,
        sobolev_ratio=ratio if grad > 0 else 0.0,
    )


def evaluate_critical(u: Field, params: Params) -> CriticalBundle:
    if params.d != 3:
        raise ValueError(f"energy-critical functionals are implemented for d = 3 only, got d = {params.d}")
    u.require_finite()
    return critical_from_integrals(gradient_norm_sq(u), quadrature_Lq(u, 6.0), 3)


# ---------------------------------------------------------------------------
# scalings
# ---------------------------------------------------------------------------


def _trig_interp_matrix(grid: CartesianGrid, points: np.ndarray) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant of nodal data at ``points``."""
    n = grid.n
    m = np.fft.fftfreq(n, d=1.0 / n)
    k = np.pi / grid.L * m
    phase = np.exp(1j * np.outer(points + grid.L, k))
    # split the Nyquist mode symmetrically so real data stay real
    nyq = n // 2
    phase[:, nyq] = np.cos(k[nyq] * (points + grid.L))
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n) / n
    return phase @ dft


def _rescale_cartesian(u: Field, lam: float, amp: float) -> np.ndarray:
    grid = u.grid
    pts = lam * grid.axis
    mat = _trig_interp_matrix(grid, pts)
    # the field is extended by zero outside the box, not periodically
    mat[(pts < -grid.L) | (pts >= grid.L)] = 0.0
    vals = u.values
    for ax in range(grid.d):
        vals = np.moveaxis(np.tensordot(mat, np.moveaxis(vals, ax, 0), axes=(1, 0)), 0, ax)
    return amp * vals


def _rescale_radial(u: Field, lam: float, amp: float, edge_tol: float) -> np.ndarray:
    grid = u.grid
    r = grid.r
    # even extension about r = 0 keeps the spline symmetric there
    rr = np.concatenate([-r[:0:-1], r])
    spl_re = make_interp_spline(rr, np.concatenate([u.values.real[:0:-1], u.values.real]), k=5)
    spl_im = make_interp_spline(rr, np.concatenate([u.values.imag[:0:-1], u.values.imag]), k=5)
    pts = lam * r
    inside = pts <= grid.r_max
    out = np.zeros(grid.n, dtype=complex)
    out[inside] = spl_re(pts[inside]) + 1j * spl_im(pts[inside])
    peak = np.abs(u.values).max()
    if lam < 1 and peak > 0 and np.abs(out[-1]) > edge_tol * peak:
        raise SupportOverflowError(f"dilation by {lam} pushes the profile past r_max")
    return amp * out


def rescale(u: Field, lam: float, mode: str = "mass_invariant", edge_tol: float = 1e-6) -> Field:
    """``lambda^a u(lambda x)`` with ``a = d/2`` (mass_invariant) or ``(d-2)/2`` (energy_invariant)."""
    if not lam > 0:
        raise ValueError(f"scaling factor must be positive, got {lam}")
    d = u.grid.d
    if mode == "mass_invariant":
        amp = lam ** (d / 2)
    elif mode == "energy_invariant":
        amp = lam ** ((d - 2) / 2)
    else:
        raise ValueError(f"unknown scaling mode {mode!r}")
    if lam == 1:
        return u.with_values(u.values.copy(), tag=f"T_1({u.tag})")
    if isinstance(u.grid, RadialGrid):
        vals = _rescale_radial(u, lam, amp, edge_tol)
    else:
        vals = _rescale_cartesian(u, lam, amp)
    out = u.with_values(vals, tag=f"T_{lam:g}({u.tag})")
    if isinstance(u.grid, CartesianGrid) and lam < 1:
        before = boundary_ratio(u)
        after = boundary_ratio(out)
        if after > max(edge_tol, 10 * before):
            raise SupportOverflowError(f"dilation by {lam} pushes the field to the box boundary (edge ratio {after:.2e})")
    return out


def K_over_lambda_sq(I: Integrals, params: Params, lam: float) -> float:
    """``lambda^{-2} K(T_lambda u)``, strictly decreasing in lambda."""
    d, p = params.d, params.p
    alpha = params.scaling_exponent - 2
    return I.grad + d / (d + 2) * I.lmc - d * (p - 1) / (2 * (p + 1)) * lam**alpha * I.lp1


def find_lambda_zero(
    u: Field | Integrals, params: Params, tol: float = 1e-10, limits: tuple[float, float] = (1e-12, 1e12)
) -> float:
    """Unique ``lambda_0 > 0`` with ``K(T_{lambda_0} u) = 0``, by bisection.

    The bracket starts at ``[1e-3, 1e3]`` and grows geometrically until the
    sign changes; ``tol`` is relative to ``lambda_0``.
    """
    I = u if isinstance(u, Integrals) else integrals(u, params)
    if I.lp1 == 0 or I.grad + I.lmc == 0:
        raise ValueError("lambda_0 is undefined for the zero field")

    def g(lam):
        return K_over_lambda_sq(I, params, lam)

    lo, hi = 1e-3, 1e3
    while g(lo) <= 0:
        lo /= 10
        if lo < limits[0]:
            raise ScalingRangeError("lambda_0 below the representable scaling range")
    while g(hi) >= 0:
        hi *= 10
        if hi > limits[1]:
            raise ScalingRangeError("lambda_0 above the representable scaling range")
    return float(bisect(g, lo, hi, xtol=1e-300, rtol=max(tol, 4 * np.finfo(float).eps), maxiter=400))


def lambda_zero_closed_form(I: Integrals, params: Params) -> float:
    d, p = params.d, params.p
    alpha = params.scaling_exponent - 2
    return ((I.grad + d / (d + 2) * I.lmc) / (d * (p - 1) / (2 * (p + 1)) * I.lp1)) ** (1 / alpha)


def action_on_nehari(u: Field | Integrals, params: Params) -> float:
    """``S_omega(T_{lambda_0} u)``: the action after projecting onto ``K = 0``."""
    I = u if isinstance(u, Integrals) else integrals(u, params)
    lam = find_lambda_zero(I, params)
    return bundle_from_integrals(I.scaled(lam, params), params).S_omega


# ---------------------------------------------------------------------------
# scaling identities
# ---------------------------------------------------------------------------


@dataclass
class ScalingReport:
    action_identity: float
    second_identity: float
    derivative_error: float
    derivative_fd: float
    K: float

    @property
    def derivative_rel_error(self) -> float:
        return self.derivative_error / (abs(self.K) + EPS_ABS)


def scaling_identities_check(u: Field, params: Params, step: float = 1e-4) -> ScalingReport:
    """Residuals of ``(2-L) S = omega M + c P`` and ``L(2-L) S = c' P``, plus ``dS(T_lambda u)/dlambda = K``.

    ``L`` is the scaling generator ``d/dlambda|_{lambda=1}`` along ``T_lambda``. The
    second identity uses closed-form lambda-derivatives of each integral; the
    last check rescales the field on its grid and takes a central difference.
    """
    d, p, om = params.d, params.p, params.omega
    I = integrals(u, params)
    b = bundle_from_integrals(I, params)
    dp = d * (p - 1)
    res_a = abs(2 * b.S_omega - b.K - om * b.mass - (dp - 4) / (2 * (p + 1)) * b.Lp1)

    # L acting on a functional that scales like lambda^e is multiplication by e
    a = params.scaling_exponent
    LS = I.grad + d / (d + 2) * I.lmc - a / (p + 1) * I.lp1  # = K
    LLS = 2 * I.grad + 2 * d / (d + 2) * I.lmc - a * a / (p + 1) * I.lp1
    res_b = abs((2 * LS - LLS) - dp * (dp - 4) / (4 * (p + 1)) * I.lp1)

    if I.mass == 0:
        return ScalingReport(res_a, res_b, 0.0, 0.0, b.K)
    s_plus = evaluate(rescale(u, 1 + step), params).S_omega
    s_minus = evaluate(rescale(u, 1 - step), params).S_omega
    fd = (s_plus - s_minus) / (2 * step)
    return ScalingReport(res_a, res_b, abs(fd - b.K), fd, b.K)


# ---------------------------------------------------------------------------
# decoupling
# ---------------------------------------------------------------------------

DECOUPLED = ("mass", "grad_norm_sq", "energy", "S_omega", "K", "H_omega")


@dataclass
class DecouplingScenario:
    """Profiles placed at ``x^j`` with phase ``theta^j``, propagated by ``exp(-i t^j Lap)``."""

    profiles: list[Field]
    translations: list
    phases: list[float]
    time_shifts: list[float]
    remainder: Field | None = None

    def __post_init__(self):
        k = len(self.profiles)
        if not (len(self.translations) == len(self.phases) == len(self.time_shifts) == k):
            raise ValueError("profiles, translations, phases and time_shifts must have equal length")

    def separations(self) -> dict[tuple[int, int], float]:
        out = {}
        for j in range(len(self.profiles)):
            for m in range(j + 1, len(self.profiles)):
                dx = np.linalg.norm(np.atleast_1d(self.translations[j]) - np.atleast_1d(self.translations[m]))
                out[(j, m)] = float(dx + abs(self.time_shifts[j] - self.time_shifts[m]))
        return out


def _functional_values(b: FunctionalBundle) -> dict[str, float]:
    return {
        "mass": b.mass,
        "grad_norm_sq": b.grad_norm_sq,
        "energy": b.energy,
        "S_omega": b.S_omega,
        "K": b.K,
        "H_omega": b.H_omega,
    }


@dataclass
class DecouplingReport:
    defects: dict[str, float]
    separations: dict[tuple[int, int], float]

    @property
    def max_defect(self) -> float:
        return max(self.defects.values())


def assemble(s: DecouplingScenario, edge_tol: float = 1e-10) -> tuple[Field, list[Field]]:
    """Return ``phi_n`` and the list of propagated profiles ``exp(-i t^j Lap) phi^j``."""
    pieces = []
    total = None
    for phi, x, theta, t in zip(s.profiles, s.translations, s.phases, s.time_shifts):
        if not isinstance(phi.grid, CartesianGrid):
            raise GridError("decoupling scenarios need cartesian profiles")
        prop = free_propagate(phi, -t)
        pieces.append(prop)
        placed = np.exp(1j * theta) * translate(prop, x).values
        total = placed if total is None else total + placed
    grid = s.profiles[0].grid
    if s.remainder is not None:
        total = total + s.remainder.values
    phi_n = Field(grid, total, "phi_n")
    if boundary_ratio(phi_n) > edge_tol:
        raise SupportOverflowError("translated profiles reach the box boundary")
    return phi_n, pieces


def decoupling_check(s: DecouplingScenario, params: Params) -> DecouplingReport:
    """Additivity defects ``|F(phi_n) - sum_j F(profile_j) - F(w)|`` for six functionals."""
    phi_n, pieces = assemble(s)
    whole = _functional_values(evaluate(phi_n, params))
    acc = dict.fromkeys(whole, 0.0)
    parts = pieces + ([s.remainder] if s.remainder is not None else [])
    for piece in parts:
        for key, val in _functional_values(evaluate(piece, params)).items():
            acc[key] += val
    defects = {key: abs(whole[key] - acc[key]) for key in DECOUPLED}
    return DecouplingReport(defects, s.separations())


def defects_decrease(reports: list[DecouplingReport], floor: float = 0.0) -> dict[str, bool]:
    """Per functional: whether the defect strictly decreases along the list.

    Successive values that both sit at or below ``floor`` count as decreasing
    (round-off cannot order them).
    """
    out = {}
    for key in DECOUPLED:
        vals = [r.defects[key] for r in reports]
        out[key] = all(b < a or (a <= floor and b <= floor) for a, b in zip(vals, vals[1:]))
    return out

