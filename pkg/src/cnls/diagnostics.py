"""Virial quantities, cutoff weights, radial Sobolev constants and run verdicts.

For a radial weight ``phi_R(x) = R^2 phi(|x|/R)`` the localized virial is

    V_R   = int phi_R |u|^2
    V_R'  = 2 Im int grad phi_R . grad u conj(u)
    V_R'' = 4 Re int d_j d_k phi_R d_j conj(u) d_k u - int Lap^2 phi_R |u|^2
            - 2(p-1)/(p+1) int Lap phi_R |u|^{p+1} + 4/(d+2) int Lap phi_R |u|^{2(d+2)/d}

and ``V_R'' = 8 K(u)`` whenever ``u`` lives where ``phi_R = |x|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .core import (
    CartesianGrid,
    Field,
    Params,
    RadialGrid,
    fftn,
    ifftn,
    integrate,
    radial_derivative,
    sphere_area,
)
from .evolution import Trajectory, modulus_power
from .functionals import EPS_ABS
from .groundstate import Membership

CUTOFF_KINDS = ("scattering_cutoff", "blowup_cutoff")

# C^3 smoothstep: S(0)=0, S(1)=1, first three derivatives vanish at both ends
SMOOTHSTEP = Polynomial([0, 0, 0, 0, 35, -84, 70, -20])


def _blend_pieces(kind: str) -> list[tuple[float, float, Polynomial]]:
    """Polynomial pieces of ``phi`` on ``[1, b]`` in the unit variable ``s = r/R``."""
    s = Polynomial([0, 1])
    if kind == "scattering_cutoff":
        # phi = s^2 (1 - S(s - 1)) on [1, 2], then 0
        blend = SMOOTHSTEP(s - 1)
        return [(1.0, 2.0, s**2 * (1 - blend))]
    if kind == "blowup_cutoff":
        # phi' = 2 s (1 - S((s - 1)/2)) on [1, 3], then phi constant
        slope = 2 * s * (1 - SMOOTHSTEP((s - 1) / 2))
        prim = slope.integ()
        return [(1.0, 3.0, prim - prim(1.0) + 1.0)]
    raise ValueError(f"cutoff kind must be one of {CUTOFF_KINDS}, got {kind!r}")


class CutoffProfile:
    """``phi(s)`` with exact derivatives, ``phi = s^2`` on ``[0, 1]``."""

    def __init__(self, kind: str):
        self.kind = kind
        (self.a, self.b, poly) = _blend_pieces(kind)[0]
        self._factored = kind == "scattering_cutoff"
        self.derivs = [poly.deriv(k) if k else poly for k in range(5)]
        self.outer_value = float(poly(self.b))

    @property
    def support_end(self) -> float:
        return self.b

    def __call__(self, s, k: int = 0) -> np.ndarray:
        """``k``-th derivative of ``phi`` at ``s``."""
        s = np.asarray(s, dtype=float)
        inner = [s**2, 2 * s, 2 * np.ones_like(s), np.zeros_like(s), np.zeros_like(s)][k]
        outer = self.outer_value if k == 0 else 0.0
        if k == 0 and self._factored:
            # s^2 S(2 - s) avoids cancellation where the blend nearly vanishes
            mid = s**2 * SMOOTHSTEP(np.clip(2 - s, 0.0, 1.0))
        else:
            mid = self.derivs[k](s)
        return np.where(s <= self.a, inner, np.where(s >= self.b, outer, mid))

    def laplacian_parts(self, s, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``phi'/s``, ``Lap phi`` and ``Lap^2 phi`` in the unit variable."""
        s = np.asarray(s, dtype=float)
        inner = s <= self.a
        ss = np.where(inner, 1.0, s)
        d1, d2, d3, d4 = (self(s, k) for k in (1, 2, 3, 4))
        over_s = np.where(inner, 2.0, d1 / ss)
        lap = np.where(inner, 2.0 * d, d2 + (d - 1) * d1 / ss)
        f1 = d3 + (d - 1) * (d2 / ss - d1 / ss**2)
        f2 = d4 + (d - 1) * (d3 / ss - 2 * d2 / ss**2 + 2 * d1 / ss**3)
        bilap = np.where(inner, 0.0, f2 + (d - 1) * f1 / ss)
        return over_s, lap, bilap


@dataclass
class CutoffWeight:
    """``phi_R(x) = R^2 phi(|x|/R)`` sampled on a grid, with ``phi_R = |x|^2`` on ``|x| <= R``."""

    kind: str
    R: float
    grid: object

    def __post_init__(self):
        if self.kind not in CUTOFF_KINDS:
            raise ValueError(f"cutoff kind must be one of {CUTOFF_KINDS}, got {self.kind!r}")
        if not self.R > 0:
            raise ValueError("cutoff radius must be positive")

    @cached_property
    def profile(self) -> CutoffProfile:
        return CutoffProfile(self.kind)

    @cached_property
    def _r(self) -> np.ndarray:
        g = self.grid
        return g.r if isinstance(g, RadialGrid) else g.radius

    @cached_property
    def phi(self) -> np.ndarray:
        return self.R**2 * self.profile(self._r / self.R)

    @cached_property
    def dphi(self) -> np.ndarray:
        """Radial derivative ``phi_R'(r)``."""
        return self.R * self.profile(self._r / self.R, 1)

    @cached_property
    def d2phi(self) -> np.ndarray:
        return self.profile(self._r / self.R, 2)

    @cached_property
    def _lap_parts(self):
        return self.profile.laplacian_parts(self._r / self.R, self.grid.d)

    @property
    def dphi_over_r(self) -> np.ndarray:
        return self._lap_parts[0]

    @property
    def laplacian(self) -> np.ndarray:
        return self._lap_parts[1]

    @property
    def bilaplacian(self) -> np.ndarray:
        return self._lap_parts[2] / self.R**2

    @cached_property
    def unit_radial(self) -> tuple[np.ndarray, ...]:
        """``x/|x|`` on a cartesian grid (zero at the origin)."""
        g = self.grid
        r = self._r
        safe = np.where(r > 0, r, 1.0)
        return tuple(np.where(r > 0, c / safe, 0.0) for c in g.coords)

    @cached_property
    def gradient(self) -> tuple[np.ndarray, ...]:
        return tuple(self.dphi * e for e in self.unit_radial)

    def hessian(self, j: int, k: int) -> np.ndarray:
        e = self.unit_radial
        delta = 1.0 if j == k else 0.0
        return self.d2phi * e[j] * e[k] + self.dphi_over_r * (delta - e[j] * e[k])

    def phi_second_max(self) -> float:
        return float(np.max(self.d2phi))


def _check_grid(u: Field, w: CutoffWeight) -> None:
    if u.grid != w.grid:
        raise ValueError("field and cutoff weight live on different grids")


def virial(u: Field, w: CutoffWeight, modulus: np.ndarray | None = None) -> float:
    _check_grid(u, w)
    a = np.abs(u.values) if modulus is None else modulus
    return integrate(u, w.phi * a * a)


def _gradients(u: Field, uhat: np.ndarray | None = None) -> list[np.ndarray]:
    g = u.grid
    if isinstance(g, RadialGrid):
        return [radial_derivative(u.values, g.h)]
    uh = fftn(u.values) if uhat is None else uhat
    return [ifftn(1j * k * uh) for k in g.kvec_odd]


def virial_derivatives(u: Field, w: CutoffWeight, params: Params, uhat: np.ndarray | None = None,
                       modulus: np.ndarray | None = None) -> tuple[float, float]:
    """``(V_R', V_R'')`` from the exact integral identities.

    ``uhat`` and ``modulus`` may carry an already computed transform and ``|u|``.
    """
    _check_grid(u, w)
    d, p = params.d, params.p
    a = np.abs(u.values) if modulus is None else modulus
    grads = _gradients(u, uhat)
    if isinstance(u.grid, RadialGrid):
        ur = grads[0]
        vp = 2 * integrate(u, w.dphi * np.imag(ur * np.conj(u.values)))
        kinetic = integrate(u, w.d2phi * np.abs(ur) ** 2)
    else:
        e = w.unit_radial
        ur = sum(ei * gi for ei, gi in zip(e, grads))
        vp = 2 * integrate(u, w.dphi * np.imag(ur * np.conj(u.values)))
        full = sum(np.abs(gi) ** 2 for gi in grads)
        radial_sq = np.abs(ur) ** 2
        kinetic = integrate(u, w.d2phi * radial_sq + w.dphi_over_r * (full - radial_sq))
    lap = w.laplacian
    vpp = (
        4 * kinetic
        - integrate(u, w.bilaplacian * (a * a))
        - 2 * (p - 1) / (p + 1) * integrate(u, lap * modulus_power(a, p + 1))
        + 4 / (d + 2) * integrate(u, lap * modulus_power(a, 2 * (d + 2) / d))
    )
    return float(vp), float(vpp)


def virial_probe(w: CutoffWeight, params: Params):
    """Callable ``u -> (V, V', V'')`` for streaming during evolution."""

    def probe(u: Field, uhat=None, modulus=None):
        vp, vpp = virial_derivatives(u, w, params, uhat, modulus)
        return virial(u, w, modulus), vp, vpp

    return probe


# ---------------------------------------------------------------------------
# identity check along a trajectory
# ---------------------------------------------------------------------------


@dataclass
class VirialSeries:
    times: np.ndarray
    V: np.ndarray
    Vp: np.ndarray
    Vpp: np.ndarray
    Vpp_fd: np.ndarray  # NaN at the two end points
    Vp_fd: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not all(len(x) == n for x in (self.V, self.Vp, self.Vpp, self.Vpp_fd, self.Vp_fd)):
            raise ValueError("virial series are misaligned")


def _second_difference(t: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Three-point first and second derivatives on a possibly nonuniform mesh."""
    d1 = np.full_like(v, np.nan)
    d2 = np.full_like(v, np.nan)
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    d2[1:-1] = 2 * (h0 * v[2:] - (h0 + h1) * v[1:-1] + h1 * v[:-2]) / (h0 * h1 * (h0 + h1))
    d1[1:-1] = (h0**2 * v[2:] + (h1**2 - h0**2) * v[1:-1] - h1**2 * v[:-2]) / (h0 * h1 * (h0 + h1))
    return d1, d2


@dataclass
class VirialIdentityReport:
    series: VirialSeries
    max_rel_second: float
    max_rel_first: float
    scale_rel_second: float  # normalised by max |V''| instead of pointwise

    def as_dict(self) -> dict:
        return {
            "max_rel_second": self.max_rel_second,
            "max_rel_first": self.max_rel_first,
            "scale_rel_second": self.scale_rel_second,
        }


def virial_series(tr: Trajectory, w: CutoffWeight, params: Params, use_snapshots: bool = False) -> VirialSeries:
    if use_snapshots or not np.all(np.isfinite(tr.column("V_R"))):
        fields = tr.snapshots
        t = np.array(tr.snapshot_times, dtype=float)
        vals = [(virial(u, w),) + virial_derivatives(u, w, params) for u in fields]
        V, Vp, Vpp = (np.array(x) for x in zip(*vals)) if vals else (np.array([]),) * 3
    else:
        t = np.array(tr.times, dtype=float)
        V, Vp, Vpp = tr.column("V_R"), tr.column("V_R_prime"), tr.column("V_R_second")
    if len(t) < 5:
        raise ValueError("virial identity check needs at least 5 time levels")
    d1, d2 = _second_difference(t, V)
    return VirialSeries(t, V, Vp, Vpp, d2, d1)


def virial_identity_check(tr: Trajectory, w: CutoffWeight, params: Params,
                          use_snapshots: bool = False) -> VirialIdentityReport:
    """Finite differences of ``V_R`` in time against the closed identities for ``V_R'`` and ``V_R''``."""
    s = virial_series(tr, w, params, use_snapshots)
    inner = slice(1, -1)
    e2 = np.abs(s.Vpp_fd[inner] - s.Vpp[inner])
    e1 = np.abs(s.Vp_fd[inner] - s.Vp[inner])
    rel2 = float(np.max(e2 / (np.abs(s.Vpp[inner]) + EPS_ABS)))
    rel1 = float(np.max(e1 / (np.abs(s.Vp[inner]) + EPS_ABS)))
    scale2 = float(np.max(e2) / (np.max(np.abs(s.Vpp[inner])) + EPS_ABS))
    return VirialIdentityReport(s, rel2, rel1, scale2)


def virial_first_bound(u: Field, w: CutoffWeight) -> float:
    """Cauchy-Schwarz bound ``|V_R'| <= 2 max|grad phi_R| sqrt(M ||grad u||^2)``."""
    grads = _gradients(u)
    g2 = integrate(u, sum(np.abs(g) ** 2 for g in grads))
    m = integrate(u, np.abs(u.values) ** 2)
    return 2 * float(np.max(np.abs(w.dphi))) * math.sqrt(m * g2)


# ---------------------------------------------------------------------------
# radial Sobolev
# ---------------------------------------------------------------------------


@dataclass
class RadialSobolevReport:
    R: float
    lhs_p: float
    rhs_p: float  # without the constant
    lhs_mc: float
    rhs_mc: float
    constant_p: float
    constant_mc: float
    bound_p: float  # explicit constant from the Strauss-type pointwise bound
    bound_mc: float

    @property
    def within_bounds(self) -> bool:
        tol = 1 + 1e-6
        return self.constant_p <= self.bound_p * tol and self.constant_mc <= self.bound_mc * tol

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("R", "constant_p", "constant_mc", "bound_p", "bound_mc")}


def strauss_constants(params: Params) -> tuple[float, float]:
    """Explicit constants ``(2/|S^{d-1}|)^{(q-2)/2}`` for ``q = p+1`` and ``q = 2+4/d``.

    They follow from ``|u(r)|^2 <= 2/(|S^{d-1}| r^{d-1}) ||u||_{L^2(|x|>r)} ||grad u||_{L^2(|x|>r)}``.
    """
    base = 2 / sphere_area(params.d)
    return base ** ((params.p - 1) / 2), base ** (2 / params.d)


def radial_sobolev_check(u: Field, R: float, params: Params) -> RadialSobolevReport:
    """Implied constants of the exterior radial Sobolev inequalities on ``|x| >= R``."""
    grid = u.grid
    if not isinstance(grid, RadialGrid):
        raise TypeError("radial_sobolev_check needs a field on a radial grid")
    if params.d < 2:
        raise ValueError("radial Sobolev inequalities need d >= 2")
    d, p = params.d, params.p
    outside = grid.r >= R
    a = np.abs(u.values)
    du = np.abs(radial_derivative(u.values, grid.h))
    w = grid.weights * outside
    mass = float(np.dot(w, a**2))
    grad = float(np.dot(w, du**2))
    lhs_p = float(np.dot(w, a ** (p + 1)))
    lhs_mc = float(np.dot(w, a ** (2 + 4 / d)))
    rhs_p = R ** (-(d - 1) * (p - 1) / 2) * mass ** ((p + 3) / 4) * grad ** ((p - 1) / 4)
    rhs_mc = R ** (-2 * (d - 1) / d) * mass ** ((d + 1) / d) * grad ** (1 / d)
    cp = lhs_p / rhs_p if rhs_p > 0 else 0.0
    cm = lhs_mc / rhs_mc if rhs_mc > 0 else 0.0
    bp, bm = strauss_constants(params)
    return RadialSobolevReport(R, lhs_p, rhs_p, lhs_mc, rhs_mc, cp, cm, bp, bm)


# ---------------------------------------------------------------------------
# verdicts and monitors
# ---------------------------------------------------------------------------


@dataclass
class ScatterThresholds:
    increment_share: float = 0.01
    amplitude_ratio: float = 0.1
    tail_fraction: float = 0.2


@dataclass
class Verdict:
    outcome: str
    evidence: dict
    theory_consistent: Optional[bool]
    membership: Optional[Membership] = None

    def as_dict(self) -> dict:
        out = {"outcome": self.outcome, "evidence": self.evidence, "theory_consistent": self.theory_consistent}
        if self.membership is not None:
            out["membership"] = self.membership.as_dict()
        return out


def predicted_outcome(m: Membership, params: Params) -> Optional[str]:
    """Outcome forced by the dichotomy, or ``None`` where nothing is predicted."""
    if m.set == "A_plus":
        return "Scatter"
    if m.set == "A_minus" and params.blowup_theorem_applies:
        return "Blowup"
    return None


def _tail_share(times: np.ndarray, cumulative: np.ndarray, fraction: float) -> float:
    total = cumulative[-1]
    if total <= 0:
        return 0.0
    t_cut = times[-1] - fraction * (times[-1] - times[0])
    at_cut = np.interp(t_cut, times, cumulative)
    return float((total - at_cut) / total)


def classify_outcome(tr: Trajectory, membership: Membership | None, params: Params,
                     thresholds: ScatterThresholds | None = None) -> Verdict:
    """Blowup iff the run was blowup-terminated; Scatter iff completed with a flat spacetime norm and decayed amplitude."""
    th = thresholds or ScatterThresholds()
    times = np.array(tr.times, dtype=float)
    share_mc = _tail_share(times, np.array(tr.cumulative_mc), th.tail_fraction)
    share_p = _tail_share(times, np.array(tr.cumulative_p), th.tail_fraction)
    lp1 = tr.column("Lp1_norm")
    ratio = float(lp1[-1] / lp1[0]) if lp1[0] > 0 else 0.0
    evidence = {
        "status": tr.status,
        "t_final": float(times[-1]),
        "steps": tr.steps,
        "spacetime_mc": tr.spacetime_K_norm[0],
        "spacetime_p": tr.spacetime_K_norm[1],
        "tail_share_mc": share_mc,
        "tail_share_p": share_p,
        "Lp1_ratio": ratio,
        "grad_growth": float(math.sqrt(tr.series[-1].grad_norm_sq / tr.series[0].grad_norm_sq))
        if tr.series[0].grad_norm_sq > 0 else 1.0,
        "max_boundary_ratio": tr.max_boundary_ratio(),
    }
    if tr.status == "blowup_terminated":
        outcome = "Blowup"
    elif (
        tr.status == "completed"
        and share_mc < th.increment_share
        and share_p < th.increment_share
        and ratio < th.amplitude_ratio
    ):
        outcome = "Scatter"
    else:
        outcome = "Undecided"
    consistent = None
    if membership is not None:
        pred = predicted_outcome(membership, params)
        consistent = None if pred is None else outcome == pred
    return Verdict(outcome, evidence, consistent, membership)


@dataclass
class BoundReport:
    holds: bool
    violations: int
    worst_margin: float  # smallest (rhs - lhs) style slack; negative means violated
    detail: dict = field(default_factory=dict)


def minus_set_bound(tr: Trajectory, m_omega: float) -> BoundReport:
    """``K(u(t)) < -(m_omega - S_omega(u(t)))`` at every recorded time."""
    K = tr.column("K")
    S = tr.column("S_omega")
    slack = -(m_omega - S) - K
    bad = int(np.sum(slack <= 0))
    return BoundReport(bad == 0, bad, float(np.min(slack)), {"max_K": float(np.max(K))})


def plus_set_terms(tr: Trajectory, m_omega: float, params: Params) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(K, c (G + d/(d+2) C), m - S)`` along the run, ``c = (d(p-1)-4)/(d(p-1))``."""
    d, p = params.d, params.p
    c = (d * (p - 1) - 4) / (d * (p - 1))
    K = tr.column("K")
    first = c * (tr.column("grad_norm_sq") + d / (d + 2) * tr.column("Lmc_norm"))
    gap = m_omega - tr.column("S_omega")
    return K, first, gap


def calibrate_plus_delta(runs: list[Trajectory], m_omega: float, params: Params) -> float:
    """Largest ``delta`` with ``K >= min(c (G + d/(d+2) C), delta (m - S))`` on every sample of ``runs``.

    Returns ``inf`` when the first branch alone always holds and a nonpositive
    number when no positive ``delta`` works.
    """
    best = math.inf
    for tr in runs:
        K, first, gap = plus_set_terms(tr, m_omega, params)
        need = K < first
        if not need.any():
            continue
        if np.any(gap[need] <= 0):
            return -math.inf
        best = min(best, float(np.min(K[need] / gap[need])))
    return best


def plus_set_bound(tr: Trajectory, m_omega: float, params: Params, delta: float) -> BoundReport:
    K, first, gap = plus_set_terms(tr, m_omega, params)
    rhs = np.minimum(first, delta * gap)
    slack = K - rhs
    bad = int(np.sum(slack < 0))
    return BoundReport(bad == 0 and delta > 0, bad, float(np.min(slack)),
                       {"delta": delta, "K_nonnegative": bool(np.all(K >= 0))})


def delta_one(S0: float, m_omega: float) -> float:
    """``delta_1`` with ``S_omega(u0) = (1 - delta_1) m_omega``."""
    return 1 - S0 / m_omega


@dataclass
class ConcavityWindow:
    level: float
    longest: int
    start: float
    end: float
    all_steps: bool

    def as_dict(self) -> dict:
        return {"level": self.level, "longest_steps": self.longest, "start": self.start, "end": self.end,
                "all_steps": self.all_steps}


def concavity_window(tr: Trajectory, delta1: float, m_omega: float) -> ConcavityWindow:
    """Longest run of consecutive samples with ``V_R'' <= -4 delta_1 m_omega``."""
    level = -4 * delta1 * m_omega
    vpp = tr.column("V_R_second")
    t = np.array(tr.times)
    ok = vpp <= level
    best, start, cur, cur_start = 0, 0, 0, 0
    for i, flag in enumerate(ok):
        if flag:
            if cur == 0:
                cur_start = i
            cur += 1
            if cur > best:
                best, start = cur, cur_start
        else:
            cur = 0
    if best == 0:
        return ConcavityWindow(level, 0, float("nan"), float("nan"), False)
    return ConcavityWindow(level, best, float(t[start]), float(t[start + best - 1]), bool(ok.all()))


def trailing_monotone(values: np.ndarray, count: int = 20) -> bool:
    """Strict increase over the last ``count`` samples."""
    tail = np.asarray(values)[-(count + 1):]
    return bool(len(tail) > count and np.all(np.diff(tail) > 0))
