"""Ground states, the Aubin-Talenti profile, the threshold ``m_omega`` and set membership.

The ground state solves the radial ODE

    Q'' + (d-1)/r Q' - omega Q + Q^p - Q^{1+4/d} = 0,   Q'(0) = 0,   Q -> 0,

and is found by shooting on ``Q(0)``. Bisection drives the bracket to adjacent
floating point numbers; the forward solution is then trusted only while the
two bracket trajectories agree, and the exponentially small tail is
recovered by integrating inward from ``r_max`` starting on the decaying
modified-Bessel solution of the linearised equation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy import sparse
from scipy.interpolate import make_interp_spline
from scipy.sparse.linalg import spsolve
from scipy.optimize import brentq
from scipy.special import kve

from .core import (
    CartesianGrid,
    Field,
    Params,
    RadialGrid,
    radial_derivative,
    radial_laplacian,
    sphere_area,
)
from .functionals import (
    FunctionalBundle,
    Integrals,
    bundle_from_integrals,
    critical_from_integrals,
    evaluate,
    integrals,
    rescale,
)

log = logging.getLogger(__name__)

DEFAULT_NODES = 16001
_RTOL = 1e-13
_ATOL = 1e-22
_START = 1e-4


class ShootingError(RuntimeError):
    """No ground state could be bracketed or the candidate is not monotone."""


def default_radial_grid(params: Params, n: int = DEFAULT_NODES) -> RadialGrid:
    return RadialGrid(params.d, n, 40.0 / math.sqrt(params.omega))


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------


def _source(params: Params):
    om, p, mc = params.omega, params.p, 4 / params.d

    def g(q):
        a = abs(q)
        return om * q - a ** (p - 1) * q + a**mc * q

    return g


def _integrate(params: Params, Q0: float, r_end: float, dense: bool = False):
    """Integrate outward from the series start; returns (kind, solution)."""
    d = params.d
    g = _source(params)

    def rhs(r, y):
        return [y[1], -(d - 1) / r * y[1] + g(y[0])]

    g0 = g(Q0)
    y0 = [Q0 + _START**2 / (2 * d) * g0, _START / d * g0]

    def overshoot(r, y):
        return y[0]

    overshoot.terminal = True
    overshoot.direction = -1

    def undershoot(r, y):
        return y[1]

    undershoot.terminal = True
    undershoot.direction = 1

    if g0 >= 0:
        # Q''(0) >= 0: the profile turns upward immediately
        return "under", None
    sol = solve_ivp(
        rhs,
        (_START, r_end),
        y0,
        method="DOP853",
        rtol=_RTOL,
        atol=_ATOL,
        events=(overshoot, undershoot),
        dense_output=dense,
    )
    if sol.t_events[0].size:
        return "over", sol
    if sol.t_events[1].size:
        return "under", sol
    return "none", sol


def _bracket(params: Params, r_end: float) -> tuple[float, float]:
    om, p, mc = params.omega, params.p, 4 / params.d
    # positive zero of omega - Q^{p-1} + Q^{4/d}: below it Q''(0) > 0
    f = lambda q: om - q ** (p - 1) + q**mc
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
        if hi > 1e8:
            raise ShootingError("could not locate the zero of the source term")
    zero = brentq(f, 0.0, hi, xtol=1e-300, rtol=1e-15)
    lo = zero * (1 + 1e-12)
    hi = 2 * zero
    for _ in range(60):
        kind, _ = _integrate(params, hi, r_end)
        if kind == "over":
            return lo, hi
        lo, hi = hi, 2 * hi
    raise ShootingError("no overshooting initial value found")


def _classify_batch(params: Params, cand: np.ndarray, r_end: float, chunk: float = 1.0) -> np.ndarray:
    """Integrate many shooting values at once; +1 overshoot, -1 undershoot, 0 undecided."""
    d, m = params.d, cand.size
    g = _source(params)
    g0 = g(cand)
    y = np.concatenate([cand + _START**2 / (2 * d) * g0, _START / d * g0])
    alive = np.ones(m)
    state = np.zeros(m, dtype=int)

    def rhs(r, Y):
        q, dq = Y[:m], Y[m:]
        return np.concatenate([dq * alive, (-(d - 1) / r * dq + g(q)) * alive])

    r0 = _START
    while r0 < r_end and (state == 0).any():
        r1 = min(r0 + chunk, r_end)
        sol = solve_ivp(rhs, (r0, r1), y, method="DOP853", rtol=_RTOL, atol=_ATOL)
        over = (sol.y[:m] < 0).any(axis=1)
        under = (sol.y[m:] > 0).any(axis=1) & ~over
        fresh = state == 0
        state[fresh & over] = 1
        state[fresh & under] = -1
        alive[state != 0] = 0.0
        y = sol.y[:, -1].copy()
        y[:m][state != 0] = 0.0
        y[m:][state != 0] = 0.0
        r0 = r1
    state[g0 >= 0] = -1
    return state


def _bisect(params: Params, r_end: float, batch: int = 128) -> tuple[float, float, int]:
    """Multisection on ``Q(0)`` down to adjacent floats, ``batch`` trial values per round."""
    lo, hi = _bracket(params, r_end)
    rounds = 0
    while True:
        cand = np.linspace(lo, hi, batch + 2)[1:-1]
        cand = np.unique(cand[(cand > lo) & (cand < hi)])
        if cand.size == 0:
            break
        state = _classify_batch(params, cand, r_end)
        over = np.flatnonzero(state == 1)
        top = over[0] if over.size else cand.size
        if over.size:
            hi = float(cand[top])
        under = np.flatnonzero(state[:top] == -1)
        if under.size:
            lo = float(cand[under[-1]])
        rounds += 1
        if not over.size and not under.size:
            raise ShootingError("shooting trials neither overshoot nor undershoot; enlarge r_max")
    return lo, hi, rounds


def _decaying_mode(params: Params, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``r^{-nu} K_nu(sqrt(omega) r) e^{sqrt(omega) r}`` and its log-derivative, ``nu = (d-2)/2``."""
    nu = (params.d - 2) / 2
    k = math.sqrt(params.omega)
    z = k * r
    base = r ** (-nu) * kve(nu, z)
    # (r^{-nu} K_nu(z))' = -k r^{-nu} K_{nu+1}(z)
    logder = -k * kve(nu + 1, z) / kve(nu, z)
    return base, logder


def _inward_tail(params: Params, r_match: float, q_match: float, r_far: float):
    """Solve inward from ``r_far`` on the decaying mode, scaled to hit ``q_match`` at ``r_match``."""
    d = params.d
    g = _source(params)

    def rhs(r, y):
        return [y[1], -(d - 1) / r * y[1] + g(y[0])]

    base, logder = _decaying_mode(params, np.array([r_far, r_match]))
    k = math.sqrt(params.omega)

    def shoot(log_amp):
        amp = math.exp(log_amp)
        q_far = amp * base[0] * math.exp(-k * (r_far - r_match))
        sol = solve_ivp(
            rhs, (r_far, r_match), [q_far, q_far * logder[0]], method="DOP853", rtol=_RTOL, atol=_ATOL,
            dense_output=True,
        )
        return sol

    # linear guess from the Bessel mode, then correct for the nonlinearity
    guess = math.log(q_match / base[1])
    f = lambda la: math.log(shoot(la).y[0, -1]) - math.log(q_match)
    la = guess
    for _ in range(8):
        val = f(la)
        if abs(val) < 1e-15:
            break
        la -= val  # q(r_match) is linear in the amplitude up to tiny nonlinear terms
    return shoot(la)


@dataclass
class GroundState:
    params: Params
    profile: Field
    residual_sup: float
    K_of_Q: float
    m_omega: float
    Q0: float
    decay_rate: float
    bundle: FunctionalBundle
    bracket_width: float = 0.0
    r_match: float = float("nan")

    @property
    def omega(self) -> float:
        return self.params.omega

    @property
    def grid(self) -> RadialGrid:
        return self.profile.grid

    @property
    def K_relative(self) -> float:
        b = self.bundle
        return abs(self.K_of_Q) / (b.K_quadratic + abs(b.K_nonlinear))

    def summary(self) -> dict:
        return {
            "m_omega": self.m_omega,
            "Q0": self.Q0,
            "residual_sup": self.residual_sup,
            "K_of_Q": self.K_of_Q,
            "decay_rate": self.decay_rate,
        }


def ode_residual(values: np.ndarray, grid: RadialGrid, params: Params) -> np.ndarray:
    """Pointwise residual of the ground-state ODE with fourth-order differences."""
    q = values
    a = np.abs(q)
    return radial_laplacian(q, grid) - params.omega * q + a ** (params.p - 1) * q - a ** (4 / params.d) * q


def laplacian_matrix(grid: RadialGrid, band: int = 6) -> sparse.csr_matrix:
    """Sparse matrix of :func:`radial_laplacian`, recovered by probing with strided unit combs."""
    n = grid.n
    stride = 2 * band + 1
    rows, cols, data = [], [], []
    idx = np.arange(n)
    for k in range(stride):
        probe = np.zeros(n)
        probe[k::stride] = 1.0
        out = radial_laplacian(probe, grid)
        nz = np.flatnonzero(out)
        # each row sees at most one probed column within the band
        src = k + stride * np.round((nz - k) / stride).astype(int)
        src = np.clip(src, 0, n - 1)
        ok = np.abs(src - idx[nz]) <= band
        rows.append(nz[ok])
        cols.append(src[ok])
        data.append(out[nz[ok]])
    return sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def polish(values: np.ndarray, grid: RadialGrid, params: Params, iters: int = 12, tol: float = 1e-13) -> np.ndarray:
    """Newton iterations on the discretised ODE, ``Q(r_max)`` held fixed."""
    A = laplacian_matrix(grid)
    q = np.array(values, dtype=float)
    p, mc, om = params.p, 4 / params.d, params.omega
    scale = max(float(np.max(np.abs(q))), 1.0)
    for _ in range(iters):
        F = ode_residual(q, grid, params)
        F[-1] = 0.0
        if np.max(np.abs(F)) < tol * scale:
            break
        a = np.abs(q)
        diag = -om + p * a ** (p - 1) - (1 + mc) * a**mc
        J = (A + sparse.diags(diag)).tolil()
        J[n_last := grid.n - 1, :] = 0.0
        J[n_last, n_last] = 1.0
        step = spsolve(J.tocsc(), F)
        q -= step
        if np.max(np.abs(step)) < 1e-16 * scale:
            break
    return q


def fit_decay_rate(r: np.ndarray, q: np.ndarray) -> float:
    """Minus the slope of a log-linear fit over the last decade of ``q``."""
    a = np.abs(q)
    mask = (a > 0) & (a <= 10 * a[-1]) & (r > 0)
    if mask.sum() < 3:
        mask = (a > 0) & (r > 0.9 * r[-1])
    slope = np.polyfit(r[mask], np.log(a[mask]), 1)[0]
    return float(-slope)


def _agree_radius(sol_lo, sol_hi, r_stop: float, rel: float) -> float:
    r = np.linspace(_START, r_stop, 40001)
    a = sol_lo.sol(r)[0]
    b = sol_hi.sol(r)[0]
    bad = np.abs(a - b) > rel * np.abs(a)
    if not bad.any():
        return r_stop
    return float(r[max(np.argmax(bad) - 1, 1)])


def solve_ground_state(params: Params, grid: RadialGrid | None = None, *, agree_tol: float = 1e-10) -> GroundState:
    """Positive, decreasing, exponentially decaying solution of the ground-state ODE."""
    if params.regime != "subcritical":
        raise ValueError("the energy-critical threshold uses the explicit Aubin-Talenti profile instead")
    grid = grid or default_radial_grid(params)
    if grid.d != params.d:
        raise ValueError("radial grid dimension does not match params")
    r_probe = grid.r_max
    lo, hi, steps = _bisect(params, r_probe)
    _, s_lo = _integrate(params, lo, r_probe, dense=True)
    _, s_hi = _integrate(params, hi, r_probe, dense=True)
    if s_lo is None or s_hi is None:
        raise ShootingError("degenerate shooting bracket")
    r_stop = min(s_lo.t[-1], s_hi.t[-1])
    r_match = _agree_radius(s_lo, s_hi, r_stop, agree_tol)

    r = grid.r
    vals = np.empty(grid.n)
    inner = r <= r_match
    ri = np.maximum(r[inner], _START)
    vals[inner] = 0.5 * (s_lo.sol(ri)[0] + s_hi.sol(ri)[0])
    # below the series start the profile is Q0 + g(Q0) r^2/(2d)
    g0 = _source(params)(0.5 * (lo + hi))
    small = r < _START
    vals[small] = 0.5 * (lo + hi) + g0 * r[small] ** 2 / (2 * params.d)
    q_match = 0.5 * (s_lo.sol(r_match)[0] + s_hi.sol(r_match)[0])
    if r_match < grid.r_max:
        tail = _inward_tail(params, r_match, q_match, grid.r_max)
        vals[~inner] = tail.sol(r[~inner])[0]

    vals = polish(vals, grid, params)
    if np.any(vals <= 0) or np.any(np.diff(vals) >= 0):
        raise ShootingError("candidate profile is not positive and strictly decreasing (excited state?)")

    profile = Field(grid, vals, "Q")
    b = evaluate(profile, params)
    residual = ode_residual(vals, grid, params)
    gs = GroundState(
        params=params,
        profile=profile,
        residual_sup=float(np.max(np.abs(residual))),
        K_of_Q=b.K,
        m_omega=b.S_omega,
        Q0=float(vals[0]),
        decay_rate=fit_decay_rate(r, vals),
        bundle=b,
        bracket_width=hi - lo,
        r_match=r_match,
    )
    log.info("ground state d=%d p=%g omega=%g: Q0=%.12g m=%.12g residual=%.2e", params.d, params.p,
             params.omega, gs.Q0, gs.m_omega, gs.residual_sup)
    return gs


@lru_cache(maxsize=32)
def _cached_ground_state(d: int, p: float, omega: float, n: int, r_max: float) -> GroundState:
    return solve_ground_state(Params(d, p, omega), RadialGrid(d, n, r_max))


def ground_state(params: Params, grid: RadialGrid | None = None) -> GroundState:
    """Memoised :func:`solve_ground_state`."""
    grid = grid or default_radial_grid(params)
    return _cached_ground_state(params.d, params.p, params.omega, grid.n, grid.r_max)


# ---------------------------------------------------------------------------
# Aubin-Talenti
# ---------------------------------------------------------------------------


def aubin_talenti(r, d: int = 3):
    return (1 + np.asarray(r) ** 2 / (d * (d - 2))) ** (-(d - 2) / 2)


def aubin_talenti_derivatives(r, d: int = 3):
    """``W'`` and ``W''`` in closed form."""
    r = np.asarray(r, dtype=float)
    a = d * (d - 2)
    s = 1 + r**2 / a
    e = (d - 2) / 2
    w1 = -e * (2 * r / a) * s ** (-e - 1)
    w2 = -e * (2 / a) * s ** (-e - 1) + e * (e + 1) * (2 * r / a) ** 2 * s ** (-e - 2)
    return w1, w2


def sharp_sobolev_constant(d: int = 3) -> float:
    """``C_d^*`` in ``||u||_{2d/(d-2)} <= C_d^* ||grad u||_2`` (Aubin, Talenti)."""
    S = d * (d - 2) / 4 * sphere_area(d + 1) ** (2 / d)
    return 1 / math.sqrt(S)


def _tail_integrals(d: int, R: float) -> tuple[float, float]:
    """``int_{|x|>R} |grad W|^2`` and ``int_{|x|>R} W^{2d/(d-2)}`` by adaptive quadrature."""
    q = 2 * d / (d - 2)
    area = sphere_area(d)
    g = quad(lambda r: aubin_talenti_derivatives(r, d)[0] ** 2 * r ** (d - 1), R, np.inf, epsabs=0, epsrel=1e-13,
             limit=200)[0]
    c = quad(lambda r: aubin_talenti(r, d) ** q * r ** (d - 1), R, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return area * g, area * c


@dataclass
class AubinTalenti:
    d: int
    profile: Field
    residual_sup: float
    E0_of_W: float
    sobolev_constant: float
    grad_norm_sq: float
    crit_norm: float
    tail: tuple[float, float]

    @property
    def sobolev_ratio(self) -> float:
        return math.sqrt(self.grad_norm_sq) / self.crit_norm ** ((self.d - 2) / (2 * self.d))

    def ratio_with_perturbation(self, bump: np.ndarray) -> float:
        """``||grad(W+b)|| / ||W+b||_{2d/(d-2)}`` for ``b`` supported inside the grid."""
        grid = self.profile.grid
        vals = self.profile.values.real + bump
        q = 2 * self.d / (self.d - 2)
        g = float(np.dot(grid.weights, radial_derivative(vals, grid.h) ** 2)) + self.tail[0]
        c = float(np.dot(grid.weights, np.abs(vals) ** q)) + self.tail[1]
        return math.sqrt(g) / c ** (1 / q)

    def truncated(self, R1: float = 50.0, eps: float = 1.0, grid: RadialGrid | None = None) -> Field:
        """H^1 representative ``chi(r/R1) eps^{-(d-2)/2} W(r/eps)`` with a C^2 cutoff on [R1, 2 R1]."""
        grid = grid or self.profile.grid
        r = grid.r
        theta = np.clip((r - R1) / R1, 0.0, 1.0)
        chi = 1 - theta**3 * (10 - 15 * theta + 6 * theta**2)
        vals = eps ** (-(self.d - 2) / 2) * aubin_talenti(r / eps, self.d) * chi
        return Field(grid, vals, f"W_trunc(R1={R1:g})")


def explicit_aubin_talenti(d: int = 3, grid: RadialGrid | None = None) -> AubinTalenti:
    """Closed-form ``W(r) = (1 + r^2/(d(d-2)))^{-(d-2)/2}`` with verified residual and Sobolev identity.

    Integrals over ``r > r_max`` are added by adaptive quadrature of the closed
    form, since ``|grad W|^2`` only decays like ``r^{-4}``.
    """
    if d != 3:
        raise ValueError(f"the Aubin-Talenti profile is supported for d = 3 only, got {d}")
    grid = grid or RadialGrid(3, 40001, 200.0)
    r = grid.r
    w = aubin_talenti(r, d)
    w1, w2 = aubin_talenti_derivatives(r, d)
    lap = w2.copy()
    lap[1:] += (d - 1) * w1[1:] / r[1:]
    lap[0] = d * w2[0]
    q = 2 * d / (d - 2)
    residual = float(np.max(np.abs(-lap - w ** (q - 1))))
    tail = _tail_integrals(d, grid.r_max)
    grad = float(np.dot(grid.weights, w1**2)) + tail[0]
    crit = float(np.dot(grid.weights, w**q)) + tail[1]
    E0 = critical_from_integrals(grad, crit, d).E0
    return AubinTalenti(
        d=d,
        profile=Field(grid, w, "W"),
        residual_sup=residual,
        E0_of_W=E0,
        sobolev_constant=sharp_sobolev_constant(d),
        grad_norm_sq=grad,
        crit_norm=crit,
        tail=tail,
    )


@lru_cache(maxsize=4)
def _cached_aubin_talenti(d: int) -> AubinTalenti:
    return explicit_aubin_talenti(d)


# ---------------------------------------------------------------------------
# threshold and membership
# ---------------------------------------------------------------------------


def threshold(params: Params, grid: RadialGrid | None = None) -> float:
    """``m_omega``: ``S_omega(Q)`` below the energy-critical power, ``E^0(W)`` at it."""
    if params.regime == "energy-critical":
        return _cached_aubin_talenti(params.d).E0_of_W
    return ground_state(params, grid).m_omega


@dataclass
class Membership:
    S_omega_value: float
    m_omega: float
    K_value: float
    set: str
    margin: float

    def as_dict(self) -> dict:
        return {
            "S_omega": self.S_omega_value,
            "m_omega": self.m_omega,
            "K": self.K_value,
            "set": self.set,
            "margin": self.margin,
        }


MEMBERSHIP_RTOL = 1e-8


def membership(S: float, K: float, m: float, k_scale: float = 0.0, rtol: float = MEMBERSHIP_RTOL) -> Membership:
    """Place ``(S, K)`` relative to the threshold ``m``.

    Data with ``S`` within ``rtol * m`` of ``m`` count as sitting on the
    threshold and are still split by the sign of ``K``; ``|K| <= rtol * k_scale``
    counts as ``K = 0``, which goes to A_plus. Only ``S`` clearly above ``m``
    is reported as above_threshold.
    """
    margin = m - S
    if margin < -rtol * abs(m):
        kind = "above_threshold"
    elif K >= -rtol * k_scale:
        kind = "A_plus"
    else:
        kind = "A_minus"
    return Membership(S, m, K, kind, margin)


def classify_data(u0: Field, params: Params, m_omega: float | None = None) -> Membership:
    """Place ``u0`` in ``A_{omega,+}``, ``A_{omega,-}`` or above the threshold (tie ``K = 0`` goes to A_plus)."""
    m = threshold(params) if m_omega is None else m_omega
    b = evaluate(u0, params)
    return membership(b.S_omega, b.K, m, b.K_quadratic + abs(b.K_nonlinear))


def critical_dilation(gs: GroundState, eps_grid=None) -> float:
    """Largest sampled ``eps`` for which ``T_{1/eps} Q`` lies in ``A_{omega,-}``."""
    eps_grid = np.linspace(0.05, 1.0, 96) if eps_grid is None else np.asarray(eps_grid)
    I = integrals(gs.profile, gs.params)
    best = 0.0
    for eps in eps_grid:
        b = bundle_from_integrals(I.scaled(1 / eps, gs.params), gs.params)
        if membership(b.S_omega, b.K, gs.m_omega, b.K_quadratic + abs(b.K_nonlinear)).set == "A_minus":
            best = max(best, float(eps))
    return best


# ---------------------------------------------------------------------------
# profiles on cartesian grids
# ---------------------------------------------------------------------------


def profile_spline(profile: Field):
    """Quintic spline of a radial profile, even about ``r = 0``; zero beyond ``r_max``."""
    grid = profile.grid
    r = grid.r
    v = profile.values.real
    spl = make_interp_spline(np.concatenate([-r[:0:-1], r]), np.concatenate([v[:0:-1], v]), k=5)

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = x <= grid.r_max
        out[inside] = spl(x[inside])
        return out

    return f


def on_cartesian(profile: Field, grid: CartesianGrid, amplitude: float = 1.0, lam: float = 1.0,
                 tag: str = "") -> Field:
    """``amplitude * lam^{d/2} Q(lam |x|)`` sampled on a cartesian grid."""
    if profile.grid.d != grid.d:
        raise ValueError("profile and grid dimensions differ")
    f = profile_spline(profile)
    vals = amplitude * lam ** (grid.d / 2) * f(lam * grid.radius)
    return Field(grid, vals, tag or profile.tag)


def dilated(gs: GroundState, eps: float) -> Field:
    """``T_{1/eps} Q = eps^{-d/2} Q(x/eps)`` on the ground state's radial grid."""
    return rescale(gs.profile, 1 / eps)


# ---------------------------------------------------------------------------
# columnar file format
# ---------------------------------------------------------------------------

_HEADER_KEYS = ("d", "p", "omega", "m_omega", "Q0", "residual_sup")


def write_profile(path, gs: GroundState | AubinTalenti, params: Params | None = None) -> None:
    """Header lines ``# key = value`` then rows ``r, Q(r)``, all at 17 significant digits."""
    if isinstance(gs, AubinTalenti):
        params = params or Params(3, 5.0, 1.0)
        head = {"d": gs.d, "p": params.p, "omega": params.omega, "m_omega": gs.E0_of_W,
                "Q0": float(gs.profile.values[0].real), "residual_sup": gs.residual_sup}
    else:
        params = gs.params
        head = {"d": params.d, "p": params.p, "omega": params.omega, "m_omega": gs.m_omega, "Q0": gs.Q0,
                "residual_sup": gs.residual_sup}
    grid = gs.profile.grid
    with open(path, "w") as fh:
        for key in _HEADER_KEYS:
            val = head[key]
            fh.write(f"# {key} = {val if key == 'd' else format(float(val), '.17g')}\n")
        fh.write(f"# n = {grid.n}\n# r_max = {format(grid.r_max, '.17g')}\n")
        for r, q in zip(grid.r, gs.profile.values.real):
            fh.write(f"{r:.17g}, {q:.17g}\n")


@dataclass
class ProfileFile:
    header: dict
    r: np.ndarray
    values: np.ndarray

    def field(self) -> Field:
        grid = RadialGrid(int(self.header["d"]), int(self.header["n"]), float(self.header["r_max"]))
        return Field(grid, self.values, "file")


def read_profile(path) -> ProfileFile:
    header: dict = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            key = key.strip()
            header[key] = int(val) if key in ("d", "n") else float(val)
        elif line.strip():
            a, b = line.split(",")
            rows.append((float(a), float(b)))
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"profile file lacks header keys {missing}")
    arr = np.array(rows)
    return ProfileFile(header, arr[:, 0], arr[:, 1])
