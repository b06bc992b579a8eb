"""Strang split-step spectral integration of ``i u_t + Lap u = |u|^{4/d} u - |u|^{p-1} u``.

The linear flow is the exact Fourier multiplier ``exp(-i dt |k|^2)`` and the
nonlinear flow is an exact pointwise phase rotation (the modulus is constant
along it), so each substep is unitary and the scheme is time reversible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    CartesianGrid,
    Field,
    NonFiniteFieldError,
    Params,
    boundary_ratio,
    fftn,
    ifftn,
)
from .functionals import EPS_ABS, FunctionalBundle, Integrals, bundle_from_integrals

log = logging.getLogger(__name__)

STATUSES = ("completed", "blowup_terminated", "step_floor_hit", "drift_exceeded")
ADAPT_RULES = ("gradient", "fixed")

# (V, V', V'') of a field, given optional cached ``uhat`` and ``modulus``;
# supplied by diagnostics so evolution stays independent of it
VirialProbe = Callable[[Field], tuple]


@dataclass(frozen=True)
class EvolveControls:
    dt0: float = 1e-3
    t_end: float = 1.0
    dt_floor: float = 1e-9
    blowup_gradient_factor: float = 1e4
    adapt: str = "gradient"
    snapshot_stride: int = 50
    drift_budget: float = 1e-6
    dealias: bool = False
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not (self.dt0 > self.dt_floor > 0):
            raise ValueError(f"need dt0 > dt_floor > 0, got dt0={self.dt0}, dt_floor={self.dt_floor}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not self.blowup_gradient_factor > 1:
            raise ValueError("blowup_gradient_factor must exceed 1")
        if self.adapt not in ADAPT_RULES:
            raise ValueError(f"adapt must be one of {ADAPT_RULES}, got {self.adapt!r}")
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be a positive integer")
        if not self.drift_budget > 0:
            raise ValueError("drift_budget must be positive")


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def modulus_power(a: np.ndarray, q: float) -> np.ndarray:
    """``a**q`` for ``a >= 0``, by repeated squaring when ``q`` is a small integer."""
    n = round(q)
    if abs(q - n) > 1e-12 or not 0 <= n <= 16:
        return a**q
    out = np.ones_like(a) if n == 0 else None
    base = a
    while n:
        if n & 1:
            out = base if out is None else out * base
        n >>= 1
        if n:
            base = base * base
    return out


_SERIES_LIMIT = 1e-3


def unit_phase(theta: np.ndarray) -> np.ndarray:
    """``exp(-i theta)``; a Taylor polynomial where ``|theta| <= 1e-3`` (error below 1e-20)."""
    t2 = theta * theta
    out = np.empty(theta.shape, dtype=complex)
    out.real = 1 - t2 * (0.5 - t2 / 24)
    out.imag = -theta * (1 - t2 / 6)
    big = np.abs(theta) > _SERIES_LIMIT
    if big.any():
        out[big] = np.exp(-1j * theta[big])
    return out


def _nonlinear(v: np.ndarray, tau: float, params: Params) -> np.ndarray:
    a = np.abs(v)
    return v * unit_phase(tau * (modulus_power(a, 4 / params.d) - modulus_power(a, params.p - 1)))


def nonlinear_substep(u: Field, tau: float, params: Params) -> Field:
    """Exact flow of ``i u_t = (|u|^{4/d} - |u|^{p-1}) u`` over time ``tau``."""
    return u.with_values(_nonlinear(u.values, tau, params))


def _multiplier(tau: float, grid: CartesianGrid, dealias: bool) -> np.ndarray:
    mult = np.exp(-1j * tau * grid.k2)
    return mult * grid.dealias_mask if dealias else mult


class _MultiplierCache(dict):
    """Linear propagators keyed by step size; adaptive steps live on a discrete ladder."""

    def __init__(self, grid: CartesianGrid, dealias: bool, size: int = 64):
        super().__init__()
        self.grid, self.dealias, self.size = grid, dealias, size

    def get_for(self, tau: float) -> np.ndarray:
        m = self.get(tau)
        if m is None:
            if len(self) >= self.size:
                self.clear()
            m = self[tau] = _multiplier(tau, self.grid, self.dealias)
        return m


def _strang(v: np.ndarray, dt: float, params: Params, grid: CartesianGrid, dealias: bool,
            cache: _MultiplierCache | None = None) -> np.ndarray:
    v = _nonlinear(v, dt / 2, params)
    mult = cache.get_for(dt) if cache is not None else _multiplier(dt, grid, dealias)
    v = ifftn(fftn(v) * mult)
    return _nonlinear(v, dt / 2, params)


LADDER_STEPS_PER_OCTAVE = 8


def ladder_step(dt0: float, dt_raw: float) -> float:
    """Largest ``dt0 * 2**(-j/8)``, ``j >= 0`` integer, not exceeding ``dt_raw``."""
    if dt_raw >= dt0:
        return dt0
    j = math.ceil(LADDER_STEPS_PER_OCTAVE * math.log2(dt0 / dt_raw) - 1e-12)
    return dt0 * 2.0 ** (-j / LADDER_STEPS_PER_OCTAVE)


def strang_step(u: Field, dt: float, params: Params, dealias: bool = False) -> Field:
    """``N(dt/2) L(dt) N(dt/2) u``; a negative ``dt`` inverts a positive step."""
    grid = u.grid
    if not isinstance(grid, CartesianGrid):
        raise TypeError("strang_step needs a cartesian field")
    if dt == 0 or not math.isfinite(dt):
        raise ValueError(f"time step must be finite and nonzero, got {dt}")
    out = _strang(u.values, dt, params, grid, dealias)
    if not np.all(np.isfinite(out)):
        raise NonFiniteFieldError("non-finite values after a split step")
    return Field(grid, out, u.tag)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    """Diagnostics at one time level."""

    t: float
    bundle: FunctionalBundle
    V: float = float("nan")
    Vp: float = float("nan")
    Vpp: float = float("nan")
    dt: float = 0.0
    strichartz_mc: float = 0.0  # ||u||^{2(d+2)/d}_{L^{2(d+2)/d}}
    strichartz_p: float = 0.0  # ||u||^{(d+2)(p-1)/2}_{L^{(d+2)(p-1)/2}}
    boundary: float = 0.0

    @property
    def grad_norm_sq(self) -> float:
        return self.bundle.grad_norm_sq

    def row(self) -> dict:
        b = self.bundle
        return {
            "t": self.t,
            "mass": b.mass,
            "energy": b.energy,
            "S_omega": b.S_omega,
            "K": b.K,
            "H_omega": b.H_omega,
            "grad_norm_sq": b.grad_norm_sq,
            "Lp1_norm": b.Lp1,
            "Lmc_norm": b.L_mass_crit,
            "V_R": self.V,
            "V_R_prime": self.Vp,
            "V_R_second": self.Vpp,
            "dt": self.dt,
        }


CSV_COLUMNS = tuple(Sample(0.0, FunctionalBundle(*[0.0] * 9)).row())


@dataclass
class Trajectory:
    params: Params
    controls: EvolveControls
    times: list = field(default_factory=list)
    series: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    status: str = "completed"
    steps: int = 0
    # cumulative trapezoid integrals in time, aligned with ``times``
    cumulative_mc: list = field(default_factory=list)
    cumulative_p: list = field(default_factory=list)
    message: str = ""

    @property
    def spacetime_K_norm(self) -> tuple[float, float]:
        """``(int ||u||^{q1}_{q1} dt, int ||u||^{q2}_{q2} dt)`` with ``q1 = 2(d+2)/d``, ``q2 = (d+2)(p-1)/2``."""
        if not self.cumulative_mc:
            return 0.0, 0.0
        return self.cumulative_mc[-1], self.cumulative_p[-1]

    @property
    def t_final(self) -> float:
        return self.times[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([s.row()[name] for s in self.series])

    def grad_norm(self) -> np.ndarray:
        return np.sqrt(self.column("grad_norm_sq"))

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    def max_boundary_ratio(self) -> float:
        return max((s.boundary for s in self.series), default=0.0)


def relative_drift(values: np.ndarray, scale: float | None = None) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    ref = abs(values[0]) if scale is None else scale
    return float(np.max(np.abs(values - values[0])) / max(ref, EPS_ABS))


def _strichartz_exponents(params: Params) -> tuple[float, float]:
    d = params.d
    return 2 * (d + 2) / d, (d + 2) * (params.p - 1) / 2


def _sample(u: Field, t: float, dt: float, params: Params, virial: Optional[VirialProbe]) -> Sample:
    """All per-step diagnostics from one transform and one modulus evaluation."""
    grid = u.grid
    cv = grid.cell_volume
    a = np.abs(u.values)
    uh = fftn(u.values)
    ah = np.abs(uh)
    q1, q2 = _strichartz_exponents(params)
    I = Integrals(
        float(np.sum(a * a) * cv),
        float(np.sum(grid.k2 * (ah * ah)) * cv),
        float(np.sum(modulus_power(a, params.p + 1)) * cv),
        float(np.sum(modulus_power(a, q1)) * cv),
    )
    b = bundle_from_integrals(I, params)
    s = Sample(t, b, dt=dt, strichartz_mc=b.L_mass_crit, strichartz_p=float(np.sum(modulus_power(a, q2)) * cv),
               boundary=boundary_ratio(u))
    if virial is not None:
        s.V, s.Vp, s.Vpp = (float(x) for x in virial(u, uhat=uh, modulus=a))
    return s


def momentum(u: Field) -> np.ndarray:
    """``Im int grad u conj(u) dx`` (one component per axis)."""
    grid = u.grid
    uh = fftn(u.values)
    out = []
    for k in grid.kvec_odd:
        du = ifftn(1j * k * uh)
        out.append(float(np.sum(np.imag(du * np.conj(u.values))) * grid.cell_volume))
    return np.array(out)


def evolve(
    u0: Field,
    params: Params,
    controls: EvolveControls,
    virial: Optional[VirialProbe] = None,
    sink: Optional[Callable[[dict], None]] = None,
    keep_series: bool = True,
) -> Trajectory:
    """Integrate from ``t = 0`` to ``controls.t_end`` or an earlier termination.

    Termination rules, in order of precedence: non-finite field or gradient
    norm above ``blowup_gradient_factor`` times its initial value gives
    ``blowup_terminated``; an adaptive step below ``dt_floor`` gives
    ``step_floor_hit``; relative mass drift above ``drift_budget`` (checked
    every step) or energy drift above it at the horizon gives ``drift_exceeded``.
    """
    grid = u0.grid
    if not isinstance(grid, CartesianGrid):
        raise TypeError("evolution runs on cartesian grids")
    u0.require_finite()
    c = controls
    tr = Trajectory(params, c)

    v = np.array(u0.values)
    s0 = _sample(u0, 0.0, 0.0, params, virial)
    g0 = s0.grad_norm_sq
    m0, e0 = s0.bundle.mass, s0.bundle.energy
    # a field with zero gradient (zero data) never triggers adaptivity
    adapt_c = c.dt0 * g0
    grad_limit = c.blowup_gradient_factor**2 * g0

    prev: list[Sample] = []

    def record(s: Sample):
        if keep_series:
            tr.times.append(s.t)
            tr.series.append(s)
        if prev:
            a = prev[0]
            h = s.t - a.t
            tr.cumulative_mc.append(tr.cumulative_mc[-1] + 0.5 * h * (a.strichartz_mc + s.strichartz_mc))
            tr.cumulative_p.append(tr.cumulative_p[-1] + 0.5 * h * (a.strichartz_p + s.strichartz_p))
        else:
            tr.cumulative_mc.append(0.0)
            tr.cumulative_p.append(0.0)
        if not keep_series:
            tr.times[:] = [s.t]
            tr.series[:] = [s]
        prev[:] = [s]
        if sink is not None:
            sink(s.row())

    record(s0)
    tr.snapshots.append(u0)
    tr.snapshot_times.append(0.0)

    cache = _MultiplierCache(grid, c.dealias)
    t = 0.0
    last = s0
    while t < c.t_end:
        if tr.steps >= c.max_steps:
            tr.status, tr.message = "step_floor_hit", "max_steps reached"
            break
        dt = c.dt0
        if c.adapt == "gradient" and last.grad_norm_sq > 0:
            dt = ladder_step(c.dt0, adapt_c / last.grad_norm_sq)
        if dt < c.dt_floor:
            tr.status, tr.message = "step_floor_hit", f"dt={dt:.3e} below floor at t={t:.6g}"
            break
        hit = dt >= c.t_end - t
        if hit:
            dt = c.t_end - t
        new = _strang(v, dt, params, grid, c.dealias, cache)
        if not np.all(np.isfinite(new)):
            tr.status, tr.message = "blowup_terminated", f"non-finite field at t={t + dt:.6g}"
            break
        v = new
        t = c.t_end if hit else t + dt
        tr.steps += 1
        u = Field(grid, v, u0.tag)
        last = _sample(u, t, dt, params, virial)
        record(last)
        done = t >= c.t_end
        if tr.steps % c.snapshot_stride == 0 or done:
            tr.snapshots.append(u)
            tr.snapshot_times.append(t)
        if last.grad_norm_sq > grad_limit:
            tr.status = "blowup_terminated"
            tr.message = f"gradient norm grew by {math.sqrt(last.grad_norm_sq / g0):.3g}x at t={t:.6g}"
            if tr.snapshot_times[-1] != t:
                tr.snapshots.append(u)
                tr.snapshot_times.append(t)
            break
        if abs(last.bundle.mass - m0) > c.drift_budget * max(m0, EPS_ABS):
            tr.status, tr.message = "drift_exceeded", f"mass drift above budget at t={t:.6g}"
            break
    else:
        if abs(last.bundle.energy - e0) > c.drift_budget * max(abs(e0), EPS_ABS):
            tr.status, tr.message = "drift_exceeded", "energy drift above budget at the horizon"
    if tr.snapshot_times[-1] != t:
        tr.snapshots.append(Field(grid, v, u0.tag))
        tr.snapshot_times.append(t)
    log.info("evolve: %s after %d steps, t=%.6g %s", tr.status, tr.steps, t, tr.message)
    return tr


@dataclass
class ConservationReport:
    mass_drift: float
    energy_drift: float
    S_omega_drift: float
    momentum_drift: float
    momentum_max: float

    def as_dict(self) -> dict:
        return asdict(self)


def conservation_report(tr: Trajectory) -> ConservationReport:
    """Maximal relative drifts of ``M``, ``E``, ``S_omega``; absolute drift of the momentum over snapshots."""
    if not tr.series:
        raise ValueError("empty trajectory")
    mass = tr.column("mass")
    energy = tr.column("energy")
    action = tr.column("S_omega")
    moms = np.array([momentum(u) for u in tr.snapshots]) if tr.snapshots else np.zeros((1, 1))
    mdrift = float(np.max(np.linalg.norm(moms - moms[0], axis=1))) if len(moms) > 1 else 0.0
    return ConservationReport(
        mass_drift=relative_drift(mass),
        energy_drift=relative_drift(energy),
        S_omega_drift=relative_drift(action),
        momentum_drift=mdrift,
        momentum_max=float(np.max(np.linalg.norm(moms, axis=1))),
    )
