"""Property suite behind ``cnls verify``: each check returns a residual and a pass flag.

Tolerances live in ``TOLERANCES`` so the report and the README agree on them.
All randomness flows from one ``numpy.random.Generator``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import CartesianGrid, Field, Params, RadialGrid
from .diagnostics import (
    CutoffWeight,
    radial_sobolev_check,
    virial_derivatives,
    virial_identity_check,
    virial_probe,
)
from .evolution import EvolveControls, conservation_report, evolve
from .functionals import (
    DecouplingScenario,
    K_over_lambda_sq,
    SupportOverflowError,
    decoupling_check,
    defects_decrease,
    evaluate,
    find_lambda_zero,
    integrals,
    rescale,
    scaling_identities_check,
    trapping_bound,
    trapping_factor,
)
from .groundstate import explicit_aubin_talenti, ground_state, sharp_sobolev_constant, threshold

log = logging.getLogger(__name__)

TOLERANCES = {
    "ground_state_residual": 1e-8,
    "ground_state_K_relative": 1e-6,
    "ground_state_lambda_zero": 1e-6,
    "ground_state_decay": 0.05,
    "aubin_talenti_residual": 1e-10,
    "aubin_talenti_sobolev": 1e-8,
    "action_identity": 1e-10,
    "second_identity": 1e-10,
    "scaling_derivative": 1e-6,
    "lambda_composition": 1e-6,
    "decoupling_far": 1e-8,
    "decoupling_floor": 1e-13,
    "virial_compact": 1e-8,
    "virial_dynamic": 1e-3,
    "mass_drift": 1e-10,
    "sobolev_homogeneity": 1e-12,
}

# grids on which random bumps (widths >= 0.9, centres within +-1) are resolved
BUMP_GRIDS = {1: (256, 12.0), 2: (128, 12.0), 3: (64, 8.0)}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"value": self.value, "tolerance": self.tolerance, "passed": self.passed, **self.detail}


def bump_grid(d: int, refine: int = 1) -> CartesianGrid:
    n, L = BUMP_GRIDS[d]
    return CartesianGrid(d, refine * n, L)


def random_bump(grid: CartesianGrid, rng: np.random.Generator, amp: float = 1.0, count: int = 3) -> Field:
    """Sum of ``count`` Gaussians with random centres and widths under one random phase and momentum.

    The envelope is positive, so ``|u|`` has no zeros and the fractional powers
    in the functionals stay smooth enough for spectral quadrature.
    """
    env = np.zeros(grid.shape)
    for _ in range(count):
        c = rng.uniform(-1.0, 1.0, grid.d)
        w = rng.uniform(0.9, 1.5)
        r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
        env = env + amp * rng.uniform(0.3, 1.0) * np.exp(-r2 / w**2)
    k = rng.normal(0.0, 0.5, grid.d)
    phase = rng.uniform(0, 2 * np.pi) + sum(kj * x for kj, x in zip(k, grid.coords))
    return Field(grid, env * np.exp(1j * phase), "bump")


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_ground_state(params: Params) -> list[Check]:
    T = TOLERANCES
    if params.regime == "energy-critical":
        at = explicit_aubin_talenti(params.d)
        c_star = sharp_sobolev_constant(params.d)
        self_rel = abs(at.E0_of_W - c_star ** (-params.d) / params.d) / at.E0_of_W
        other = [threshold(params.with_omega(om)) for om in (0.5, 2.0)]
        spread = max(abs(x - at.E0_of_W) for x in other)
        return [
            Check("aubin_talenti_residual", at.residual_sup, T["aubin_talenti_residual"],
                  at.residual_sup < T["aubin_talenti_residual"]),
            Check("aubin_talenti_sobolev", self_rel, T["aubin_talenti_sobolev"], self_rel < T["aubin_talenti_sobolev"],
                  {"E0_of_W": at.E0_of_W}),
            Check("threshold_omega_independent", spread, 1e-12, spread <= 1e-12),
        ]
    gs = ground_state(params)
    lam = find_lambda_zero(gs.profile, params, tol=1e-13)
    decay = abs(gs.decay_rate - math.sqrt(params.omega)) / math.sqrt(params.omega)
    return [
        Check("ground_state_residual", gs.residual_sup, T["ground_state_residual"],
              gs.residual_sup < T["ground_state_residual"], {"Q0": gs.Q0, "m_omega": gs.m_omega}),
        Check("ground_state_K_relative", gs.K_relative, T["ground_state_K_relative"],
              gs.K_relative < T["ground_state_K_relative"]),
        Check("ground_state_lambda_zero", abs(lam - 1), T["ground_state_lambda_zero"],
              abs(lam - 1) < T["ground_state_lambda_zero"]),
        Check("ground_state_decay", decay, T["ground_state_decay"], decay < T["ground_state_decay"],
              {"decay_rate": gs.decay_rate}),
    ]


def check_scaling(params: Params, rng: np.random.Generator, n: int = 20) -> list[Check]:
    grid = bump_grid(params.d)
    a = b = c = 0.0
    for _ in range(n):
        rep = scaling_identities_check(random_bump(grid, rng), params)
        a = max(a, rep.action_identity)
        b = max(b, rep.second_identity)
        c = max(c, rep.derivative_rel_error)
    T = TOLERANCES
    return [
        Check("action_identity", a, T["action_identity"], a < T["action_identity"], {"samples": n}),
        Check("second_identity", b, T["second_identity"], b < T["second_identity"], {"samples": n}),
        Check("scaling_derivative", c, T["scaling_derivative"], c < T["scaling_derivative"], {"samples": n}),
    ]


def check_lambda_structure(params: Params, rng: np.random.Generator, n: int = 10) -> list[Check]:
    # T_2 halves the widths, so the bumps need twice the usual resolution
    grid = bump_grid(params.d, refine=2)
    signs_ok = True
    worst = 0.0
    for _ in range(n):
        u = random_bump(grid, rng)
        I = integrals(u, params)
        lam = find_lambda_zero(I, params, tol=1e-13)
        signs_ok &= K_over_lambda_sq(I, params, lam / 2) > 0 > K_over_lambda_sq(I, params, 2 * lam)
        # the composition is evaluated on the rescaled field, not the scaled integrals
        lam2 = find_lambda_zero(rescale(u, 2.0), params, tol=1e-13)
        worst = max(worst, abs(2 * lam2 / lam - 1))
    tol = TOLERANCES["lambda_composition"]
    return [
        Check("lambda_sign_pattern", 0.0 if signs_ok else 1.0, 0.0, bool(signs_ok), {"samples": n}),
        Check("lambda_composition", worst, tol, worst < tol, {"samples": n}),
    ]


def trapping_samples(params: Params, rng: np.random.Generator, n: int = 50) -> list[Field]:
    """``n`` random bumps with ``K >= 0``; supercritical ones are dilated below their ``lambda_0``."""
    grid = bump_grid(params.d)
    out = []
    while len(out) < n:
        u = random_bump(grid, rng, amp=float(np.exp(rng.uniform(np.log(0.05), np.log(3.0)))))
        if evaluate(u, params).K < 0:
            lam = find_lambda_zero(u, params)
            try:
                u = rescale(u, lam * rng.uniform(0.5, 0.95))
            except SupportOverflowError:
                continue  # too wide for the box once dilated
            if evaluate(u, params).K < 0:
                continue
        out.append(u)
    return out


def check_trapping(params: Params, rng: np.random.Generator, n: int = 50) -> list[Check]:
    fac = trapping_factor(params)
    bad = 0
    worst = math.inf
    for u in trapping_samples(params, rng, n):
        b = evaluate(u, params)
        G = trapping_bound(b, params)
        slack = min(b.energy - fac * G, G - b.energy) / G
        worst = min(worst, slack)
        bad += slack < 0
    return [Check("energy_trapping", float(bad), 0.0, bad == 0, {"samples": n, "min_relative_slack": worst})]


def check_small_data(params: Params, rng: np.random.Generator, n: int = 10) -> list[Check]:
    """``K > 0`` and ``H_omega > 0`` for small nonzero data."""
    grid = bump_grid(params.d)
    bad = 0
    for _ in range(n):
        b = evaluate(random_bump(grid, rng, amp=1e-2), params)
        bad += not (b.K > 0 and b.H_omega > 0)
    return [Check("small_data_positivity", float(bad), 0.0, bad == 0, {"samples": n})]


def decoupling_reports(params: Params, separations) -> list:
    d = params.d
    seps = sorted(float(s) for s in separations)
    if d == 1:
        grid = CartesianGrid(1, 2048, max(100.0, seps[-1] + 40))
        x = grid.coords[0]
        profiles = [Field(grid, 1.2 / np.cosh(x) + 0j), Field(grid, 0.9 / np.cosh(1.3 * x) * np.exp(0.5j * x))]
    else:
        # h = 1/4 or 1/2 keeps every half-separation on the grid
        n = 256 if d == 2 else 128
        grid = CartesianGrid(d, n, 32.0 if seps[-1] <= 40 else 2 ** math.ceil(math.log2(seps[-1] / 2 + 12)))
        r2 = grid.radius**2
        profiles = [Field(grid, 1.2 * np.exp(-r2 / 2) + 0j),
                    Field(grid, 0.9 * np.exp(-r2 / 3) * np.exp(0.5j * grid.coords[0]))]
    out = []
    for sep in seps:
        shift = np.zeros(d)
        shift[0] = sep / 2
        s = DecouplingScenario(profiles, [-shift, shift], [0.3, 1.1], [0.0, 0.0])
        out.append(decoupling_check(s, params))
    return out


def check_decoupling(params: Params, separations=(10.0, 20.0, 40.0)) -> list[Check]:
    reps = decoupling_reports(params, separations)
    mono = defects_decrease(reps, TOLERANCES["decoupling_floor"])
    far = reps[-1].max_defect
    tol = TOLERANCES["decoupling_far"]
    return [
        Check("decoupling_monotone", float(sum(not v for v in mono.values())), 0.0, all(mono.values()),
              {"max_defects": [r.max_defect for r in reps]}),
        Check("decoupling_far", far, tol, far < tol, {"separation": max(separations)}),
    ]


def check_virial_compact(params: Params) -> list[Check]:
    """``V_R'' = 8 K`` when the data lives where ``phi_R = |x|^2``."""
    n, _ = BUMP_GRIDS[params.d]
    grid = CartesianGrid(params.d, 2 * n if params.d < 3 else n, 12.0)
    u = Field(grid, 1.5 * np.exp(-grid.radius**2) * np.exp(0.3j * grid.coords[0]))
    K = evaluate(u, params).K
    worst = 0.0
    for kind in ("scattering_cutoff", "blowup_cutoff"):
        _, vpp = virial_derivatives(u, CutoffWeight(kind, 6.5, grid), params)
        worst = max(worst, abs(vpp - 8 * K) / abs(8 * K))
    tol = TOLERANCES["virial_compact"]
    return [Check("virial_compact", worst, tol, worst < tol, {"K": K})]


def virial_run(params: Params, dt: float = 1e-3, t_end: float | None = None):
    """Short fixed-step run of a Gaussian, with the blowup cutoff streamed."""
    n, L = {1: (512, 12.0), 2: (128, 12.0), 3: (64, 8.0)}[params.d]
    if t_end is None:
        t_end = 0.2 if params.d == 3 else 0.5
    grid = CartesianGrid(params.d, n, L)
    u0 = Field(grid, np.exp(-grid.radius**2 / 2) * np.exp(0.2j * grid.coords[0]))
    w = CutoffWeight("blowup_cutoff", min(3.0, L / 3), grid)
    c = EvolveControls(dt0=dt, t_end=t_end, adapt="fixed", snapshot_stride=10**6, drift_budget=1e-6)
    return evolve(u0, params, c, virial=virial_probe(w, params)), w


def check_virial_dynamic(params: Params) -> list[Check]:
    tr, w = virial_run(params)
    rep = virial_identity_check(tr, w, params)
    cons = conservation_report(tr)
    T = TOLERANCES
    return [
        Check("virial_dynamic", rep.scale_rel_second, T["virial_dynamic"], rep.scale_rel_second < T["virial_dynamic"],
              {"max_rel_first": rep.max_rel_first, "steps": tr.steps}),
        Check("mass_drift", cons.mass_drift, T["mass_drift"], cons.mass_drift < T["mass_drift"]),
    ]


def sobolev_family(grid: RadialGrid) -> list[Field]:
    r = grid.r
    fams = [
        np.exp(-r**2),
        np.exp(-(r / 2) ** 2),
        np.exp(-(r / 4) ** 2),
        1 / np.cosh(r),
        1 / np.cosh(r / 3),
        (1 + r**2) ** -2.0,
        (1 + r**2) ** -3.0,
        r**2 * np.exp(-r),
        (1 + r) * np.exp(-r),
        np.exp(-r) * np.cos(r) ** 2,
    ]
    return [Field(grid, f + 0j, f"f{i}") for i, f in enumerate(fams)]


def check_radial_sobolev(params: Params, radii=(2.0, 4.0, 8.0)) -> list[Check]:
    if params.d < 2:
        return [Check("radial_sobolev", 0.0, 0.0, True, {"skipped": "needs d >= 2"})]
    grid = RadialGrid(params.d, 8001, 80.0)
    bounded = True
    worst_ratio = 0.0
    homog = 0.0
    for u in sobolev_family(grid):
        for R in radii:
            rep = radial_sobolev_check(u, R, params)
            bounded &= rep.within_bounds
            worst_ratio = max(worst_ratio, rep.constant_p / rep.bound_p, rep.constant_mc / rep.bound_mc)
            for c in (0.1, 7.0):
                rc = radial_sobolev_check(u * c, R, params)
                homog = max(homog, abs(rc.constant_p / rep.constant_p - 1), abs(rc.constant_mc / rep.constant_mc - 1))
    tol = TOLERANCES["sobolev_homogeneity"]
    return [
        Check("radial_sobolev_bounded", worst_ratio, 1.0, bool(bounded), {"fields": 10, "radii": list(radii)}),
        Check("radial_sobolev_homogeneity", homog, tol, homog < tol),
    ]


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def run_suite(params: Params, seed: int = 0, n_bumps: int = 20, separations=(10.0, 20.0, 40.0),
              trapping: int = 50) -> dict:
    rng = np.random.default_rng(seed)
    steps: list[tuple[str, Callable[[], list[Check]]]] = [
        ("ground_state", lambda: check_ground_state(params)),
        ("scaling", lambda: check_scaling(params, rng, n_bumps)),
        ("lambda", lambda: check_lambda_structure(params, rng, min(n_bumps, 10))),
        ("trapping", lambda: check_trapping(params, rng, trapping)),
        ("small_data", lambda: check_small_data(params, rng)),
        ("decoupling", lambda: check_decoupling(params, separations)),
        ("virial_compact", lambda: check_virial_compact(params)),
        ("virial_dynamic", lambda: check_virial_dynamic(params)),
        ("radial_sobolev", lambda: check_radial_sobolev(params)),
    ]
    checks: dict[str, dict] = {}
    for group, fn in steps:
        log.info("verify: %s", group)
        for c in fn():
            checks[c.name] = c.as_dict()
    return {"params": {"d": params.d, "p": params.p, "omega": params.omega}, "seed": seed,
            "checks": checks, "all_passed": all(c["passed"] for c in checks.values())}
