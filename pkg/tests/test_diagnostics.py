import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnls.core import CartesianGrid, Field, Params, RadialGrid, zeros
from cnls.diagnostics import (
    CutoffProfile,
    CutoffWeight,
    ScatterThresholds,
    calibrate_plus_delta,
    classify_outcome,
    concavity_window,
    delta_one,
    minus_set_bound,
    predicted_outcome,
    radial_sobolev_check,
    strauss_constants,
    trailing_monotone,
    virial,
    virial_derivatives,
    virial_first_bound,
    virial_identity_check,
    virial_probe,
)
from cnls.evolution import EvolveControls, evolve
from cnls.functionals import evaluate
from cnls.groundstate import ground_state, membership, on_cartesian

P1 = Params(1, 7.0)
P2 = Params(2, 5.0)
P3 = Params(3, 4.0)


def _gauss(g, amp=1.0, k=0.0, a=1.0):
    return Field(g, amp * np.exp(-a * g.radius**2) * np.exp(1j * k * g.coords[0]))


# -- cutoffs -------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["scattering_cutoff", "blowup_cutoff"])
def test_cutoff_is_quadratic_inside(kind):
    prof = CutoffProfile(kind)
    s = np.linspace(0, 1, 51)
    assert np.allclose(prof(s), s**2, rtol=0, atol=1e-15)
    assert np.allclose(prof(s, 2), 2.0)
    over_s, lap, bilap = prof.laplacian_parts(s, 3)
    assert np.all(lap == 6.0) and np.all(bilap == 0.0) and np.all(over_s == 2.0)


@pytest.mark.parametrize("kind", ["scattering_cutoff", "blowup_cutoff"])
def test_cutoff_is_smooth_at_the_joins(kind):
    prof = CutoffProfile(kind)
    for s0 in (1.0, prof.support_end):
        for k in range(4):
            lo, hi = prof(s0 - 1e-10, k), prof(s0 + 1e-10, k)
            assert abs(lo - hi) < 1e-6


def test_blowup_cutoff_shape():
    prof = CutoffProfile("blowup_cutoff")
    s = np.linspace(0, 6, 2001)
    assert np.max(prof(s, 2)) <= 2.0 + 1e-12
    assert np.all(prof(s[s >= 3], 1) == 0)
    assert np.all(np.diff(prof(s)) >= -1e-15)


def test_scattering_cutoff_vanishes_outside():
    prof = CutoffProfile("scattering_cutoff")
    s = np.linspace(0, 3, 3001)
    assert np.all(prof(s[s >= 2]) == 0)
    assert np.all(prof(s) >= 0)
    # the bump overshoots 1 before returning to zero
    assert 1.0 < np.max(prof(s)) < 1.6


def test_cutoff_rejects_bad_input():
    g = CartesianGrid(1, 16, 1.0)
    with pytest.raises(ValueError):
        CutoffWeight("gaussian", 1.0, g)
    with pytest.raises(ValueError):
        CutoffWeight("blowup_cutoff", 0.0, g)


def test_weight_hessian_is_twice_identity_inside():
    g = CartesianGrid(2, 64, 8.0)
    w = CutoffWeight("blowup_cutoff", 3.0, g)
    inside = g.radius < 3.0
    for j in range(2):
        for k in range(2):
            assert np.allclose(w.hessian(j, k)[inside], 2.0 * (j == k), atol=1e-12)


# -- virial quantities ------------------------------------------------------------


def test_virial_of_a_gaussian():
    g = CartesianGrid(1, 512, 20.0)
    w = CutoffWeight("blowup_cutoff", 6.0, g)
    u = _gauss(g)
    # int x^2 exp(-2 x^2) dx = sqrt(pi/2)/4
    assert virial(u, w) == pytest.approx(math.sqrt(math.pi / 2) / 4, rel=1e-12)
    assert virial(u * 2.0, w) == pytest.approx(4 * virial(u, w), rel=1e-14)


def test_real_data_have_zero_first_derivative():
    g = CartesianGrid(2, 64, 8.0)
    w = CutoffWeight("scattering_cutoff", 2.0, g)
    vp, _ = virial_derivatives(_gauss(g, 1.5), w, P2)
    assert abs(vp) < 1e-13


@pytest.mark.parametrize("params,grid", [(P1, CartesianGrid(1, 512, 20.0)), (P2, CartesianGrid(2, 128, 12.0)),
                                         (P3, CartesianGrid(3, 64, 10.0))], ids=["1d", "2d", "3d"])
@pytest.mark.parametrize("kind", ["scattering_cutoff", "blowup_cutoff"])
def test_second_derivative_is_eight_k_for_compact_data(params, grid, kind):
    u = _gauss(grid, 1.5, 0.3, a=1.0)
    w = CutoffWeight(kind, grid.L / 2.5, grid)
    _, vpp = virial_derivatives(u, w, params)
    K = evaluate(u, params).K
    assert abs(vpp - 8 * K) <= 1e-8 * max(1.0, abs(8 * K))


def test_first_derivative_bound():
    g = CartesianGrid(2, 64, 8.0)
    rng = np.random.default_rng(2)
    w = CutoffWeight("blowup_cutoff", 2.0, g)
    for _ in range(5):
        k = rng.uniform(-2, 2)
        u = _gauss(g, rng.uniform(0.2, 2), k, rng.uniform(0.3, 2))
        vp, _ = virial_derivatives(u, w, P2)
        assert abs(vp) <= virial_first_bound(u, w)


def test_virial_identities_along_a_run():
    g = CartesianGrid(1, 512, 12.0)
    w = CutoffWeight("blowup_cutoff", 4.0, g)
    u0 = _gauss(g, 1.2, 0.5)
    tr = evolve(u0, P1, EvolveControls(dt0=1e-3, t_end=0.5, adapt="fixed"), virial=virial_probe(w, P1))
    rep = virial_identity_check(tr, w, P1)
    assert rep.scale_rel_second < 1e-3
    assert rep.max_rel_first < 1e-3
    assert set(rep.as_dict()) == {"max_rel_second", "max_rel_first", "scale_rel_second"}


def test_ground_state_is_virially_stationary():
    g = CartesianGrid(1, 1024, 30.0)
    u = on_cartesian(ground_state(P1).profile, g)
    w = CutoffWeight("blowup_cutoff", 10.0, g)
    vp, vpp = virial_derivatives(u, w, P1)
    assert abs(vp) < 1e-12
    assert abs(vpp) < 1e-6


def test_grid_mismatch_is_refused():
    w = CutoffWeight("blowup_cutoff", 1.0, CartesianGrid(1, 16, 2.0))
    with pytest.raises(ValueError):
        virial(zeros(CartesianGrid(1, 32, 2.0)), w)


# -- radial Sobolev ----------------------------------------------------------------


def test_compactly_supported_data_have_nothing_outside():
    g = RadialGrid(3, 2001, 10.0)
    bump = np.where(g.r < 2, np.cos(np.pi * g.r / 4) ** 4, 0.0)
    rep = radial_sobolev_check(Field(g, bump + 0j), 4.0, P3)
    assert rep.lhs_p == 0 and rep.constant_p == 0 and rep.within_bounds


@pytest.mark.parametrize("params", [P2, P3], ids=str)
def test_gaussian_tail_constants_are_bounded(params):
    g = RadialGrid(params.d, 8001, 40.0)
    u = Field(g, np.exp(-g.r**2 / 8) + 0j)
    reps = [radial_sobolev_check(u, R, params) for R in (2.0, 4.0, 8.0, 16.0)]
    assert all(r.within_bounds for r in reps)
    assert reps[0].bound_p == strauss_constants(params)[0]
    # for exp(-r^2/8) the tail integrals are dominated by r = R, and the implied constant
    # rises to (2/q) (2/|S^{d-1}|)^{(q-2)/2} with q the exponent; it does not decrease in R
    q_p, q_mc = params.p + 1, 2 + 4 / params.d
    lim_p = 2 / q_p * reps[0].bound_p
    lim_mc = 2 / q_mc * reps[0].bound_mc
    cp = [r.constant_p for r in reps]
    cm = [r.constant_mc for r in reps]
    assert np.all(np.diff(cp) > 0) and np.all(np.diff(cm) > 0)
    assert cp[-1] < lim_p and cm[-1] < lim_mc
    assert abs(cp[-1] / lim_p - 1) < 0.05 and abs(cm[-1] / lim_mc - 1) < 0.05


@given(st.floats(0.1, 10.0))
@settings(max_examples=15, deadline=None)
def test_radial_sobolev_constants_are_scale_free(c):
    g = RadialGrid(3, 2001, 30.0)
    u = Field(g, np.exp(-g.r**2 / 4) * (1 + 0.3j * g.r))
    a, b = radial_sobolev_check(u, 3.0, P3), radial_sobolev_check(u * c, 3.0, P3)
    assert b.constant_p == pytest.approx(a.constant_p, rel=1e-12)
    assert b.constant_mc == pytest.approx(a.constant_mc, rel=1e-12)


def test_radial_sobolev_needs_radial_grid_and_dimension():
    with pytest.raises(TypeError):
        radial_sobolev_check(zeros(CartesianGrid(2, 16, 2.0)), 1.0, P2)
    with pytest.raises(ValueError):
        radial_sobolev_check(zeros(RadialGrid(1, 101, 2.0)), 1.0, P1)


# -- verdicts and monitors --------------------------------------------------------


def _short_run(amp, status_budget=0.05):
    g = CartesianGrid(1, 256, 20.0)
    return evolve(_gauss(g, amp), P1, EvolveControls(dt0=0.01, t_end=0.5, drift_budget=status_budget))


def test_short_run_is_undecided():
    tr = _short_run(0.5)
    v = classify_outcome(tr, None, P1)
    assert tr.status == "completed"
    assert v.outcome == "Undecided" and v.theory_consistent is None
    assert v.evidence["tail_share_mc"] > 0.01


def test_drift_exceeded_is_never_scatter():
    tr = _short_run(1.5, 1e-14)
    assert tr.status == "drift_exceeded"
    v = classify_outcome(tr, None, P1, ScatterThresholds(1.0, 10.0, 0.2))
    assert v.outcome == "Undecided"


def test_consistency_against_prediction():
    tr = _short_run(0.5)
    plus = membership(0.5, 1.0, 2.0)
    assert predicted_outcome(plus, P1) == "Scatter"
    assert classify_outcome(tr, plus, P1).theory_consistent is False
    minus = membership(0.5, -1.0, 2.0)
    assert predicted_outcome(minus, P1) is None
    assert predicted_outcome(minus, P2) == "Blowup"
    assert classify_outcome(tr, minus, P1).theory_consistent is None
    assert predicted_outcome(membership(3.0, 1.0, 2.0), P2) is None


def test_delta_calibration_on_small_data():
    tr = _short_run(0.5)
    m = ground_state(P1).m_omega
    delta = calibrate_plus_delta([tr], m, P1)
    assert delta > 0


def _fake(K, S, vpp):
    rows = [{"K": k, "S_omega": s, "V_R_second": v} for k, s, v in zip(K, S, vpp)]
    return SimpleNamespace(times=list(range(len(rows))), column=lambda n: np.array([r[n] for r in rows]))


def test_minus_set_bound_and_window():
    m = 2.0
    tr = _fake([-1.5, -1.2, -1.0], [1.0, 1.0, 1.0], [-5.0, 0.0, -5.0])
    rep = minus_set_bound(tr, m)
    assert not rep.holds and rep.violations == 1 and rep.worst_margin == 0.0
    assert minus_set_bound(_fake([-1.5, -1.2], [1.0, 1.0], [0, 0]), m).holds
    d1 = delta_one(1.0, m)
    assert d1 == 0.5
    win = concavity_window(tr, d1, m)
    assert win.level == -4.0 and win.longest == 1 and not win.all_steps


def test_trailing_monotone():
    assert trailing_monotone(np.arange(30.0))
    assert not trailing_monotone(np.arange(10.0))
    v = np.arange(30.0)
    v[-3] = v[-4]
    assert not trailing_monotone(v)
