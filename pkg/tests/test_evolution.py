import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cnls.core import CartesianGrid, Field, Params, free_propagate, quadrature_Lq, zeros
from cnls.evolution import (
    CSV_COLUMNS,
    STATUSES,
    EvolveControls,
    Trajectory,
    conservation_report,
    evolve,
    ladder_step,
    modulus_power,
    momentum,
    nonlinear_substep,
    strang_step,
    unit_phase,
)
from cnls.groundstate import ground_state, on_cartesian

P1 = Params(1, 7.0)
P2 = Params(2, 5.0)


def _gauss(g, amp=1.0, k=0.0):
    return Field(g, amp * np.exp(-g.radius**2) * np.exp(1j * k * g.coords[0]))


def test_csv_columns_are_fixed():
    assert CSV_COLUMNS == ("t", "mass", "energy", "S_omega", "K", "H_omega", "grad_norm_sq", "Lp1_norm",
                           "Lmc_norm", "V_R", "V_R_prime", "V_R_second", "dt")


@pytest.mark.parametrize("kw", [dict(dt0=1e-3, dt_floor=1e-3), dict(t_end=0.0), dict(blowup_gradient_factor=1.0),
                                dict(adapt="cfl"), dict(snapshot_stride=0), dict(drift_budget=0.0)])
def test_controls_validation(kw):
    with pytest.raises(ValueError):
        EvolveControls(**kw)


@given(st.floats(0.0, 50.0), st.sampled_from([0.0, 1.0, 2.0, 4.0, 6.0, 7.0, 4 / 3, 2.5, 10 / 3]))
def test_modulus_power_matches_pow(a, q):
    x = np.array([a, 0.5 * a, 0.0])
    assert np.allclose(modulus_power(x, q), x**q, rtol=1e-14, atol=0)


@given(st.floats(-5.0, 5.0))
def test_unit_phase(theta):
    x = np.array([theta, theta * 1e-4, 0.0])
    assert np.allclose(unit_phase(x), np.exp(-1j * x), rtol=0, atol=1e-15)


def test_ladder_quantization():
    dt0 = 1e-2
    assert ladder_step(dt0, 1.0) == dt0
    for raw in (9e-3, 3.3e-3, 1e-5):
        dt = ladder_step(dt0, raw)
        j = 8 * math.log2(dt0 / dt)
        assert dt <= raw and abs(j - round(j)) < 1e-9
        assert dt * 2 ** (1 / 8) > raw


def test_zero_field_is_fixed():
    g = CartesianGrid(1, 64, 5.0)
    assert np.all(strang_step(zeros(g), 0.1, P1).values == 0)


def test_nonlinear_substep_preserves_modulus():
    g = CartesianGrid(2, 64, 6.0)
    u = _gauss(g, 2.0, 0.7)
    v = nonlinear_substep(u, 0.37, P2)
    assert np.max(np.abs(np.abs(v.values) - np.abs(u.values))) < 1e-14


def test_strang_step_reversible():
    g = CartesianGrid(1, 256, 12.0)
    u = _gauss(g, 1.3, 0.5)
    back = strang_step(strang_step(u, 0.01, P1), -0.01, P1)
    assert np.max(np.abs(back.values - u.values)) < 1e-13
    with pytest.raises(ValueError):
        strang_step(u, 0.0, P1)


def test_tiny_data_follow_the_free_flow():
    g = CartesianGrid(1, 512, 30.0)
    u0 = _gauss(g, 1e-6, 0.3)
    tr = evolve(u0, P1, EvolveControls(dt0=0.01, t_end=1.0, adapt="fixed"))
    ref = free_propagate(u0, 1.0)
    diff = Field(g, tr.final.values - ref.values)
    assert math.sqrt(quadrature_Lq(diff, 2) / quadrature_Lq(ref, 2)) < 1e-6


def test_strang_second_order():
    g = CartesianGrid(1, 256, 16.0)
    u0 = _gauss(g, 1.2, 0.4)

    def run(dt):
        v = u0
        for _ in range(round(1.0 / dt)):
            v = strang_step(v, dt, P1)
        return v.values

    ref = run(0.01 / 8)
    e1 = np.linalg.norm(run(0.01) - ref)
    e2 = np.linalg.norm(run(0.005) - ref)
    assert 3.6 <= e1 / e2 <= 4.4


def test_small_ground_state_multiple_conserves():
    g = CartesianGrid(1, 512, 30.0)
    u0 = on_cartesian(ground_state(P1).profile, g, amplitude=0.3)
    tr = evolve(u0, P1, EvolveControls(dt0=1e-3, t_end=1.0, drift_budget=1e-6))
    rep = conservation_report(tr)
    assert tr.status == "completed"
    assert rep.mass_drift < 1e-10 and rep.energy_drift < 1e-7
    assert np.all(np.diff(tr.times) > 0) and len(tr.times) == len(tr.series)
    assert rep.momentum_max < 1e-10


def test_single_snapshot_report_is_zero():
    g = CartesianGrid(1, 64, 5.0)
    u = _gauss(g)
    from cnls.functionals import evaluate
    from cnls.evolution import Sample

    tr = Trajectory(P1, EvolveControls(), times=[0.0], series=[Sample(0.0, evaluate(u, P1))], snapshots=[u],
                    snapshot_times=[0.0])
    rep = conservation_report(tr)
    assert (rep.mass_drift, rep.energy_drift, rep.momentum_drift) == (0.0, 0.0, 0.0)


def test_radial_data_carry_no_momentum():
    g = CartesianGrid(2, 64, 8.0)
    assert np.max(np.abs(momentum(_gauss(g, 1.5)))) < 1e-10
    assert momentum(_gauss(g, 1.0, 0.5))[0] > 0


def test_streamed_rows_match_the_series():
    g = CartesianGrid(1, 128, 10.0)
    rows = []
    tr = evolve(_gauss(g), P1, EvolveControls(dt0=0.01, t_end=0.1), sink=rows.append)
    assert len(rows) == len(tr.series) == tr.steps + 1
    assert rows[-1] == tr.series[-1].row()
    assert set(rows[0]) == set(CSV_COLUMNS)


def test_drift_budget_is_enforced():
    g = CartesianGrid(1, 128, 10.0)
    tr = evolve(_gauss(g, 1.5), P1, EvolveControls(dt0=0.05, t_end=1.0, adapt="fixed", drift_budget=1e-12))
    assert tr.status == "drift_exceeded" and tr.status in STATUSES


def test_gradient_factor_terminates_blowup():
    g = CartesianGrid(2, 256, 8.0)
    gs = ground_state(P2)
    u0 = on_cartesian(gs.profile, g, lam=2.0)
    tr = evolve(u0, P2, EvolveControls(dt0=1e-4, t_end=1.0, blowup_gradient_factor=2.0, drift_budget=0.05))
    assert tr.status == "blowup_terminated"
    assert tr.grad_norm()[-1] > 2 * tr.grad_norm()[0]
    assert np.all(np.diff(tr.grad_norm()[-21:]) > 0)
    assert tr.snapshot_times[-1] == tr.t_final


def test_step_floor():
    g = CartesianGrid(2, 256, 8.0)
    u0 = on_cartesian(ground_state(P2).profile, g, lam=2.0)
    c = EvolveControls(dt0=1e-4, t_end=1.0, dt_floor=0.9e-4, blowup_gradient_factor=100.0, drift_budget=0.05)
    tr = evolve(u0, P2, c)
    assert tr.status == "step_floor_hit"
    assert np.all(np.array(tr.column("dt"))[1:] >= c.dt_floor)
