import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from cnls.config import ConfigError, ExperimentConfig, load_config, parse_config

BASE = {"params": {"d": 1, "p": 7, "omega": 1.0}}


def _with(**sections):
    return {**BASE, **sections}


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.params.d == 1 and cfg.params.p == 7.0
    assert cfg.grid.n == 1024 and cfg.initial_data.kind == "ground_state_multiple" and cfg.initial_data.c == 1.0
    assert cfg.diagnostics.virial_cutoff == "blowup_cutoff"
    assert cfg.sweep is None and cfg.output_dir == "out" and cfg.seed == 0


@given(
    c=st.floats(0.0, 3.0),
    n=st.sampled_from([64, 128, 1024]),
    L=st.floats(5.0, 100.0),
    dt0=st.floats(1e-4, 1e-2),
    kind=st.sampled_from(["blowup_cutoff", "scattering_cutoff", "none"]),
    seed=st.integers(0, 1000),
)
@settings(max_examples=30, deadline=None)
def test_round_trip(c, n, L, dt0, kind, seed):
    raw = _with(grid={"n": n, "L": L}, initial_data={"kind": "ground_state_multiple", "c": c},
                controls={"dt0": dt0, "t_end": 1.0}, diagnostics={"virial_cutoff": kind}, seed=seed)
    cfg = parse_config(raw)
    again = parse_config(yaml.safe_load(cfg.dump()))
    assert again == cfg


def test_load_from_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("params: {d: 2, p: 5}\ninitial_data: {kind: dilated_ground_state, eps: 0.5}\n")
    cfg = load_config(path)
    assert cfg.params.d == 2 and cfg.initial_data.eps == 0.5


@pytest.mark.parametrize("raw", [
    _with(bogus=1),
    _with(grid={"n": 64, "size": 3}),
    _with(initial_data={"kind": "gaussian", "amplitude": 1.0, "width": 1.0, "c": 2}),
    {"grid": {"n": 64}},
    {"params": {"d": 1, "p": 5}},
    {"params": {"d": 4, "p": 3}},
    {"params": {"d": 1.5, "p": 7}},
    _with(grid={"n": 100}),
    _with(grid={"n": 64, "L": -1}),
    _with(initial_data={"kind": "soliton"}),
    _with(initial_data={"kind": "dilated_ground_state", "eps": 0}),
    _with(initial_data={"kind": "file", "path": "/nonexistent/profile.dat"}),
    _with(controls={"dt0": 1e-3, "dt_floor": 1e-2}),
    _with(controls={"adapt": "cfl"}),
    _with(controls={"dealias": "yes"}),
    _with(diagnostics={"virial_cutoff": "gaussian"}),
    _with(diagnostics={"tail_fraction": 1.5}),
    _with(verify={"separations": [10]}),
    _with(seed=-1),
    _with(output={"dir": ""}),
    _with(sweep={"key": "initial_data.c", "values": []}),
    _with(sweep={"key": "c", "values": [1]}),
    _with(sweep={"key": "initial_data.c", "values": [0.5], "command": "verify"}),
    _with(sweep={"key": "params.p", "values": [7, 5]}),
    _with(sweep={"key": "nowhere.c", "values": [1]}),
    [1, 2],
], ids=lambda r: str(r)[:60])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_bad_yaml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("params: {d: 1, p: [\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_override_revalidates_and_drops_the_sweep():
    cfg = parse_config(_with(sweep={"key": "initial_data.c", "values": [0.5, 1.5]}))
    sub = cfg.with_override("initial_data.c", 1.5)
    assert sub.initial_data.c == 1.5 and sub.sweep is None
    with pytest.raises(ConfigError):
        cfg.with_override("params.p", 5)
    with pytest.raises(ConfigError):
        cfg.with_override("seed", 1)


def test_config_is_immutable():
    cfg = parse_config(BASE)
    assert isinstance(cfg, ExperimentConfig)
    with pytest.raises(AttributeError):
        cfg.seed = 3
