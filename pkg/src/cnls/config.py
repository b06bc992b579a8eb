"""Experiment configuration: a YAML file with fixed nested sections.

Every section is validated into a frozen dataclass before any computation
runs; unknown keys anywhere are errors. ``to_dict`` emits every field,
defaults included, so ``parse(serialize(cfg)) == cfg``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .core import AdmissibilityError, CartesianGrid, GridError, Params, RadialGrid
from .evolution import ADAPT_RULES, EvolveControls

DATA_KINDS = ("ground_state_multiple", "dilated_ground_state", "gaussian", "file")
CUTOFF_CHOICES = ("blowup_cutoff", "scattering_cutoff", "none")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _number(section: str, key: str, value, *, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key} must be finite")
    if positive and not value > 0:
        raise ConfigError(f"{section}.{key} must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(f"{section}.{key} must be nonnegative, got {value!r}")
    return int(value) if integer else float(value)


def _take(section: str, raw, allowed: dict) -> dict:
    """Check keys of a mapping against ``allowed`` (name -> default, ``...`` for required)."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(map(str, unknown))}")
    out = {}
    for key, default in allowed.items():
        if key in raw:
            out[key] = raw[key]
        elif default is ...:
            raise ConfigError(f"missing required key {section}.{key}")
        else:
            out[key] = default
    return out


@dataclass(frozen=True)
class GridSpec:
    n: int = 1024
    L: float = 60.0

    def build(self, d: int) -> CartesianGrid:
        return CartesianGrid(d, self.n, self.L)


@dataclass(frozen=True)
class RadialSpec:
    n: int = 16001
    r_max: Optional[float] = None  # default 40 / sqrt(omega)

    def build(self, params: Params) -> RadialGrid:
        r_max = self.r_max if self.r_max is not None else 40.0 / math.sqrt(params.omega)
        return RadialGrid(params.d, self.n, r_max)


@dataclass(frozen=True)
class InitialData:
    kind: str = "ground_state_multiple"
    c: float = 1.0
    eps: float = 1.0
    amplitude: float = 1.0
    width: float = 1.0
    path: Optional[str] = None


_DATA_KEYS = {
    "ground_state_multiple": {"kind": ..., "c": ...},
    "dilated_ground_state": {"kind": ..., "eps": ...},
    "gaussian": {"kind": ..., "amplitude": ..., "width": ...},
    "file": {"kind": ..., "path": ..., "amplitude": 1.0},
}


@dataclass(frozen=True)
class DiagnosticsSpec:
    virial_cutoff: str = "blowup_cutoff"
    virial_R: Optional[float] = None  # default L/3 (blowup) or L/2.5 (scattering)
    plots: bool = False
    increment_share: float = 0.01
    amplitude_ratio: float = 0.1
    tail_fraction: float = 0.2


@dataclass(frozen=True)
class VerifySpec:
    n_bumps: int = 20
    separations: tuple = (10.0, 20.0, 40.0)
    trapping_samples: int = 50


@dataclass(frozen=True)
class SweepSpec:
    key: str = ""
    values: tuple = ()
    command: str = "evolve"


@dataclass(frozen=True)
class ExperimentConfig:
    params: Params
    grid: GridSpec = field(default_factory=GridSpec)
    radial_grid: RadialSpec = field(default_factory=RadialSpec)
    initial_data: InitialData = field(default_factory=InitialData)
    controls: EvolveControls = field(default_factory=EvolveControls)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    sweep: Optional[SweepSpec] = None
    output_dir: str = "out"
    seed: int = 0

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        p = self.params
        out: dict[str, Any] = {
            "params": {"d": p.d, "p": p.p, "omega": p.omega},
            "grid": asdict(self.grid),
            "radial_grid": asdict(self.radial_grid),
            "initial_data": _data_dict(self.initial_data),
            "controls": asdict(self.controls),
            "diagnostics": asdict(self.diagnostics),
            "verify": {**asdict(self.verify), "separations": list(self.verify.separations)},
            "output": {"dir": self.output_dir},
            "seed": self.seed,
        }
        if self.sweep is not None:
            out["sweep"] = {"key": self.sweep.key, "values": list(self.sweep.values), "command": self.sweep.command}
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def with_override(self, dotted: str, value) -> "ExperimentConfig":
        """Copy with one ``section.key`` replaced, revalidated from scratch; the copy has no sweep."""
        raw = self.to_dict()
        raw.pop("sweep", None)
        section, _, key = dotted.partition(".")
        if section not in raw or not key or not isinstance(raw[section], dict):
            raise ConfigError(f"cannot override {dotted!r}")
        raw[section][key] = value
        return parse_config(raw)


def _data_dict(d: InitialData) -> dict:
    keys = _DATA_KEYS[d.kind]
    return {k: getattr(d, k) for k in keys}


def _parse_data(raw) -> InitialData:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("initial_data needs a 'kind'")
    kind = raw["kind"]
    if kind not in DATA_KINDS:
        raise ConfigError(f"initial_data.kind must be one of {DATA_KINDS}, got {kind!r}")
    vals = _take("initial_data", raw, _DATA_KEYS[kind])
    s = "initial_data"
    if kind == "ground_state_multiple":
        return InitialData(kind, c=_number(s, "c", vals["c"]))
    if kind == "dilated_ground_state":
        return InitialData(kind, eps=_number(s, "eps", vals["eps"], positive=True))
    if kind == "gaussian":
        return InitialData(kind, amplitude=_number(s, "amplitude", vals["amplitude"], nonneg=True),
                           width=_number(s, "width", vals["width"], positive=True))
    path = vals["path"]
    if not isinstance(path, str) or not Path(path).is_file():
        raise ConfigError(f"initial_data.path does not name a readable file: {path!r}")
    return InitialData(kind, path=path, amplitude=_number(s, "amplitude", vals["amplitude"]))


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    top = _take("config", raw, {
        "params": ..., "grid": None, "radial_grid": None, "initial_data": None, "controls": None,
        "diagnostics": None, "verify": None, "sweep": None, "output": None, "seed": 0,
    })

    pr = _take("params", top["params"], {"d": ..., "p": ..., "omega": 1.0})
    try:
        params = Params(_number("params", "d", pr["d"], integer=True), _number("params", "p", pr["p"]),
                        _number("params", "omega", pr["omega"]))
    except AdmissibilityError as exc:
        raise ConfigError(f"inadmissible parameters: {exc}") from exc

    gr = _take("grid", top["grid"], asdict(GridSpec()))
    grid = GridSpec(_number("grid", "n", gr["n"], integer=True), _number("grid", "L", gr["L"]))
    rg = _take("radial_grid", top["radial_grid"], asdict(RadialSpec()))
    radial = RadialSpec(_number("radial_grid", "n", rg["n"], integer=True),
                        None if rg["r_max"] is None else _number("radial_grid", "r_max", rg["r_max"], positive=True))
    try:
        grid.build(params.d)
        radial.build(params)
    except (GridError, ValueError) as exc:
        raise ConfigError(f"invalid grid: {exc}") from exc

    data = _parse_data(top["initial_data"]) if top["initial_data"] is not None else InitialData(c=1.0)
    if data.kind == "file":
        from .groundstate import read_profile

        try:
            header = read_profile(data.path).header
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"initial_data.path is not a profile file: {exc}") from exc
        if header["d"] != params.d:
            raise ConfigError(f"profile file is for d={header['d']}, params.d is {params.d}")

    defaults = asdict(EvolveControls())
    cr = _take("controls", top["controls"], defaults)
    num_keys = ("dt0", "t_end", "dt_floor", "blowup_gradient_factor", "drift_budget")
    kw = {k: _number("controls", k, cr[k]) for k in num_keys}
    kw["snapshot_stride"] = _number("controls", "snapshot_stride", cr["snapshot_stride"], integer=True)
    kw["max_steps"] = _number("controls", "max_steps", cr["max_steps"], integer=True)
    if cr["adapt"] not in ADAPT_RULES:
        raise ConfigError(f"controls.adapt must be one of {ADAPT_RULES}")
    if not isinstance(cr["dealias"], bool):
        raise ConfigError("controls.dealias must be true or false")
    try:
        controls = EvolveControls(adapt=cr["adapt"], dealias=cr["dealias"], **kw)
    except ValueError as exc:
        raise ConfigError(f"invalid controls: {exc}") from exc

    dr = _take("diagnostics", top["diagnostics"], asdict(DiagnosticsSpec()))
    if dr["virial_cutoff"] not in CUTOFF_CHOICES:
        raise ConfigError(f"diagnostics.virial_cutoff must be one of {CUTOFF_CHOICES}")
    if not isinstance(dr["plots"], bool):
        raise ConfigError("diagnostics.plots must be true or false")
    diag = DiagnosticsSpec(
        virial_cutoff=dr["virial_cutoff"],
        virial_R=None if dr["virial_R"] is None else _number("diagnostics", "virial_R", dr["virial_R"], positive=True),
        plots=dr["plots"],
        increment_share=_number("diagnostics", "increment_share", dr["increment_share"], positive=True),
        amplitude_ratio=_number("diagnostics", "amplitude_ratio", dr["amplitude_ratio"], positive=True),
        tail_fraction=_number("diagnostics", "tail_fraction", dr["tail_fraction"], positive=True),
    )
    if diag.tail_fraction >= 1:
        raise ConfigError("diagnostics.tail_fraction must be below 1")

    vr = _take("verify", top["verify"], {**asdict(VerifySpec()), "separations": list(VerifySpec().separations)})
    seps = vr["separations"]
    if not isinstance(seps, (list, tuple)) or len(seps) < 2:
        raise ConfigError("verify.separations must list at least two distances")
    verify = VerifySpec(
        n_bumps=_number("verify", "n_bumps", vr["n_bumps"], integer=True, positive=True),
        separations=tuple(_number("verify", "separations", s, positive=True) for s in seps),
        trapping_samples=_number("verify", "trapping_samples", vr["trapping_samples"], integer=True, positive=True),
    )

    sweep = None
    if top["sweep"] is not None:
        sw = _take("sweep", top["sweep"], {"key": ..., "values": ..., "command": "evolve"})
        if sw["command"] not in ("evolve", "classify", "ground-state"):
            raise ConfigError("sweep.command must be evolve, classify or ground-state")
        if not isinstance(sw["values"], (list, tuple)) or not sw["values"]:
            raise ConfigError("sweep.values must be a nonempty list")
        if not isinstance(sw["key"], str) or "." not in sw["key"]:
            raise ConfigError("sweep.key must look like 'section.key'")
        sweep = SweepSpec(sw["key"], tuple(sw["values"]), sw["command"])

    out = _take("output", top["output"], {"dir": "out"})
    if not isinstance(out["dir"], str) or not out["dir"]:
        raise ConfigError("output.dir must be a nonempty string")
    seed = _number("config", "seed", top["seed"], integer=True, nonneg=True)

    cfg = ExperimentConfig(params, grid, radial, data, controls, diag, verify, sweep, out["dir"], seed)
    if sweep is not None:
        # every swept configuration must itself be valid before anything runs
        for v in sweep.values:
            cfg.with_override(sweep.key, v)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw)
