"""JSON experiment configuration loaded into frozen dataclasses.

A config document looks like::

    {
      "experiment": "converge",
      "seed": 7,
      "plant": {"name": "stable_demo"},
      "noise": {"kind": "gaussian"},
      "T_ini": 8, "T": 10,
      "converge": {"modes": ["single"], "N_values": [128, 256], "trials": 30}
    }

``plant`` is either a built-in name (with optional keyword overrides such as
``excitation``) or explicit matrices ``A, B, C, Q, R`` plus an optional
``controller`` block. Unknown keys are rejected so that typos surface early.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .control import CONTROLLER_KINDS, ControlObjective, ControllerSpec
from .lti import (NOISE_KINDS, NoiseModel, StabilizingController, StateSpaceModel, UnstableLoopError,
                  check_closed_loop, stationary_state_covariance)
from .plants import PlantSetup, get_plant

EXPERIMENTS = ("converge", "tini_gap", "control_bench")


class ConfigError(ValueError):
    """Configuration is malformed or internally inconsistent."""


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {where}")


@dataclass(frozen=True)
class ConvergeConfig:
    modes: tuple = ("single",)
    N_values: tuple = (128, 256, 512, 1024, 2048, 4096)
    trials: int = 30


@dataclass(frozen=True)
class TiniGapConfig:
    T_ini_values: tuple = tuple(range(2, 31))
    pairs: int = 6
    scale: float = 1.0
    floor: float = 1e-12


@dataclass(frozen=True)
class BenchConfig:
    controllers: tuple = ()
    trials: int = 50
    steps: int = 108
    objective: ControlObjective = field(default_factory=ControlObjective)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    plant: dict
    noise: NoiseModel = field(default_factory=NoiseModel)
    T_ini: int = 8
    T: int = 10
    converge: ConvergeConfig = field(default_factory=ConvergeConfig)
    tini_gap: TiniGapConfig = field(default_factory=TiniGapConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output_dir: str = "results"

    def plant_setup(self) -> PlantSetup:
        return build_plant(self.plant)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return _replace(self, seed=int(seed))


def _replace(obj, **changes):
    values = {f.name: getattr(obj, f.name) for f in fields(obj)}
    values.update(changes)
    return type(obj)(**values)


def _int(value, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}, got {value!r}")
    return value


def build_plant(spec: dict) -> PlantSetup:
    """Resolve a plant section into a :class:`PlantSetup`."""
    spec = dict(spec)
    if "name" in spec:
        name = spec.pop("name")
        try:
            return get_plant(name, **spec)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        except TypeError as exc:
            raise ConfigError(f"bad option for plant {name!r}: {exc}") from None
    _check_keys(spec, ("A", "B", "C", "Q", "R", "controller", "initial_cov"), "plant")
    try:
        model = StateSpaceModel(*(np.asarray(spec[k], dtype=float) for k in ("A", "B", "C", "Q", "R")))
    except KeyError as exc:
        raise ConfigError(f"plant is missing matrix {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid plant: {exc}") from None
    cspec = spec.get("controller", {"excitation": 1.0})
    _check_keys(cspec, ("A_ctrl", "B_ctrl", "C_ctrl", "R_ctrl", "Sigma_phi", "excitation"), "plant.controller")
    try:
        if "A_ctrl" in cspec:
            ctrl = StabilizingController(*(np.asarray(cspec[k], dtype=float)
                                           for k in ("A_ctrl", "B_ctrl", "C_ctrl", "R_ctrl", "Sigma_phi")))
        else:
            ctrl = StabilizingController.white_noise(model.m, model.p, float(cspec.get("excitation", 1.0)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid controller: {exc}") from None
    if ctrl.m != model.m or ctrl.p != model.p:
        raise ConfigError("controller dimensions do not match the plant")
    try:
        check_closed_loop(model, ctrl)
    except UnstableLoopError as exc:
        raise ConfigError(f"data-collection loop is unstable: {exc}") from None
    if "initial_cov" in spec:
        initial_cov = np.asarray(spec["initial_cov"], dtype=float)
        if initial_cov.shape != (model.n, model.n):
            raise ConfigError(f"initial_cov must be {model.n}x{model.n}")
    else:
        try:
            initial_cov = stationary_state_covariance(model, ctrl)[:model.n, :model.n]
        except Exception as exc:  # unstable loop has no stationary law
            raise ConfigError(f"initial_cov is required for this plant: {exc}") from None
    return PlantSetup("custom", model, ctrl, initial_cov)


def _noise(section: dict) -> NoiseModel:
    _check_keys(section, ("kind", "process", "measurement", "excitation"), "noise")
    kind = section.get("kind", "gaussian")
    if kind not in NOISE_KINDS:
        raise ConfigError(f"noise.kind must be one of {NOISE_KINDS}")
    return NoiseModel(kind, *(float(section.get(k, 1.0)) for k in ("process", "measurement", "excitation")))


def _controllers(items, T_ini: int, T: int) -> tuple:
    if not isinstance(items, list) or not items:
        raise ConfigError("control_bench.controllers must be a non-empty list")
    allowed = {f.name for f in fields(ControllerSpec)} - {"T_ini", "T"}
    out = []
    for i, item in enumerate(items):
        _check_keys(item, allowed, f"control_bench.controllers[{i}]")
        kind = item.get("kind")
        if kind not in CONTROLLER_KINDS:
            raise ConfigError(f"controllers[{i}].kind must be one of {CONTROLLER_KINDS}")
        data_driven = kind not in ("ssmpc_model", "kf_dmpc")
        if data_driven and not item.get("N"):
            raise ConfigError(f"controllers[{i}] ({kind}) needs a library size N")
        try:
            out.append(ControllerSpec(T_ini=T_ini, T=T, **item))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"controllers[{i}]: {exc}") from None
    return tuple(out)


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a decoded JSON document."""
    _check_keys(doc, ("experiment", "seed", "plant", "noise", "T_ini", "T", "converge", "tini_gap",
                      "control_bench", "output_dir", "description"), "config")
    experiment = doc.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    if "seed" not in doc:
        raise ConfigError("seed is required")
    seed = _int(doc["seed"], "seed")
    T_ini = _int(doc.get("T_ini", 8), "T_ini", 1)
    T = _int(doc.get("T", 10), "T", 1)
    plant = doc.get("plant", {"name": "stable_demo"})
    if not isinstance(plant, dict):
        raise ConfigError("plant must be an object")
    noise = _noise(doc.get("noise", {}))

    c = doc.get("converge", {})
    _check_keys(c, ("modes", "N_values", "trials"), "converge")
    modes = tuple(c.get("modes", ConvergeConfig.modes))
    if not modes or any(mm not in ("single", "multi") for mm in modes):
        raise ConfigError("converge.modes must list 'single' and/or 'multi'")
    N_values = tuple(_int(n, "converge.N_values[]", 1) for n in c.get("N_values", ConvergeConfig.N_values))
    if len(N_values) < 2 or list(N_values) != sorted(set(N_values)):
        raise ConfigError("converge.N_values must hold at least two increasing values")
    converge = ConvergeConfig(modes, N_values, _int(c.get("trials", ConvergeConfig.trials), "converge.trials", 1))

    g = doc.get("tini_gap", {})
    _check_keys(g, ("T_ini_values", "pairs", "scale", "floor"), "tini_gap")
    Tis = tuple(_int(v, "tini_gap.T_ini_values[]", 1) for v in g.get("T_ini_values", TiniGapConfig.T_ini_values))
    if len(Tis) < 3:
        raise ConfigError("tini_gap.T_ini_values needs at least three values")
    gap = TiniGapConfig(Tis, _int(g.get("pairs", TiniGapConfig.pairs), "tini_gap.pairs", 1),
                        float(g.get("scale", 1.0)), float(g.get("floor", TiniGapConfig.floor)))

    b = doc.get("control_bench")
    if b is None:
        if experiment == "control_bench":
            raise ConfigError("control_bench section is required for this experiment")
        bench = BenchConfig()
    else:
        _check_keys(b, ("controllers", "trials", "steps", "objective"), "control_bench")
        ob = b.get("objective", {})
        _check_keys(ob, {f.name for f in fields(ControlObjective)}, "control_bench.objective")
        try:
            objective = ControlObjective(**ob)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"control_bench.objective: {exc}") from None
        steps = _int(b.get("steps", 108), "control_bench.steps", 1)
        if steps <= T_ini:
            raise ConfigError("control_bench.steps must exceed T_ini")
        bench = BenchConfig(_controllers(b.get("controllers"), T_ini, T),
                            _int(b.get("trials", 50), "control_bench.trials", 1), steps, objective)

    cfg = ExperimentConfig(experiment, seed, plant, noise, T_ini, T, converge, gap, bench,
                           str(doc.get("output_dir", "results")))
    setup = cfg.plant_setup()
    if setup.model.m != setup.controller.m:
        raise ConfigError("controller dimensions do not match the plant")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(doc)
