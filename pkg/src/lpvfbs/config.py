"""Run configuration: YAML files, defaults and field-level validation.

A machine file holds ``geometry`` and ``model`` sections. A run file may
hold ``machine`` (inline mapping or path), ``trajectory``, ``controller``,
``variants``, ``out`` and ``seed``. Every field has a default, so an empty
file is a valid run.

Schema (defaults in brackets)::

    geometry:
      arm_length [300]            mm
      carriage_radius [140]       mm, rail to machine axis
      effector_radius [40]        mm
      carriage_angles_deg [90, 210, 330]
    model:
      dt [0.001]                  s, sample time T_s
      method [zoh]                zoh | tustin
      carriage_hz [40]            G_qd and G_Fq resonance
      zeta [0.3]                  damping ratio of every block
      compliance [0.012]          mm/N, static gain of G_Fq
      effector_mass [0.3]         kg
      flex_hz [35, 35, 50]        x, y, z flexibility of the effector
      inertial_distribution       optional 3 x (3x3) list, default I/3 each
    trajectory:
      shape [butterfly]           butterfly | square | waypoints | csv
      csv                         path with columns t,x,y,z (shape csv)
      waypoints                   list of [x, y]
      side [40]                   mm, square side
      scale [1.0]
      offset [0, 0]               mm
      z [0]                       mm
      v_max [150]                 mm/s
      a_max [20000]               mm/s^2
    controller:
      degree [5]                  B-spline degree m
      window [auto]               L_C, or auto from the worst-case settle
      n, n_up                     default floor(L_C/4.5)+1 and n//2
      settle_tol [1e-4]
      grid_pitch [5]              mm, grid for the settle search
      selector [median]           median | mean | mindist | perpoint
      constraints [position, velocity]
      solver                      pinv | qr, overrides the variant's own
      switching                   on | off, overrides the variant's own
    variants [baseline, b, c, e]
    out [out]
    seed [0]
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .controller import CONSTRAINT_ORDERS, SELECTORS, VARIANTS
from .errors import ConfigError
from .kinematics import DeltaGeometry
from .lpv_model import InertialDistribution, ModelBlocks, TWO_PI, inertial_flex, second_order

SHAPES = ("butterfly", "square", "waypoints", "csv")


def _num(section, key, value, lo=None, hi=None, integer=False, strict_lo=False):
    name = f"{section}.{key}"
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(name, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(name, "must be finite")
    if lo is not None and (value <= lo if strict_lo else value < lo):
        raise ConfigError(name, f"must be {'>' if strict_lo else '>='} {lo}")
    if hi is not None and value > hi:
        raise ConfigError(name, f"must be <= {hi}")
    return int(value) if integer else float(value)


def _vec(section, key, value, n):
    name = f"{section}.{key}"
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(name, f"expected a list of {n} numbers")
    return tuple(_num(section, f"{key}[{i}]", v) for i, v in enumerate(value))


def _section(raw, key):
    sec = raw.get(key, {}) if raw else {}
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(key, "expected a mapping")
    return sec


def _unknown(section, sec, allowed):
    extra = sorted(set(sec) - set(allowed))
    if extra:
        raise ConfigError(f"{section}.{extra[0]}", "unknown field")


@dataclass(frozen=True)
class MachineConfig:
    arm_length: float = 300.0
    carriage_radius: float = 140.0
    effector_radius: float = 40.0
    carriage_angles_deg: tuple = (90.0, 210.0, 330.0)
    dt: float = 1e-3
    method: str = "zoh"
    carriage_hz: float = 40.0
    zeta: float = 0.3
    compliance: float = 0.012
    effector_mass: float = 0.3
    flex_hz: tuple = (35.0, 35.0, 50.0)
    inertial_distribution: tuple = None

    def geometry(self):
        return DeltaGeometry(self.arm_length, self.carriage_radius, self.effector_radius,
                             tuple(np.deg2rad(self.carriage_angles_deg)))

    def blocks(self):
        wq = TWO_PI * self.carriage_hz
        w = tuple(inertial_flex(self.effector_mass, TWO_PI * f, self.zeta) for f in self.flex_hz)
        p = InertialDistribution() if self.inertial_distribution is None else \
            InertialDistribution(*[np.asarray(m, dtype=float) for m in self.inertial_distribution])
        return ModelBlocks(second_order(wq, self.zeta), second_order(wq, self.zeta, gain=self.compliance), w, p)


def parse_machine(raw):
    """Validate a machine mapping (``geometry`` and ``model`` sections)."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("machine", "expected a mapping")
    _unknown("machine", raw, ("geometry", "model"))
    g = _section(raw, "geometry")
    m = _section(raw, "model")
    _unknown("geometry", g, ("arm_length", "carriage_radius", "effector_radius", "carriage_angles_deg"))
    _unknown("model", m, ("dt", "method", "carriage_hz", "zeta", "compliance", "effector_mass", "flex_hz",
                          "inertial_distribution"))
    kw = {}
    for key in ("arm_length", "carriage_radius", "effector_radius"):
        if key in g:
            kw[key] = _num("geometry", key, g[key], lo=0.0, strict_lo=key != "effector_radius")
    if "carriage_angles_deg" in g:
        kw["carriage_angles_deg"] = _vec("geometry", "carriage_angles_deg", g["carriage_angles_deg"], 3)
    if "dt" in m:
        kw["dt"] = _num("model", "dt", m["dt"], lo=0.0, strict_lo=True)
    if "method" in m:
        if m["method"] not in ("zoh", "tustin"):
            raise ConfigError("model.method", "must be zoh or tustin")
        kw["method"] = m["method"]
    for key in ("carriage_hz", "zeta", "effector_mass"):
        if key in m:
            kw[key] = _num("model", key, m[key], lo=0.0, strict_lo=True)
    if "compliance" in m:
        kw["compliance"] = _num("model", "compliance", m["compliance"], lo=0.0)
    if "flex_hz" in m:
        kw["flex_hz"] = _vec("model", "flex_hz", m["flex_hz"], 3)
        if min(kw["flex_hz"]) <= 0:
            raise ConfigError("model.flex_hz", "frequencies must be positive")
    if m.get("inertial_distribution") is not None:
        try:
            P = np.asarray(m["inertial_distribution"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("model.inertial_distribution", "expected three 3x3 numeric matrices") from None
        if P.shape != (3, 3, 3) or not np.all(np.isfinite(P)):
            raise ConfigError("model.inertial_distribution", "expected three 3x3 numeric matrices")
        kw["inertial_distribution"] = tuple(P.tolist())
    cfg = MachineConfig(**kw)
    if not cfg.effector_radius < cfg.carriage_radius:
        raise ConfigError("geometry.effector_radius", "must be smaller than carriage_radius")
    try:
        cfg.geometry()
    except ValueError as exc:
        raise ConfigError("geometry", str(exc)) from None
    return cfg


@dataclass(frozen=True)
class TrajectoryConfig:
    shape: str = "butterfly"
    csv: str = None
    waypoints: tuple = None
    side: float = 40.0
    scale: float = 1.0
    offset: tuple = (0.0, 0.0)
    z: float = 0.0
    v_max: float = 150.0
    a_max: float = 20000.0


def parse_trajectory(sec):
    if isinstance(sec, str):
        sec = {"csv": sec, "shape": "csv"} if sec.endswith(".csv") else {"shape": sec}
    sec = sec or {}
    if not isinstance(sec, dict):
        raise ConfigError("trajectory", "expected a mapping, a shape name or a CSV path")
    _unknown("trajectory", sec, TrajectoryConfig.__dataclass_fields__)
    kw = {}
    if "shape" in sec:
        if sec["shape"] not in SHAPES:
            raise ConfigError("trajectory.shape", f"must be one of {', '.join(SHAPES)}")
        kw["shape"] = sec["shape"]
    if "csv" in sec:
        if not isinstance(sec["csv"], str):
            raise ConfigError("trajectory.csv", "expected a path")
        kw["csv"] = sec["csv"]
        kw.setdefault("shape", "csv")
    if kw.get("shape") == "csv" and not kw.get("csv"):
        raise ConfigError("trajectory.csv", "required when shape is csv")
    if "waypoints" in sec:
        W = sec["waypoints"]
        try:
            W = np.asarray(W, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("trajectory.waypoints", "expected a list of [x, y] pairs") from None
        if W.ndim != 2 or W.shape[1] < 2 or len(W) < 2:
            raise ConfigError("trajectory.waypoints", "expected at least two [x, y] pairs")
        kw["waypoints"] = tuple(map(tuple, W[:, :2].tolist()))
    if kw.get("shape") == "waypoints" and "waypoints" not in kw:
        raise ConfigError("trajectory.waypoints", "required when shape is waypoints")
    for key, lo in (("side", 0.0), ("scale", 0.0), ("v_max", 0.0), ("a_max", 0.0)):
        if key in sec:
            kw[key] = _num("trajectory", key, sec[key], lo=lo, strict_lo=True)
    if "z" in sec:
        kw["z"] = _num("trajectory", "z", sec["z"])
    if "offset" in sec:
        kw["offset"] = _vec("trajectory", "offset", sec["offset"], 2)
    return TrajectoryConfig(**kw)


@dataclass(frozen=True)
class ControllerConfig:
    degree: int = 5
    window: object = "auto"
    n: int = None
    n_up: int = None
    settle_tol: float = 1e-4
    grid_pitch: float = 5.0
    selector: str = "median"
    constraints: tuple = ("position", "velocity")
    solver: str = None
    switching: object = None


def _switch(value, name):
    if value is None:
        return None
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "off", "true", "false"):
        return value.lower() in ("on", "true")
    raise ConfigError(name, "expected on or off")


def parse_window(value, name="controller.window"):
    if value in (None, "auto"):
        return "auto"
    if isinstance(value, str):
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(name, "expected auto or a positive integer") from None
    return _num(*name.split(".", 1), value, lo=10, integer=True)


def parse_controller(sec):
    sec = sec or {}
    if not isinstance(sec, dict):
        raise ConfigError("controller", "expected a mapping")
    _unknown("controller", sec, ControllerConfig.__dataclass_fields__)
    kw = {}
    if "degree" in sec:
        kw["degree"] = _num("controller", "degree", sec["degree"], lo=1, hi=9, integer=True)
    if "window" in sec:
        kw["window"] = parse_window(sec["window"])
    for key in ("n", "n_up"):
        if sec.get(key) is not None:
            kw[key] = _num("controller", key, sec[key], lo=1, integer=True)
    if "settle_tol" in sec:
        kw["settle_tol"] = _num("controller", "settle_tol", sec["settle_tol"], lo=0.0, hi=0.5, strict_lo=True)
    if "grid_pitch" in sec:
        kw["grid_pitch"] = _num("controller", "grid_pitch", sec["grid_pitch"], lo=0.0, strict_lo=True)
    if "selector" in sec:
        if sec["selector"] not in SELECTORS:
            raise ConfigError("controller.selector", f"must be one of {', '.join(SELECTORS)}")
        kw["selector"] = sec["selector"]
    if "constraints" in sec:
        c = sec["constraints"]
        if not isinstance(c, (list, tuple)) or not c or any(x not in CONSTRAINT_ORDERS for x in c):
            raise ConfigError("controller.constraints", f"expected a list drawn from {', '.join(CONSTRAINT_ORDERS)}")
        kw["constraints"] = tuple(c)
    if sec.get("solver") is not None:
        if sec["solver"] not in ("pinv", "qr"):
            raise ConfigError("controller.solver", "must be pinv or qr")
        kw["solver"] = sec["solver"]
    if "switching" in sec:
        kw["switching"] = _switch(sec["switching"], "controller.switching")
    cfg = ControllerConfig(**kw)
    if cfg.n is not None and cfg.n + 1 < cfg.degree + 1:
        raise ConfigError("controller.n", "need n + 1 >= degree + 1 coefficients")
    if cfg.n is not None and cfg.n_up is not None and cfg.n_up > cfg.n + 1:
        raise ConfigError("controller.n_up", "cannot exceed the coefficient count n + 1")
    return cfg


def parse_variants(value):
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError("variants", "expected a non-empty list")
    for v in value:
        if v not in VARIANTS:
            raise ConfigError("variants", f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    return tuple(dict.fromkeys(value))


@dataclass(frozen=True)
class RunConfig:
    machine: MachineConfig = field(default_factory=MachineConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    variants: tuple = ("baseline", "b", "c", "e")
    out: str = "out"
    seed: int = 0
    machine_path: str = None

    def as_dict(self):
        return asdict(self)


def load_yaml(path, what="config"):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(what, f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(what, f"not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(what, "top level must be a mapping")
    return data or {}


def parse_run(raw, base_dir=None):
    raw = raw or {}
    _unknown("run", raw, ("machine", "trajectory", "controller", "variants", "out", "seed"))
    kw = {}
    mach = raw.get("machine")
    if isinstance(mach, str):
        p = Path(mach)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        kw["machine"] = parse_machine(load_yaml(p, "machine"))
        kw["machine_path"] = str(p)
    else:
        kw["machine"] = parse_machine(mach)
    kw["trajectory"] = parse_trajectory(raw.get("trajectory"))
    kw["controller"] = parse_controller(raw.get("controller"))
    if "variants" in raw:
        kw["variants"] = parse_variants(raw["variants"])
    if "out" in raw:
        if not isinstance(raw["out"], str):
            raise ConfigError("out", "expected a directory path")
        kw["out"] = raw["out"]
    if "seed" in raw:
        kw["seed"] = _num("run", "seed", raw["seed"], lo=0, integer=True)
    return RunConfig(**kw)


def load_run(path):
    return parse_run(load_yaml(path), base_dir=Path(path).parent)
