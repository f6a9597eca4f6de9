"""Experiment configuration: dataclasses, strict YAML/JSON loading and system construction.

Schema (every section optional except ``system``; unknown keys are rejected)::

    system:
      name: pendulum | magnetic-1d | magnetic-2d | torus-distance | custom
      dim: 1 | 2
      n: 256
      metric: {kind: flat | conformal, amplitude: 0.0}
      omega: [0.3, 0.0]
      potential: {id: zero | pendulum | product-cosine, params: {amplitude: 0.5}}
    solver:
      mode: weak-kam | eikonal
      lambdas: [0.2, 0.1]
      critical_value: null        # estimate when null
      sweep_tol: 1.0e-12
      max_sweeps: 5000
      residual_tol: 0.01          # bound on the RMS residual for a passing solve
      sources: [[0.0, 0.0]]       # eikonal mode only
    flow:
      starts: [[0.5, 0.25]]
      singular_starts: 0          # extra starts drawn evenly from the detected singular set
      T: 0.2
      step: null                  # h/2 when null
      delta_sing: null            # max(10h, 0.02) when null
      theta_c: null               # max(6h, 0.05) when null
      radius: 3.0                 # gradient-ball radius in units of h
      mode: g1 | g2
    mollify:
      ladder: [16, 32, 64, 128]
      slack: 0.1
      psi_mode: riemannian | magnetic
      hessian_samples: 500
      hessian_tol: null
      psi_max_tol: null
    output: {dir: runs/out}
    seed: 0
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .geometry import MetricField, OneFormField, PeriodicGrid, PotentialField
from .hj_solver import MagneticSystem


class ConfigError(ValueError):
    pass


@dataclass
class MetricConfig:
    kind: str = "flat"
    amplitude: float = 0.0


@dataclass
class PotentialConfig:
    id: str = "zero"
    params: dict = field(default_factory=dict)


@dataclass
class SystemConfig:
    name: str = "custom"
    dim: int = 1
    n: int = 256
    metric: MetricConfig = field(default_factory=MetricConfig)
    omega: list = field(default_factory=lambda: [0.0])
    potential: PotentialConfig = field(default_factory=PotentialConfig)


@dataclass
class SolverConfig:
    mode: str = "weak-kam"
    lambdas: list = field(default_factory=lambda: [0.2, 0.1])
    critical_value: Optional[float] = None
    sweep_tol: float = 1e-12
    max_sweeps: int = 5000
    residual_tol: float = 0.01
    sources: list = field(default_factory=lambda: [[0.0, 0.0]])


@dataclass
class FlowConfig:
    starts: list = field(default_factory=list)
    singular_starts: int = 0
    T: float = 0.2
    step: Optional[float] = None
    delta_sing: Optional[float] = None
    theta_c: Optional[float] = None
    radius: float = 3.0
    mode: str = "g1"


@dataclass
class MollifyConfig:
    ladder: list = field(default_factory=lambda: [16, 32, 64, 128])
    slack: float = 0.1
    psi_mode: str = "riemannian"
    hessian_samples: int = 500
    hessian_tol: Optional[float] = None
    psi_max_tol: Optional[float] = None


@dataclass
class OutputConfig:
    dir: str = "runs/out"


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    mollify: MollifyConfig = field(default_factory=MollifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = _build(cls, data, "config")
        validate(cfg)
        return cfg


_NESTED = {
    (ExperimentConfig, "system"): SystemConfig,
    (ExperimentConfig, "solver"): SolverConfig,
    (ExperimentConfig, "flow"): FlowConfig,
    (ExperimentConfig, "mollify"): MollifyConfig,
    (ExperimentConfig, "output"): OutputConfig,
    (SystemConfig, "metric"): MetricConfig,
    (SystemConfig, "potential"): PotentialConfig,
}


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    return cls(**kwargs)


_SYSTEM_NAMES = ("pendulum", "magnetic-1d", "magnetic-2d", "torus-distance", "custom")
_POTENTIALS = ("zero", "pendulum", "product-cosine")


def validate(cfg: ExperimentConfig) -> None:
    s = cfg.system
    if s.name not in _SYSTEM_NAMES:
        raise ConfigError(f"system.name must be one of {_SYSTEM_NAMES}")
    if s.dim not in (1, 2):
        raise ConfigError("system.dim must be 1 or 2")
    if not isinstance(s.n, int) or s.n < 8:
        raise ConfigError("system.n must be an integer >= 8")
    if len(s.omega) != s.dim:
        raise ConfigError("system.omega must have dim entries")
    if s.metric.kind not in ("flat", "conformal"):
        raise ConfigError("system.metric.kind must be 'flat' or 'conformal'")
    if s.potential.id not in _POTENTIALS:
        raise ConfigError(f"system.potential.id must be one of {_POTENTIALS}")
    if cfg.solver.mode not in ("weak-kam", "eikonal"):
        raise ConfigError("solver.mode must be 'weak-kam' or 'eikonal'")
    if cfg.solver.mode == "eikonal" and (s.dim != 2 and s.dim != 1):
        raise ConfigError("eikonal mode needs dim 1 or 2")
    for x in cfg.flow.starts:
        if len(x) != s.dim:
            raise ConfigError("flow.starts entries must have dim coordinates")
    if cfg.flow.mode not in ("g1", "g2"):
        raise ConfigError("flow.mode must be 'g1' or 'g2'")
    if cfg.flow.T <= 0:
        raise ConfigError("flow.T must be positive")
    if cfg.mollify.psi_mode not in ("riemannian", "magnetic"):
        raise ConfigError("mollify.psi_mode must be 'riemannian' or 'magnetic'")
    if any(int(m) != m or m < 1 for m in cfg.mollify.ladder):
        raise ConfigError("mollify.ladder must hold positive integers")


def load_config(path) -> ExperimentConfig:
    """Parse a YAML or JSON file into a validated :class:`ExperimentConfig`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def preset(name: str, n: Optional[int] = None) -> ExperimentConfig:
    """Ready-made configurations for the bundled test systems."""
    if name == "pendulum":
        sysc = SystemConfig("pendulum", 1, n or 4096, omega=[0.0],
                            potential=PotentialConfig("pendulum"))
        cfg = ExperimentConfig(sysc, flow=FlowConfig(starts=[[0.5]]))
    elif name == "magnetic-1d":
        sysc = SystemConfig("magnetic-1d", 1, n or 1024, omega=[1.0])
        cfg = ExperimentConfig(sysc)
    elif name == "magnetic-2d":
        sysc = SystemConfig("magnetic-2d", 2, n or 256, omega=[0.3, 0.0],
                            potential=PotentialConfig("product-cosine", {"amplitude": 0.5}))
        cfg = ExperimentConfig(sysc, flow=FlowConfig(singular_starts=8),
                               mollify=MollifyConfig(psi_mode="magnetic"))
    elif name == "torus-distance":
        sysc = SystemConfig("torus-distance", 2, n or 256, omega=[0.0, 0.0])
        cfg = ExperimentConfig(sysc, SolverConfig(mode="eikonal", sources=[[0.0, 0.0]]),
                               FlowConfig(starts=[[0.5, 0.25]]))
    else:
        raise ConfigError(f"unknown preset {name!r}")
    validate(cfg)
    return cfg


def build_system(sc: SystemConfig) -> MagneticSystem:
    """Grid fields for a :class:`SystemConfig`."""
    grid = PeriodicGrid(sc.dim, sc.n)
    xy = grid.coords()
    params = dict(sc.potential.params)
    if sc.potential.id == "zero":
        V = np.zeros(grid.shape)
    elif sc.potential.id == "pendulum":
        V = np.cos(2.0 * np.pi * xy[..., 0]) - 1.0
        if sc.dim == 2:
            V = V + np.cos(2.0 * np.pi * xy[..., 1]) - 1.0
    else:
        A = float(params.get("amplitude", 0.5))
        V = -A * np.prod(1.0 - np.cos(2.0 * np.pi * xy), axis=-1)
    if sc.metric.kind == "flat":
        metric = MetricField.flat(grid)
    else:
        factor = np.exp(sc.metric.amplitude * np.prod(np.sin(2.0 * np.pi * xy), axis=-1))
        metric = MetricField.conformal_to_flat(grid, factor)
    return MagneticSystem(grid, metric, OneFormField.constant(grid, sc.omega),
                          PotentialField(grid, V), sc.name)
