"""Configuration tree for the planner, solver, and simulator.

Every tunable lives in a nested dataclass with YAML round-trip support so a
single config file (or the built-in defaults) fully determines a run.
Unknown keys in a config file are rejected rather than silently ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class TrackConfig:
    resample_ds: float = 0.05  # uniform arc-length grid spacing [m]
    band_margin: float = 0.35  # tolerated excursion beyond boundaries [m]


@dataclass
class VehicleConfig:
    width: float = 0.30       # [m]
    length: float = 0.50      # [m]
    wheelbase: float = 0.33   # [m]
    delta_max: float = 0.40   # steering limit [rad]
    v_max: float = 7.0        # actuation velocity limit [m/s]
    tau_v: float = 0.15       # first-order speed-lag time constant [s]


@dataclass
class SgpConfig:
    m_inducing: int = 30
    buffer_size: int = 400    # detection ring-buffer capacity per target
    refit_every: int = 20     # new samples between refits
    lengthscale_d: float = 5.0    # [m]
    signal_std_d: float = 0.5     # [m]
    lengthscale_v: float = 8.0    # [m]
    signal_std_v: float = 1.0     # [m/s]
    noise_std_d: float = 0.05     # detector lateral noise [m]
    noise_std_v: float = 0.05     # detector speed noise [m/s]


@dataclass
class CorridorConfig:
    dt: float = 0.05            # forward-simulation step [s]
    t_horizon: float = 4.0      # forward-simulation horizon [s]
    l_front: float = 1.2        # interaction window ahead of ego [m]
    l_rear: float = 0.6         # interaction window behind ego [m]
    dilation_window: float = 1.0  # sliding max/min window [m]
    k_sigma: float = 2.0        # variance inflation gain (~95% confidence)
    w_margin: float = 0.20      # base evasion clearance [m]
    w_max: float = 1.0          # cap on effective corridor width [m]
    v_d_thresh: float = 0.3     # lateral-speed threshold for crossing [m/s]
    eta: float = 0.5            # margin shrink factor during crossings
    a_min: float = 0.0          # ego accel at v_max [m/s^2]
    a_max: float = 4.0          # ego accel at standstill [m/s^2]


@dataclass
class GapConfig:
    n_samples: int = 40         # longitudinal samples across the window union
    eps_side: float = 0.05      # wall clearance in side-gap widths [m]
    eps_mid: float = 0.05       # per-side clearance in middle-gap widths [m]
    w_min_extra: float = 0.10   # passable threshold = vehicle width + this [m]
    cost_width: float = 1.0     # weight on 1/min-width
    cost_raceline: float = 0.5  # weight on |center - raceline|
    cost_switch: float = 1.0    # weight on the switching penalty
    switch_same_side: float = 0.3       # penalty for switching on the same side
    switch_opposite_extra: float = 0.7  # extra penalty for crossing sides
    hysteresis: float = 0.15    # required relative cost drop before a switch
    dwell: float = 0.6          # minimum hold time between switches [s]
    exit_margin: float = 4.0    # merge-back length after the last window [m]
    bezier_gamma1: float = 0.35  # entry control-point longitudinal fraction
    bezier_gamma2: float = 0.88  # entry control-point longitudinal fraction


@dataclass
class MpcConfig:
    horizon: int = 20
    dt: float = 0.05            # prediction step [s]
    q_progress: float = 1.0     # state weight on arc-length error
    q_lateral: float = 10.0     # state weight on lateral error
    q_heading: float = 2.0      # state weight on heading error
    r_speed: float = 0.5        # input weight on speed deviation
    r_steer: float = 2.0        # input weight on steering deviation
    v_floor: float = 0.1        # flatness singularity guard [m/s]


@dataclass
class SolverConfig:
    h: float = 1.0              # pseudo-time Euler step (relative)
    beta: float | None = None   # gain; None = 0.5/||G|| auto-scaling
    k_max: int = 200            # hard iteration cap
    tol: float = 1.0e-6         # residual termination threshold
    eps1: float | None = None   # Hessian regularizer; None = trace-scaled
    eps2: float = 1.0e-8        # equality Schur-complement regularizer
    polish: bool = True         # one active-set refinement solve at the end
    kernel: str = "auto"        # auto | compiled | python
    dump_dir: str | None = None  # where to dump problems on fallback


@dataclass
class SimConfig:
    dt: float = 0.01            # physics step [s]
    planner_period: float = 0.05  # replan interval [s] (20 Hz)
    timeout: float = 120.0      # trial wall limit in sim time [s]
    stop_overtakes: int = 5     # successful overtakes ending a trial
    overtake_hold: float = 2.0  # time ahead required to confirm a pass [s]
    engage_range: float = 8.0   # gap at which an attempt starts [m]
    detection_noise_pos: float = 0.02  # [m]
    detection_noise_vel: float = 0.05  # [m/s]
    tracking: str = "mpc"       # mpc | pure_pursuit
    shadow_mode: bool = False   # also run the reference solver on each QP
    ego_v_cap: float = 5.0      # ego straight-line speed cap [m/s]
    a_lat_max: float = 3.0      # cornering accel for the speed profile [m/s^2]
    a_lon_max: float = 3.0      # accel limit for the speed profile [m/s^2]
    merge_tol: float = 0.05     # |d - d_raceline| counting as merged [m]


@dataclass
class Config:
    track: TrackConfig = field(default_factory=TrackConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    sgp: SgpConfig = field(default_factory=SgpConfig)
    corridor: CorridorConfig = field(default_factory=CorridorConfig)
    gaps: GapConfig = field(default_factory=GapConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _merge_section(obj, data: dict, path: str) -> None:
    valid = {f.name for f in dataclasses.fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise KeyError(f"unknown config key {path}.{key}")
        setattr(obj, key, value)


def config_from_dict(data: dict) -> Config:
    cfg = Config()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for name, value in (data or {}).items():
        if name not in sections:
            raise KeyError(f"unknown config section '{name}'")
        if not isinstance(value, dict):
            raise TypeError(f"config section '{name}' must be a mapping")
        _merge_section(getattr(cfg, name), value, name)
    return cfg


def load_config(path: str | Path) -> Config:
    """Load a YAML config file; missing keys fall back to defaults."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)
