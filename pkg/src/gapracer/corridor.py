"""Spatiotemporal occupancy corridors from opponent predictions.

Forward-simulates ego and opponent along the track, records the opponent's
predicted lateral mean/variance at the ego arrival coordinate while the
longitudinal gap is inside the interaction window, and turns the resulting
occupancy profile into variance-inflated, dilated lateral bounds.  All
functions are pure given immutable fitted models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import CorridorConfig
from .sgp import SgpModel


@dataclass
class EgoMotionModel:
    """Longitudinal forward-simulation parameters for the ego vehicle."""

    v_ego: float
    a_min: float = 0.0
    a_max: float = 4.0
    v_max: float = 7.0
    t_horizon: float = 4.0
    dt: float = 0.05
    l_front: float = 1.2
    l_rear: float = 0.6

    def __post_init__(self):
        if self.dt <= 0 or self.t_horizon < self.dt:
            raise ValueError("need dt > 0 and t_horizon >= dt")
        if self.a_min > self.a_max:
            raise ValueError("a_min must not exceed a_max")
        if self.l_front <= 0 or self.l_rear <= 0:
            raise ValueError("interaction lengths must be positive")

    def accel(self, v: float) -> float:
        """Accel scaled linearly from a_max at standstill to a_min at
        v_max."""
        frac = min(max(v / self.v_max, 0.0), 1.0) if self.v_max > 0 else 1.0
        return self.a_max - (self.a_max - self.a_min) * frac


@dataclass
class OccupancyProfile:
    """Ego-s-parameterized lateral occupancy of one opponent."""

    opponent_id: int
    s_ego: np.ndarray   # strictly increasing, unwrapped ego arc length
    mu_d: np.ndarray
    var_d: np.ndarray
    t: np.ndarray       # sample times within the horizon
    dropped: int = 0    # samples discarded (non-finite prediction)

    @property
    def empty(self) -> bool:
        return len(self.s_ego) == 0

    @property
    def window(self) -> tuple[float, float]:
        if self.empty:
            raise ValueError("empty profile has no interaction window")
        return float(self.s_ego[0]), float(self.s_ego[-1])


@dataclass
class OccupancyCorridor:
    """Inflated and dilated lateral bounds along an occupancy profile."""

    profile: OccupancyProfile
    w_eff: np.ndarray
    d_left_raw: np.ndarray    # inflated bounds before dilation
    d_right_raw: np.ndarray
    d_left: np.ndarray        # dilated bounds (what the planner queries)
    d_right: np.ndarray
    crossing: bool
    v_d_mean: float
    _window: float = 1.0      # dilation window the bounds were built with

    @property
    def window(self) -> tuple[float, float]:
        return self.profile.window

    def bounds_at(self, s):
        """Interpolated dilated bounds; only valid inside the window."""
        s_arr = self.profile.s_ego
        return (np.interp(s, s_arr, self.d_left),
                np.interp(s, s_arr, self.d_right))


def forward_simulate(ego: EgoMotionModel, s_ego0: float,
                     d_model: SgpModel, v_model: SgpModel,
                     s_opp0: float,
                     track_length: float | None = None) -> OccupancyProfile:
    """Integrate ego and opponent forward; sample the occupancy profile
    while the signed gap lies inside (-l_rear, l_front).

    ``s_ego`` in the result is unwrapped (monotone) so downstream interval
    logic never sees a seam; model queries wrap internally.
    """
    if not (d_model.fitted and v_model.fitted):
        raise ValueError("opponent models must be fitted")
    n_steps = int(round(ego.t_horizon / ego.dt))
    s_e, v_e = float(s_ego0), float(ego.v_ego)
    s_o = float(s_opp0)
    times, egos, opps = [], [], []
    dropped = 0
    for j in range(n_steps + 1):
        t = j * ego.dt
        gap = s_o - s_e
        if track_length is not None:
            gap = (gap + 0.5 * track_length) % track_length \
                - 0.5 * track_length
        if -ego.l_rear < gap < ego.l_front:
            times.append(t)
            egos.append(s_e)
            opps.append(s_o)
        if j == n_steps:
            break
        a = ego.accel(v_e)
        s_e += v_e * ego.dt + 0.5 * a * ego.dt ** 2
        v_e = min(max(v_e + a * ego.dt, 0.0), ego.v_max)
        mu_v = v_model.predict_mean(s_o)
        if not math.isfinite(mu_v):
            dropped += 1
            mu_v = 0.0
        s_o += max(mu_v, 0.0) * ego.dt

    if not times:
        return OccupancyProfile(0, np.empty(0), np.empty(0), np.empty(0),
                                np.empty(0), dropped)
    mu_d, var_d = d_model.predict(np.asarray(opps))
    keep = np.isfinite(mu_d) & np.isfinite(var_d)
    dropped += int(np.sum(~keep))
    s_arr = np.asarray(egos)[keep]
    t_arr = np.asarray(times)[keep]
    mu_d, var_d = mu_d[keep], var_d[keep]
    # Strictly increasing ego coordinate: drop stalled samples.
    if len(s_arr):
        inc = np.concatenate(([True], np.diff(s_arr) > 1e-12))
        s_arr, t_arr = s_arr[inc], t_arr[inc]
        mu_d, var_d = mu_d[inc], var_d[inc]
    return OccupancyProfile(0, s_arr, mu_d, var_d, t_arr, dropped)


def _sliding_extreme(s: np.ndarray, values: np.ndarray, window: float,
                     mode: str) -> np.ndarray:
    """Exact sliding max/min over [s_k - window/2, s_k + window/2] using a
    monotonic deque; O(n) for possibly non-uniform sample spacing."""
    n = len(s)
    out = np.empty(n)
    half = 0.5 * window
    sign = 1.0 if mode == "max" else -1.0
    vals = sign * values
    deque_idx: list[int] = []
    right = 0
    left = 0
    for k in range(n):
        while right < n and s[right] <= s[k] + half + 1e-12:
            while deque_idx and vals[deque_idx[-1]] <= vals[right]:
                deque_idx.pop()
            deque_idx.append(right)
            right += 1
        while deque_idx and s[deque_idx[0]] < s[k] - half - 1e-12:
            deque_idx.pop(0)
        left = deque_idx[0]
        out[k] = vals[left]
    return sign * out


def dilate(corridor: OccupancyCorridor,
           window: float | None = None) -> OccupancyCorridor:
    """Recompute the dilated bounds of a corridor from its raw bounds.

    The operator acts on the raw (pre-dilation) bounds the corridor
    carries, so applying it again is a no-op: dilation never compounds.
    ``window`` defaults to the span implied by the existing bounds' source
    config; pass it explicitly to re-dilate with a different window.
    """
    w = corridor._window if window is None else float(window)
    return OccupancyCorridor(
        profile=corridor.profile, w_eff=corridor.w_eff,
        d_left_raw=corridor.d_left_raw, d_right_raw=corridor.d_right_raw,
        d_left=_sliding_extreme(corridor.profile.s_ego,
                                corridor.d_left_raw, w, "max"),
        d_right=_sliding_extreme(corridor.profile.s_ego,
                                 corridor.d_right_raw, w, "min"),
        crossing=corridor.crossing, v_d_mean=corridor.v_d_mean,
        _window=w)


def build_corridor(profile: OccupancyProfile, cfg: CorridorConfig,
                   w_car: float) -> OccupancyCorridor:
    """Inflate the profile into lateral bounds, dilate them, and apply the
    crossing-maneuver bypass when the opponent is changing lanes fast."""
    if profile.empty:
        raise ValueError("cannot build a corridor from an empty profile")

    dt_window = float(profile.t[-1] - profile.t[0])
    if dt_window > 1e-9:
        v_d_mean = float((profile.mu_d[-1] - profile.mu_d[0]) / dt_window)
    else:
        v_d_mean = 0.0
    crossing = abs(v_d_mean) > cfg.v_d_thresh

    if crossing:
        # Rapid lane change: a diagonal variance-inflated wall would block
        # lateral gaps that are physically fine, so use a deterministic
        # tight bound instead.
        w_eff = np.full(len(profile.s_ego),
                        w_car + cfg.eta * cfg.w_margin)
    else:
        w_eff = np.minimum(
            w_car + cfg.w_margin + cfg.k_sigma * np.sqrt(profile.var_d),
            cfg.w_max)
    d_left_raw = profile.mu_d + 0.5 * w_eff
    d_right_raw = profile.mu_d - 0.5 * w_eff
    raw = OccupancyCorridor(
        profile=profile, w_eff=w_eff,
        d_left_raw=d_left_raw, d_right_raw=d_right_raw,
        d_left=d_left_raw, d_right=d_right_raw,
        crossing=crossing, v_d_mean=v_d_mean,
        _window=cfg.dilation_window)
    return dilate(raw)
