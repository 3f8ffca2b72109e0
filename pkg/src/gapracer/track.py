"""Closed-track geometry and Frenet/Cartesian conversions.

A track is loaded from a CSV of waypoints (``x,y,w_left,w_right,d_rl``),
resampled onto a uniform arc-length grid, and wrapped with periodic
interpolation for every per-arc-length field.  The lateral sign convention
is left-positive: the left boundary offset is positive, the right one
negative, and a point left of the centerline has ``d > 0``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

TWO_PI = 2.0 * math.pi

# Maximum gap between the last and first waypoint for a loop to count as
# closed; files must repeat the first waypoint (within this) as a final row.
CLOSURE_TOL = 0.5


class TrackFormatError(ValueError):
    """Malformed track file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(ValueError):
    """Track or query geometry is invalid (open loop, fold-over, ...)."""


class OffTrackError(ValueError):
    """Queried point lies outside the extended boundary band."""


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = -((-np.asarray(a) + math.pi) % TWO_PI - math.pi)
    return float(w) if np.isscalar(a) or np.ndim(a) == 0 else w


@dataclass
class FrenetState:
    """Track-relative pose: arc length, lateral offset, heading error."""

    s: float
    d: float
    dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.d, self.dtheta])


class TrackMap:
    """Immutable closed track.

    The centerline is a periodic cubic spline through the waypoints,
    parameterized by cumulative chord length; the uniform grid holds
    sampled positions (for coarse projection scans) and the per-``s``
    scalar fields.  All accessors accept scalars or arrays and wrap
    queries modulo the track length.
    """

    def __init__(self, s_nodes, x_nodes, y_nodes, s_grid, d_left, d_right,
                 d_raceline, length: float):
        self.length = float(length)
        self.s_grid = np.asarray(s_grid, dtype=float)
        self.d_left = np.asarray(d_left, dtype=float)
        self.d_right = np.asarray(d_right, dtype=float)
        self.d_raceline = np.asarray(d_raceline, dtype=float)
        if np.any(self.d_right >= self.d_left):
            raise GeometryError("right boundary must lie below left boundary")
        if np.any((self.d_raceline < self.d_right)
                  | (self.d_raceline > self.d_left)):
            raise GeometryError("raceline offset leaves the track")
        self._spline_x = CubicSpline(s_nodes, x_nodes, bc_type="periodic")
        self._spline_y = CubicSpline(s_nodes, y_nodes, bc_type="periodic")
        self.x = self._spline_x(self.s_grid)
        self.y = self._spline_y(self.s_grid)
        dx = self._spline_x(self.s_grid, 1)
        dy = self._spline_y(self.s_grid, 1)
        ddx = self._spline_x(self.s_grid, 2)
        ddy = self._spline_y(self.s_grid, 2)
        self.curvature = (dx * ddy - dy * ddx) / np.hypot(dx, dy) ** 3

    # -- periodic field access ------------------------------------------

    def wrap_s(self, s):
        return np.mod(s, self.length)

    def _interp(self, field, s):
        return np.interp(self.wrap_s(s), self.s_grid, field,
                         period=self.length)

    def left_bound(self, s):
        return self._interp(self.d_left, s)

    def right_bound(self, s):
        return self._interp(self.d_right, s)

    def raceline_offset(self, s):
        return self._interp(self.d_raceline, s)

    def curvature_at(self, s):
        return self._interp(self.curvature, s)

    def position(self, s):
        sw = self.wrap_s(s)
        return self._spline_x(sw), self._spline_y(sw)

    def tangent(self, s):
        """Unit tangent of the centerline."""
        sw = self.wrap_s(s)
        tx = self._spline_x(sw, 1)
        ty = self._spline_y(sw, 1)
        n = np.hypot(tx, ty)
        return tx / n, ty / n

    def heading(self, s):
        tx, ty = self.tangent(s)
        return np.arctan2(ty, tx)

    # -- projection -------------------------------------------------------

    def project(self, x: float, y: float) -> float:
        """Arc length of the nearest centerline point (coarse grid scan
        followed by Newton refinement of the foot-point condition)."""
        d2 = (self.x - x) ** 2 + (self.y - y) ** 2
        s = float(self.s_grid[int(np.argmin(d2))])
        ds_max = 2.0 * (self.s_grid[1] - self.s_grid[0])
        for _ in range(30):
            sw = self.wrap_s(s)
            px, py = self._spline_x(sw), self._spline_y(sw)
            tx, ty = self._spline_x(sw, 1), self._spline_y(sw, 1)
            ax, ay = self._spline_x(sw, 2), self._spline_y(sw, 2)
            rx, ry = px - x, py - y
            g = rx * tx + ry * ty
            gp = tx * tx + ty * ty + rx * ax + ry * ay
            if gp <= 0.0:
                gp = tx * tx + ty * ty
            step = -g / gp
            step = min(max(step, -ds_max), ds_max)
            s += step
            if abs(step) < 1e-12:
                break
        return self.wrap_s(s)


def to_frenet(track: TrackMap, x: float, y: float, theta: float,
              band_margin: float = 0.35) -> FrenetState:
    """Project a Cartesian pose onto the track.

    Raises :class:`OffTrackError` when the point lies more than
    ``band_margin`` outside the boundaries.
    """
    s = track.project(x, y)
    px, py = track.position(s)
    tx, ty = track.tangent(s)
    d = float(tx * (y - py) - ty * (x - px))
    if d > track.left_bound(s) + band_margin or \
            d < track.right_bound(s) - band_margin:
        raise OffTrackError(
            f"point ({x:.3f}, {y:.3f}) is {d:+.3f} m from the centerline, "
            "outside the boundary band")
    dtheta = wrap_angle(theta - float(track.heading(s)))
    return FrenetState(s=float(s), d=d, dtheta=float(dtheta))


def to_cartesian(track: TrackMap, f: FrenetState) -> tuple[float, float, float]:
    """Map a Frenet state back to a Cartesian pose (inverse of to_frenet)."""
    kappa = float(track.curvature_at(f.s))
    if kappa != 0.0 and abs(f.d) >= 1.0 / abs(kappa):
        raise GeometryError(
            f"lateral offset {f.d:.3f} m folds over at curvature "
            f"{kappa:.3f} 1/m")
    px, py = track.position(f.s)
    tx, ty = track.tangent(f.s)
    x = float(px) - f.d * float(ty)
    y = float(py) + f.d * float(tx)
    theta = wrap_angle(math.atan2(float(ty), float(tx)) + f.dtheta)
    return x, y, float(theta)


# -- construction ---------------------------------------------------------

def from_waypoints(x, y, w_left, w_right, d_raceline,
                   ds: float = 0.05) -> TrackMap:
    """Build a TrackMap from closed-loop waypoints.

    The last waypoint must repeat the first within ``CLOSURE_TOL``; the
    duplicate row is dropped and the loop closes back to waypoint 0.
    ``s`` is the cumulative chord length of the waypoint polyline.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w_left = np.asarray(w_left, dtype=float)
    w_right = np.asarray(w_right, dtype=float)
    d_raceline = np.asarray(d_raceline, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D arrays")
    gap = math.hypot(x[-1] - x[0], y[-1] - y[0])
    if gap > CLOSURE_TOL:
        raise GeometryError(
            f"open loop: endpoint gap {gap:.3f} m exceeds {CLOSURE_TOL} m")
    if gap < 1e-9:  # explicit closure row; drop it
        x, y = x[:-1], y[:-1]
        w_left, w_right = w_left[:-1], w_right[:-1]
        d_raceline = d_raceline[:-1]
    if len(x) < 3:
        raise GeometryError("need at least 3 distinct waypoints")
    if np.any(w_left <= 0.0) or np.any(w_right <= 0.0):
        raise ValueError("track widths must be positive")

    seg = np.hypot(np.diff(x, append=x[:1]), np.diff(y, append=y[:1]))
    if np.any(seg < 1e-9):
        raise GeometryError("duplicate consecutive waypoint")
    s_nodes = np.concatenate(([0.0], np.cumsum(seg)))  # len n+1, last = L
    length = float(s_nodes[-1])

    n_grid = max(int(round(length / ds)), 8)
    s_grid = np.arange(n_grid) * (length / n_grid)

    def cyc(vals):
        return np.interp(s_grid, s_nodes, np.append(vals, vals[0]))

    return TrackMap(
        s_nodes=s_nodes, x_nodes=np.append(x, x[0]),
        y_nodes=np.append(y, y[0]), s_grid=s_grid,
        d_left=cyc(w_left), d_right=cyc(-w_right),
        d_raceline=cyc(d_raceline), length=length)


EXPECTED_HEADER = ["x", "y", "w_left", "w_right", "d_rl"]


def load_track(source: str | Path | io.TextIOBase,
               ds: float = 0.05) -> TrackMap:
    """Load a track from a CSV file (header ``x,y,w_left,w_right,d_rl``)."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    rows = [(i + 1, ln.strip()) for i, ln in enumerate(lines)
            if ln.strip() and not ln.strip().startswith("#")]
    if not rows:
        raise TrackFormatError("empty track file")
    header_line, header = rows[0]
    if [c.strip() for c in header.split(",")] != EXPECTED_HEADER:
        raise TrackFormatError(
            f"expected header {','.join(EXPECTED_HEADER)!r}", header_line)
    data = []
    for lineno, ln in rows[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise TrackFormatError(
                f"expected 5 comma-separated values, got {len(parts)}",
                lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise TrackFormatError(f"non-numeric value in {ln!r}", lineno)
        if not all(math.isfinite(v) for v in vals):
            raise TrackFormatError("non-finite value", lineno)
        data.append((lineno, vals))
    if len(data) < 3:
        raise TrackFormatError("need at least 3 waypoints")
    arr = np.array([v for _, v in data])
    # Duplicate interior waypoints break the arc-length parameterization;
    # report them with their line number.  A final closure row is fine.
    dx = np.hypot(np.diff(arr[:, 0]), np.diff(arr[:, 1]))
    for i, d in enumerate(dx):
        if d < 1e-9 and i != len(dx) - 1:
            raise TrackFormatError("duplicate waypoint", data[i + 1][0])
    return from_waypoints(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                          arr[:, 4], ds=ds)


def write_track_csv(path: str | Path, x, y, w_left, w_right, d_rl) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(EXPECTED_HEADER) + "\n")
        for row in zip(x, y, w_left, w_right, d_rl):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# -- built-in default course ----------------------------------------------

def default_track(ds: float = 0.05, half_width: float = 1.2) -> TrackMap:
    """Rounded-rectangle course (~50 m) with a corner-cutting raceline."""
    lx, ly, r = 18.0, 10.0, 3.5
    pts = []

    def arc(cx, cy, a0, a1, n=26):
        for a in np.linspace(a0, a1, n, endpoint=False):
            pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))

    n_straight = 22
    for t in np.linspace(r, lx - r, n_straight, endpoint=False):
        pts.append((t, 0.0))
    arc(lx - r, r, -math.pi / 2, 0.0)
    for t in np.linspace(r, ly - r, n_straight // 2, endpoint=False):
        pts.append((lx, t))
    arc(lx - r, ly - r, 0.0, math.pi / 2)
    for t in np.linspace(lx - r, r, n_straight, endpoint=False):
        pts.append((t, ly))
    arc(r, ly - r, math.pi / 2, math.pi)
    for t in np.linspace(ly - r, r, n_straight // 2, endpoint=False):
        pts.append((0.0, t))
    arc(r, r, math.pi, 1.5 * math.pi)
    pts.append(pts[0])

    xy = np.array(pts)
    n = len(xy)
    # Discrete turn curvature per waypoint (signed Menger through each
    # waypoint triple), used only to shape the corner-cutting raceline.
    wx, wy = xy[:-1, 0], xy[:-1, 1]
    x1, y1 = np.roll(wx, 1), np.roll(wy, 1)
    x3, y3 = np.roll(wx, -1), np.roll(wy, -1)
    cross = (wx - x1) * (y3 - y1) - (wy - y1) * (x3 - x1)
    denom = (np.hypot(wx - x1, wy - y1) * np.hypot(x3 - wx, y3 - wy)
             * np.hypot(x3 - x1, y3 - y1))
    kappa = 2.0 * cross / np.where(denom == 0.0, np.inf, denom)
    d_rl = 0.45 * kappa / max(np.max(np.abs(kappa)), 1e-9)
    win = 9
    ker = np.ones(win) / win
    d_rl = np.convolve(np.concatenate([d_rl[-win:], d_rl, d_rl[:win]]),
                       ker, mode="same")[win:-win]
    d_rl = np.append(d_rl, d_rl[0])
    w = np.full(n, half_width)
    return from_waypoints(xy[:, 0], xy[:, 1], w, w, d_rl, ds=ds)


def raceline_speed_profile(track: TrackMap, v_cap: float = 5.0,
                           a_lat: float = 3.0,
                           a_lon: float = 3.0) -> np.ndarray:
    """Curvature-limited speed per grid node with cyclic accel smoothing."""
    kappa = np.abs(track.curvature)
    v = np.minimum(v_cap, np.sqrt(a_lat / np.maximum(kappa, 1e-6)))
    ds = track.length / len(track.s_grid)
    n = len(v)
    # Forward (accel) and backward (braking) passes, run twice to settle
    # the wrap-around.
    for _ in range(2):
        for i in range(n):
            j = (i + 1) % n
            v[j] = min(v[j], math.sqrt(v[i] ** 2 + 2 * a_lon * ds))
        for i in range(n - 1, -1, -1):
            j = (i - 1) % n
            v[j] = min(v[j], math.sqrt(v[i] ** 2 + 2 * a_lon * ds))
    return v
