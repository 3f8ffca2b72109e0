"""Sparse Gaussian-process regression over arc length.

Each tracked opponent gets two independent models: lateral offset ``d(s)``
and speed ``v(s)``.  The sparse approximation keeps ``M`` fixed inducing
points on a uniform grid, giving an O(N*M^2) fit and O(M^2)-per-query
prediction with calibrated variance.  An exact dense GP is provided as the
reference implementation for tests and benchmarks.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .config import SgpConfig

_JITTER = 1e-12    # initial relative jitter; escalated x100 until PD
_JITTER_MAX = 1e-4
_VAR_FLOOR = 1e-12


def _robust_cholesky(mat: np.ndarray, scale: float) -> np.ndarray:
    """Lower Cholesky with deterministic jitter escalation."""
    jitter = _JITTER
    while True:
        try:
            return np.linalg.cholesky(
                mat + (jitter * scale) * np.eye(len(mat)))
        except np.linalg.LinAlgError:
            if jitter >= _JITTER_MAX:
                raise
            jitter *= 100.0


@dataclass
class Observation:
    """One detection sample: arc length, measured value, and noise level."""

    s: float
    value: float
    noise_std: float

    def __post_init__(self):
        if self.noise_std <= 0.0:
            raise ValueError("noise_std must be positive")


def _rbf(a, b, signal_var: float, lengthscale: float):
    diff = np.subtract.outer(np.asarray(a, float), np.asarray(b, float))
    return signal_var * np.exp(-0.5 * (diff / lengthscale) ** 2)


def _wrap_and_mirror(s, period: float | None, band: float):
    """Wrap sample locations onto [0, period) and mirror a band across the
    seam so prediction stays continuous there."""
    s = np.asarray(s, dtype=float)
    if period is None:
        return s, slice(None)
    sw = np.mod(s, period)
    band = min(band, 0.5 * period)
    low = sw < band
    high = sw > period - band
    ghosts = np.concatenate([sw, sw[low] + period, sw[high] - period])
    index = np.concatenate([np.arange(len(sw)),
                            np.flatnonzero(low), np.flatnonzero(high)])
    return ghosts, index


class SgpModel:
    """Fitted sparse GP (fixed inducing inputs, deterministic fit).

    Prediction uses cached factorizations; a fitted model is immutable and
    safe to share across threads.
    """

    def __init__(self, kind: str, signal_std: float, lengthscale: float,
                 period: float | None = None):
        if signal_std <= 0 or lengthscale <= 0:
            raise ValueError("kernel hyperparameters must be positive")
        self.kind = kind
        self.signal_var = signal_std ** 2
        self.lengthscale = lengthscale
        self.period = period
        self.noise_var = float("nan")
        self.inducing: np.ndarray | None = None
        self.degenerate = False
        # Stable parameterization: with L = chol(Kuu) and
        # B = L^-1 Kuf Lam^-1/2, the posterior only needs the
        # well-conditioned A = I + B B^T rather than Kuu + Kuf Lam^-1 Kfu.
        self._alpha = None       # mean weights: K*u @ alpha
        self._chol_kuu = None
        self._chol_a = None

    @property
    def fitted(self) -> bool:
        return self._alpha is not None

    def _kq(self, s):
        """Kernel block between query points and inducing points, with
        periodic queries folded onto the fitted window."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.period is not None:
            s = np.mod(s, self.period)
            # Evaluate against the inducing set at the three unwrapped
            # images and keep the dominant (nearest) one per pair.
            d0 = np.subtract.outer(s, self.inducing)
            d = np.abs(np.stack([d0, d0 + self.period, d0 - self.period]))
            dmin = d.min(axis=0)
        else:
            dmin = np.abs(np.subtract.outer(s, self.inducing))
        return self.signal_var * np.exp(-0.5 * (dmin / self.lengthscale) ** 2)

    def predict(self, query_s) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (latent) variance at the query arc lengths."""
        if not self.fitted:
            raise ValueError("model has not been fitted")
        scalar = np.ndim(query_s) == 0
        ksu = self._kq(query_s)
        mean = ksu @ self._alpha
        a = solve_triangular(self._chol_kuu, ksu.T, lower=True)
        b = solve_triangular(self._chol_a, a, lower=True)
        var = self.signal_var - np.sum(a * a, axis=0) + np.sum(b * b, axis=0)
        var = np.maximum(var, 0.0)
        if scalar:
            return float(mean[0]), float(var[0])
        return mean, var

    def predict_mean(self, query_s):
        """Mean-only fast path (O(M) per query after the cached fit)."""
        if not self.fitted:
            raise ValueError("model has not been fitted")
        scalar = np.ndim(query_s) == 0
        mean = self._kq(query_s) @ self._alpha
        return float(mean[0]) if scalar else mean


def fit(observations: list[Observation], m_inducing: int,
        kind: str = "lateral", *, signal_std: float = 0.5,
        lengthscale: float = 5.0, period: float | None = None,
        inducing: np.ndarray | None = None) -> SgpModel:
    """Fit a sparse GP to detection samples.

    Inducing inputs default to a uniform grid spanning the observation
    range (``m_inducing`` points, clamped to the sample count); pass
    ``inducing`` to place them explicitly.
    """
    if m_inducing <= 0:
        raise ValueError("m_inducing must be >= 1")
    if not observations:
        raise ValueError("observations must be nonempty")
    model = SgpModel(kind, signal_std, lengthscale, period)

    s_raw = np.array([o.s for o in observations])
    y_raw = np.array([o.value for o in observations])
    noise_raw = np.array([o.noise_std for o in observations])
    s_all, idx = _wrap_and_mirror(s_raw, period, 3.0 * lengthscale)
    y_all = y_raw[idx] if period is not None else y_raw
    noise_all = noise_raw[idx] if period is not None else noise_raw

    if inducing is None:
        lo, hi = float(np.min(s_all)), float(np.max(s_all))
        if hi - lo < 1e-9:
            # Degenerate cluster: widen an epsilon window so the grid and
            # the kernel algebra stay well posed.
            half = 0.5 * lengthscale
            lo, hi = lo - half, hi + half
            model.degenerate = True
        m_eff = min(m_inducing, len(observations))
        if m_eff == 1:
            z = np.array([0.5 * (lo + hi)])
        else:
            z = np.linspace(lo, hi, m_eff)
    else:
        z = np.asarray(inducing, dtype=float)
        if z.ndim != 1 or len(z) == 0:
            raise ValueError("inducing must be a nonempty 1-D array")
    model.inducing = z
    model.noise_var = float(np.median(noise_all) ** 2)

    kuu = _rbf(z, z, model.signal_var, lengthscale)
    kuf = _rbf(z, s_all, model.signal_var, lengthscale)
    chol_kuu = _robust_cholesky(kuu, model.signal_var)
    v = solve_triangular(chol_kuu, kuf, lower=True)
    q_diag = np.sum(v * v, axis=0)
    lam = np.maximum(model.signal_var - q_diag, 0.0) + noise_all ** 2
    lam = np.maximum(lam, _VAR_FLOOR)

    b_mat = v / np.sqrt(lam)
    a_mat = np.eye(len(z)) + b_mat @ b_mat.T
    chol_a = np.linalg.cholesky(a_mat)
    r = v @ (y_all / lam)
    u = cho_solve((chol_a, True), r)
    model._alpha = solve_triangular(chol_kuu, u, lower=True, trans="T")
    model._chol_kuu = chol_kuu
    model._chol_a = chol_a
    return model


def predict(model: SgpModel, query_s):
    """Module-level alias of :meth:`SgpModel.predict`."""
    return model.predict(query_s)


class ExactGp:
    """Dense GP used as the correctness oracle and benchmark baseline."""

    def __init__(self, s, y, noise_std, *, signal_std: float,
                 lengthscale: float):
        self.s = np.asarray(s, dtype=float)
        self.signal_var = signal_std ** 2
        self.lengthscale = lengthscale
        k = _rbf(self.s, self.s, self.signal_var, lengthscale)
        k[np.diag_indices_from(k)] += np.asarray(noise_std, float) ** 2
        self._chol = cho_factor(k, lower=True)
        self._alpha = cho_solve(self._chol, np.asarray(y, dtype=float))

    def predict(self, query_s):
        ks = _rbf(np.atleast_1d(query_s), self.s, self.signal_var,
                  self.lengthscale)
        mean = ks @ self._alpha
        w = solve_triangular(self._chol[0], ks.T, lower=True)
        var = np.maximum(self.signal_var - np.sum(w * w, axis=0), 0.0)
        if np.ndim(query_s) == 0:
            return float(mean[0]), float(var[0])
        return mean, var


@dataclass
class OpponentTrack:
    """Per-opponent detection buffers plus the current fitted models.

    Mutation is single-writer: only the owning simulation loop calls
    :func:`update_opponent`.
    """

    opponent_id: int
    config: SgpConfig = field(default_factory=SgpConfig)
    period: float | None = None
    d_observations: deque = field(init=False)
    v_observations: deque = field(init=False)
    current: tuple[float, float, float] | None = None  # (s, d, v)
    d_model: SgpModel | None = None
    v_model: SgpModel | None = None
    rejected: int = 0
    fits: int = 0
    _new_since_fit: int = field(default=0, init=False)

    def __post_init__(self):
        self.d_observations = deque(maxlen=self.config.buffer_size)
        self.v_observations = deque(maxlen=self.config.buffer_size)

    @property
    def ready(self) -> bool:
        return self.d_model is not None and self.v_model is not None

    def refit(self) -> None:
        cfg = self.config
        self.d_model = fit(list(self.d_observations), cfg.m_inducing,
                           "lateral", signal_std=cfg.signal_std_d,
                           lengthscale=cfg.lengthscale_d, period=self.period)
        self.v_model = fit(list(self.v_observations), cfg.m_inducing,
                           "velocity", signal_std=cfg.signal_std_v,
                           lengthscale=cfg.lengthscale_v, period=self.period)
        self.fits += 1
        self._new_since_fit = 0


def update_opponent(track: OpponentTrack, detection: tuple[float, float, float],
                    t: float) -> OpponentTrack:
    """Ingest one detection (s, d, v); refit once enough new samples
    accumulated.  Non-finite detections are rejected and counted."""
    s, d, v = detection
    if not all(math.isfinite(float(u)) for u in (s, d, v)):
        track.rejected += 1
        return track
    cfg = track.config
    if track.period is not None:
        s = float(np.mod(s, track.period))
    track.d_observations.append(Observation(s, float(d), cfg.noise_std_d))
    track.v_observations.append(Observation(s, float(v), cfg.noise_std_v))
    track.current = (s, float(d), float(v))
    track._new_since_fit += 1
    if track._new_since_fit >= cfg.refit_every:
        track.refit()
    return track
