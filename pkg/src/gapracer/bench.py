"""Random problem generators and timing runners for the benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .qp import (
    OPTIMAL,
    DenseQp,
    PtcConfig,
    PtcSolver,
    oracle_solve,
)


def random_feasible_qp(rng: np.random.Generator, n_max: int = 40,
                       m_max: int = 80,
                       with_equalities: bool = True) -> DenseQp:
    """Strictly convex QP, feasible by construction around a random point.

    Constraint rows are unit-normalized; a random subset becomes
    equalities through the feasible point.
    """
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    a_fac = rng.normal(size=(n, n)) / np.sqrt(n)
    P = a_fac.T @ a_fac + rng.uniform(0.5, 2.0) * np.eye(n)
    q = rng.normal(size=n)
    z_feas = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    az = A @ z_feas
    lo = az - np.abs(rng.normal(0.5, 0.5, m)) - 1e-3
    hi = az + np.abs(rng.normal(0.5, 0.5, m)) + 1e-3
    # Occasionally drop one side.
    drop_lo = rng.random(m) < 0.2
    drop_hi = rng.random(m) < 0.2
    lo[drop_lo] = -np.inf
    hi[drop_hi & ~drop_lo] = np.inf
    if with_equalities and n > 3 and rng.random() < 0.3:
        k = min(int(rng.integers(1, min(3, n - 1))), m)
        idx = rng.choice(m, size=k, replace=False)
        lo[idx] = az[idx]
        hi[idx] = az[idx]
    return DenseQp(P=P, q=q, A=A, l=lo, u=hi)


def adversarial_qp(rng: np.random.Generator, cond_max: float = 1e12,
                   n_max: int = 30) -> DenseQp:
    """Stress instance: near-singular Hessian, conflicting tight bounds."""
    n = int(rng.integers(2, n_max + 1))
    u_mat, _ = np.linalg.qr(rng.normal(size=(n, n)))
    log_cond = rng.uniform(6, np.log10(cond_max))
    eigs = np.logspace(0, -log_cond, n)
    P = u_mat @ np.diag(eigs) @ u_mat.T
    P = 0.5 * (P + P.T)
    q = rng.normal(size=n) * rng.choice([1.0, 1e3])
    m = int(rng.integers(2, 40))
    A = rng.normal(size=(m, n))
    z0 = rng.normal(size=n)
    az = A @ z0
    width = rng.choice([1e-9, 1e-6, 1.0])
    lo = az - width * np.abs(rng.normal(size=m))
    hi = az + width * np.abs(rng.normal(size=m))
    # Conflicting pairs: opposite one-sided rows that cannot both be
    # strictly satisfied.
    if m >= 4:
        A[1] = -A[0]
        hi[0] = az[0] - 1.0
        lo[0] = -np.inf
        hi[1] = -az[0] - 1.0
        lo[1] = -np.inf
    return DenseQp(P=P, q=q, A=A, l=np.minimum(lo, hi), u=np.maximum(lo, hi))


@dataclass
class TimingStats:
    mean: float
    std: float
    p99: float
    max: float

    @classmethod
    def from_times(cls, times) -> "TimingStats":
        arr = np.asarray(times, dtype=float)
        return cls(mean=float(arr.mean()), std=float(arr.std()),
                   p99=float(np.percentile(arr, 99)),
                   max=float(arr.max()))

    def row(self, unit: float = 1e3) -> dict:
        return {"mean_ms": self.mean * unit, "std_ms": self.std * unit,
                "p99_ms": self.p99 * unit, "max_ms": self.max * unit}


def bench_solvers(problems: list[DenseQp], cfg: PtcConfig | None = None,
                  kernels: tuple[str, ...] = ("auto",),
                  with_oracle: bool = True) -> dict:
    """Time the embedded solver (per kernel backend) and the oracle on the
    same problem set; returns per-instance records and summary stats."""
    cfg = cfg or PtcConfig()
    records = []
    times: dict[str, list[float]] = {k: [] for k in kernels}
    if with_oracle:
        times["oracle"] = []
    for qp in problems:
        rec = {"n": qp.n, "m": qp.m, "fingerprint": qp.fingerprint()}
        for kern in kernels:
            kcfg = PtcConfig(h=cfg.h, beta=cfg.beta, k_max=cfg.k_max,
                             tol=cfg.tol, eps1=cfg.eps1, eps2=cfg.eps2,
                             polish=cfg.polish, kernel=kern)
            solver = PtcSolver(kcfg)
            t0 = time.perf_counter()
            sol = solver.solve(qp)
            dt = time.perf_counter() - t0
            times[kern].append(dt)
            rec[f"{kern}_time_s"] = dt
            rec[f"{kern}_status"] = sol.status
            rec[f"{kern}_iters"] = sol.iterations
            rec[f"{kern}_objective"] = sol.objective
        if with_oracle:
            t0 = time.perf_counter()
            osol = oracle_solve(qp)
            dt = time.perf_counter() - t0
            times["oracle"].append(dt)
            rec["oracle_time_s"] = dt
            rec["oracle_status"] = osol.status
            rec["oracle_objective"] = osol.objective
            if osol.status == OPTIMAL and np.isfinite(rec.get(
                    f"{kernels[0]}_objective", np.nan)):
                rec["obj_rel_diff"] = abs(
                    rec[f"{kernels[0]}_objective"] - osol.objective) / (
                        1.0 + abs(osol.objective))
        records.append(rec)
    summary = {name: TimingStats.from_times(ts) for name, ts in times.items()
               if ts}
    return {"records": records, "summary": summary}
