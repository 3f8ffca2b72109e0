"""Dense convex QP solvers for the condensed MPC problem.

The embedded solver reduces the KKT system to a single projected equation
in the inequality multiplier, integrates it with a fixed-budget explicit
Euler iteration (dual-level Tikhonov regularization, cached symmetric
factorizations), and falls back to the unconstrained-equality solution on
any non-finite intermediate so a command is always returned.  A
general-purpose interior-point solver wrapped from cvxopt serves as the
correctness oracle and shadow-mode timing baseline.

Problem form: minimize 1/2 z'Pz + q'z  subject to  l <= A_c z <= u, with
rows where l == u treated as equalities.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

try:
    from . import _ptc_kernel
    HAVE_KERNEL = True
except ImportError:  # pure-Python fallback only
    _ptc_kernel = None
    HAVE_KERNEL = False

# Solution statuses.
CONVERGED = "converged"
ITERATION_CAP = "iteration_cap"
FALLBACK = "fallback"
OPTIMAL = "optimal"          # oracle
INFEASIBLE = "infeasible"    # oracle
ORACLE_FAILED = "oracle_failed"


class SolverSetupError(RuntimeError):
    """Factorization of the reduced system failed beyond repair."""


@dataclass
class DenseQp:
    """Dense QP data; validated and symmetrized on construction."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(-1, len(self.q))
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        n = len(self.q)
        if self.P.shape != (n, n):
            raise ValueError("P must be n x n")
        if not (len(self.l) == len(self.u) == self.A.shape[0]):
            raise ValueError("bound lengths must match constraint rows")
        if not np.isfinite(self.P).all() or not np.isfinite(self.q).all() \
                or not np.isfinite(self.A).all():
            raise ValueError("P, q, A must be finite")
        asym = np.max(np.abs(self.P - self.P.T)) if n else 0.0
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(self.P)))):
            raise ValueError("P must be symmetric")
        self.P = 0.5 * (self.P + self.P.T)
        if np.any(self.l > self.u):
            raise ValueError("need l <= u componentwise")

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)

    def violation(self, z: np.ndarray) -> float:
        """Max constraint violation of z (0 when feasible)."""
        az = self.A @ z
        over = np.maximum(az - self.u, 0.0)
        under = np.maximum(self.l - az, 0.0)
        if len(az) == 0:
            return 0.0
        return float(np.max(np.maximum(over, under)))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.P, self.q, self.A, self.l, self.u):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class PtcConfig:
    """Embedded-solver parameters (pseudo-time step, budget, regularizers)."""

    h: float = 1.0
    beta: float | None = None   # None: auto 0.5/||G||_2 (power iteration)
    k_max: int = 200
    tol: float = 1.0e-6
    eps1: float | None = None   # None: 1e-8 * trace(P)/n
    eps2: float = 1.0e-8
    polish: bool = True
    kernel: str = "auto"        # auto | compiled | python

    def __post_init__(self):
        if self.h <= 0 or self.tol <= 0 or self.eps2 <= 0:
            raise ValueError("h, tol, eps2 must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.eps1 is not None and self.eps1 <= 0:
            raise ValueError("eps1 must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.kernel not in ("auto", "compiled", "python"):
            raise ValueError("kernel must be auto|compiled|python")


def split_rows(qp: DenseQp):
    """Partition constraint rows into equalities (l == u) and one-sided
    inequalities a'z <= bound; two-sided rows are split into a pair and
    infinite bounds dropped.

    Returns (C, p, D, q_ineq, row_map) where row_map[i] = (orig_row, sign)
    for each one-sided row.
    """
    eq = qp.l == qp.u
    C = qp.A[eq]
    p = qp.u[eq]
    rows, bounds, row_map = [], [], []
    for i in np.flatnonzero(~eq):
        if np.isfinite(qp.u[i]):
            rows.append(qp.A[i])
            bounds.append(qp.u[i])
            row_map.append((int(i), +1))
        if np.isfinite(qp.l[i]):
            rows.append(-qp.A[i])
            bounds.append(-qp.l[i])
            row_map.append((int(i), -1))
    D = np.array(rows).reshape(-1, qp.n)
    q_ineq = np.asarray(bounds, dtype=float)
    return C, p, D, q_ineq, row_map


@dataclass
class ReducedSystem:
    """Cached reduction of a DenseQp to the dual inequality equation.

    ``G`` and ``b`` define the projected equation in the multiplier; the
    primal is recovered as z = h_free - Gp_Dt @ lam.
    """

    G: np.ndarray          # D G' D', symmetric PSD
    b: np.ndarray          # q_ineq - D h_free
    h_free: np.ndarray     # unconstrained-equality solution
    Gp_Dt: np.ndarray      # G' D'
    C: np.ndarray
    p: np.ndarray
    D: np.ndarray
    q_ineq: np.ndarray
    row_map: list
    gamma: float           # effective Euler step h*beta
    eps1: float
    eps2: float
    qp: DenseQp
    chol_p: np.ndarray | None = None   # upper Cholesky of P + eps1*I

    @property
    def m(self) -> int:
        return len(self.q_ineq)

    def recover(self, lam: np.ndarray) -> np.ndarray:
        return self.h_free - self.Gp_Dt @ lam

    def residual(self, lam: np.ndarray) -> np.ndarray:
        """Projected natural residual F(lam); zero exactly at KKT points."""
        g = self.G @ lam + self.b
        return (lam - np.maximum(lam - self.gamma * g, 0.0)) / self.gamma


def _norm2_estimate(G: np.ndarray, iters: int = 40) -> float:
    """Deterministic power-iteration estimate of the spectral norm."""
    m = G.shape[0]
    if m == 0:
        return 0.0
    v = np.full(m, 1.0 / np.sqrt(m))
    norm = 0.0
    for _ in range(iters):
        w = G @ v
        norm = float(np.linalg.norm(w))
        if norm <= 1e-300:
            return 0.0
        v = w / norm
    return norm


def _chol_with_escalation(mat: np.ndarray, eps0: float, scale: float):
    """Upper Cholesky of mat + eps*I, escalating eps x100 until it holds.

    Returns (factor, eps_used).  Always succeeds for finite symmetric
    input because eps eventually dominates the most negative eigenvalue.
    """
    eps = eps0
    eye = np.eye(len(mat))
    for _ in range(60):
        try:
            return cholesky(mat + eps * eye, lower=False), eps
        except np.linalg.LinAlgError:
            eps = max(eps * 100.0, 1e-300)
            if eps > 1e8 * max(scale, 1.0):
                break
    raise SolverSetupError("factorization failed despite regularization")


def reduce_qp(qp: DenseQp, cfg: PtcConfig) -> ReducedSystem:
    """Build the reduced dual system with two-level Tikhonov regularization
    and cached symmetric factorizations."""
    n = qp.n
    C, p, D, q_ineq, row_map = split_rows(qp)
    scale = float(np.trace(qp.P)) / max(n, 1)
    eps1 = cfg.eps1 if cfg.eps1 is not None else 1e-8 * max(scale, 1e-12)
    chol_p, eps1 = _chol_with_escalation(qp.P, eps1, scale)

    pinv_q = cho_solve((chol_p, False), qp.q)
    if len(p):
        X = cho_solve((chol_p, False), C.T)           # P_reg^-1 C'
        schur = C @ X + cfg.eps2 * np.eye(len(p))
        chol_s, _ = _chol_with_escalation(schur, 0.0, cfg.eps2)
        pinv = cho_solve((chol_p, False), np.eye(n))
        XS = X @ cho_solve((chol_s, False), X.T)
        g_free = pinv - XS                             # G'
        h_free = X @ cho_solve((chol_s, False), C @ pinv_q + p) - pinv_q
    else:
        g_free = cho_solve((chol_p, False), np.eye(n))
        h_free = -pinv_q

    if len(q_ineq):
        Gp_Dt = g_free @ D.T
        G = D @ Gp_Dt
        G = 0.5 * (G + G.T)
        b = q_ineq - D @ h_free
    else:
        Gp_Dt = np.zeros((n, 0))
        G = np.zeros((0, 0))
        b = np.zeros(0)

    beta = cfg.beta
    if beta is None:
        norm = _norm2_estimate(G)
        beta = 0.5 / norm if norm > 1e-12 else 1.0
    gamma = cfg.h * beta
    return ReducedSystem(G=G, b=b, h_free=h_free, Gp_Dt=Gp_Dt, C=C, p=p,
                         D=D, q_ineq=q_ineq, row_map=row_map, gamma=gamma,
                         eps1=eps1, eps2=cfg.eps2, qp=qp, chol_p=chol_p)


def _iterate_python(G, b, lam0, gamma, k_max, tol):
    """Pure-NumPy twin of the compiled kernel loop."""
    lam = np.array(lam0, dtype=float, copy=True)
    best = lam.copy()
    best_resid = np.inf
    iters = 0
    for k in range(k_max + 1):
        g = G @ lam + b
        nxt = np.maximum(lam - gamma * g, 0.0)
        resid = float(np.max(np.abs(lam - nxt))) / gamma if len(lam) else 0.0
        if not np.isfinite(resid):
            return lam, iters, resid, False
        if resid < best_resid:
            best_resid = resid
            best[:] = lam
        if resid <= tol:
            return lam, iters, resid, True
        if k == k_max:
            break
        lam = nxt
        iters += 1
    return best, iters, best_resid, True


def _polish(sys: ReducedSystem, lam_hint: np.ndarray):
    """Dual active-set refinement (Goldfarb-Idnani scheme, dense).

    Starts from the unconstrained-equality optimum, repeatedly adds the
    most violated inequality with full/partial dual steps so the working
    set stays independent and the multipliers nonnegative; finite for the
    strictly convex regularized Hessian.  Returns (z, lam, True) on a
    verified KKT point, else (None, None, False) and the caller keeps the
    fixed-budget iterate.
    """
    qp, C, D, q_ineq = sys.qp, sys.C, sys.D, sys.q_ineq
    n, me, mi = qp.n, len(sys.p), len(q_ineq)
    if mi == 0:
        return sys.h_free, np.zeros(0), True
    chol = (sys.chol_p, False)

    def pinv(mat_or_vec):
        return cho_solve(chol, mat_or_vec)

    z = sys.h_free.copy()
    work: list[int] = []          # inequality rows in the working set
    u = np.zeros(0)               # their multipliers
    feas_tol = 1e-10 * max(1.0, float(np.max(np.abs(q_ineq))))
    max_steps = 50 + 5 * mi

    for _ in range(max_steps):
        slack = D @ z - q_ineq
        if work:
            slack[work] = 0.0
        p_idx = int(np.argmax(slack))
        if slack[p_idx] <= feas_tol:
            lam_full = np.zeros(mi)
            if work:
                lam_full[work] = np.maximum(u, 0.0)
            return z, lam_full, True
        d_p = D[p_idx]
        u_p = 0.0
        # Inner loop: move toward constraint p, dropping blockers.
        for _ in range(max_steps):
            N = np.vstack([C, D[work]]) if (me or work) \
                else np.zeros((0, n))
            pinv_dp = pinv(d_p)
            if len(N):
                M = N @ pinv(N.T)
                M[np.diag_indices_from(M)] += sys.eps2
                try:
                    r = np.linalg.solve(M, N @ pinv_dp)
                except np.linalg.LinAlgError:
                    return None, None, False
                dz = pinv_dp - pinv(N.T) @ r
            else:
                r = np.zeros(0)
                dz = pinv_dp
            curv = float(d_p @ dz)
            r_ineq = r[me:]
            # Dual blocking step (drop the first multiplier to hit zero).
            t1, drop = np.inf, -1
            for j, rv in enumerate(r_ineq):
                if rv > 1e-12:
                    tj = u[j] / rv
                    if tj < t1:
                        t1, drop = tj, j
            s_p = float(d_p @ z - q_ineq[p_idx])
            t2 = s_p / curv if curv > 1e-14 else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return None, None, False   # inconsistent constraints
            z = z - t * dz
            if len(r):
                u = u - t * r_ineq
            u_p += t
            if t == t2:
                work.append(p_idx)
                u = np.append(u, u_p)
                break
            work.pop(drop)
            u = np.delete(u, drop)
    return None, None, False


@dataclass
class QpSolution:
    """Primal/dual result with solver diagnostics.

    ``lam`` is indexed by the one-sided row split (see ``split_rows``).
    On ``FALLBACK`` the multiplier is zero and ``z`` is the
    unconstrained-equality solution.
    """

    z: np.ndarray
    lam: np.ndarray
    status: str
    iterations: int = 0
    residual: float = 0.0
    solve_time: float = 0.0
    objective: float = float("nan")
    polished: bool = False
    diagnostics: dict = field(default_factory=dict)


def ptc_solve(sys: ReducedSystem, cfg: PtcConfig,
              lam0: np.ndarray | None = None) -> QpSolution:
    """Run the fixed-budget projected iteration on the reduced system.

    Every failure path resolves to a ``FALLBACK`` solution (multiplier
    zeroed, primal = unconstrained-equality solution); no exception
    escapes once the system is built.
    """
    t0 = time.perf_counter()
    m = sys.m
    if lam0 is None:
        lam = np.zeros(m)
    else:
        lam = np.maximum(np.asarray(lam0, dtype=float).ravel(), 0.0)
        if len(lam) != m:  # dimension changed between cycles
            lam = np.resize(lam, m) if len(lam) else np.zeros(m)
            lam = np.maximum(lam, 0.0)

    if m == 0:
        z = sys.h_free
        return QpSolution(z=z, lam=lam, status=CONVERGED, iterations=0,
                          residual=0.0, solve_time=time.perf_counter() - t0,
                          objective=sys.qp.objective(z))

    use_kernel = cfg.kernel == "compiled" or (cfg.kernel == "auto"
                                              and HAVE_KERNEL)
    if use_kernel and not HAVE_KERNEL:
        raise RuntimeError("compiled kernel requested but not built")
    if use_kernel:
        G_f = np.asfortranarray(sys.G)
        lam_out, iters, resid, finite = _ptc_kernel.iterate(
            G_f, sys.b, lam, sys.gamma, cfg.k_max, cfg.tol)
        lam_out = np.asarray(lam_out)
    else:
        lam_out, iters, resid, finite = _iterate_python(
            sys.G, sys.b, lam, sys.gamma, cfg.k_max, cfg.tol)

    if not finite or not np.isfinite(lam_out).all():
        lam_out = np.zeros(m)
        z = sys.h_free
        return QpSolution(z=z, lam=lam_out, status=FALLBACK,
                          iterations=min(iters, cfg.k_max),
                          residual=float("inf"),
                          solve_time=time.perf_counter() - t0,
                          objective=sys.qp.objective(z))

    status = CONVERGED if resid <= cfg.tol else ITERATION_CAP
    z = sys.recover(lam_out)
    polished = False
    if cfg.polish and status != CONVERGED:
        # The warm-started control loop normally converges inside the
        # budget; the refinement only runs on budget-limited solves.
        z_p, lam_p, ok = _polish(sys, lam_out)
        if ok:
            z, lam_out, polished = z_p, lam_p, True
            resid = float(np.max(np.abs(sys.residual(lam_out))))
            if resid <= cfg.tol:
                status = CONVERGED
    if not np.isfinite(z).all():
        lam_out = np.zeros(m)
        z = sys.h_free
        status = FALLBACK
    return QpSolution(z=z, lam=lam_out, status=status, iterations=iters,
                      residual=resid, solve_time=time.perf_counter() - t0,
                      objective=sys.qp.objective(z), polished=polished)


class PtcSolver:
    """Stateful front end: reduce, warm-start, iterate, polish, dump.

    A solver instance holds mutable workspace (the previous multiplier)
    and must be confined to one task at a time; use separate instances
    for concurrent solves.
    """

    def __init__(self, cfg: PtcConfig | None = None,
                 dump_dir: str | Path | None = None):
        self.cfg = cfg or PtcConfig()
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self._warm: np.ndarray | None = None
        self._dumped = 0

    def solve(self, qp: DenseQp) -> QpSolution:
        t0 = time.perf_counter()
        try:
            sys_ = reduce_qp(qp, self.cfg)
        except SolverSetupError as exc:
            sol = QpSolution(z=np.zeros(qp.n), lam=np.zeros(0),
                             status=FALLBACK, residual=float("inf"),
                             solve_time=time.perf_counter() - t0,
                             objective=float("nan"),
                             diagnostics={"setup_error": str(exc)})
            self._maybe_dump(qp, sol)
            return sol
        sol = ptc_solve(sys_, self.cfg, self._warm)
        sol.solve_time = time.perf_counter() - t0
        self._warm = sol.lam.copy()
        if sol.status == FALLBACK:
            self._maybe_dump(qp, sol)
        return sol

    def _maybe_dump(self, qp: DenseQp, sol: QpSolution) -> None:
        if self.dump_dir is None:
            return
        self.dump_dir.mkdir(parents=True, exist_ok=True)
        path = self.dump_dir / f"qp_fallback_{self._dumped:04d}.json"
        dump_problem(qp, self.cfg, path)
        sol.diagnostics["dump"] = str(path)
        self._dumped += 1


# -- reference oracle -------------------------------------------------------

def _phase1_feasible(C, p, D, q_ineq, n: int, tol: float = 1e-7) -> bool:
    """LP feasibility sub-solve: minimize the worst constraint violation
    t subject to Dz - t <= q_ineq, Cz = p; feasible iff t* <= tol."""
    from scipy.optimize import linprog

    mi = len(q_ineq)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    a_ub = np.hstack([D, -np.ones((mi, 1))]) if mi else None
    a_eq = np.hstack([C, np.zeros((len(p), 1))]) if len(p) else None
    res = linprog(c, A_ub=a_ub, b_ub=q_ineq if mi else None,
                  A_eq=a_eq, b_eq=p if len(p) else None,
                  bounds=[(None, None)] * n + [(-1.0, None)],
                  method="highs")
    if not res.success:
        return False
    return float(res.x[-1]) <= tol


_CVXOPT_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-9,
    "reltol": 1e-9,
    "feastol": 1e-9,
    "refinement": 3,
    "maxiters": 200,
}


def oracle_solve(qp: DenseQp) -> QpSolution:
    """Reference solution by a general-purpose interior-point method.

    Used for correctness cross-checks and as the shadow-mode latency
    baseline.  Infeasible problems are reported with ``INFEASIBLE``.
    """
    from cvxopt import matrix as cvxmat
    from cvxopt import solvers

    t0 = time.perf_counter()
    C, p, D, q_ineq, row_map = split_rows(qp)
    n = qp.n
    if len(q_ineq) == 0:
        # Keep the cone solver happy with one vacuous inequality row.
        D = np.zeros((1, n))
        q_ineq = np.array([1.0])
        row_map = [(-1, 0)]
    args = [cvxmat(qp.P), cvxmat(qp.q), cvxmat(D), cvxmat(q_ineq)]
    if len(p):
        args += [cvxmat(C), cvxmat(p)]
    saved = dict(solvers.options)
    solvers.options.update(_CVXOPT_OPTIONS)
    try:
        sol = solvers.qp(*args)
    except (ValueError, ArithmeticError) as exc:
        label = ORACLE_FAILED if _phase1_feasible(C, p, D, q_ineq, n) \
            else INFEASIBLE
        return QpSolution(z=np.zeros(n), lam=np.zeros(len(q_ineq)),
                          status=label,
                          solve_time=time.perf_counter() - t0,
                          diagnostics={"error": str(exc)})
    finally:
        solvers.options.clear()
        solvers.options.update(saved)

    status = sol["status"]
    if status == "optimal":
        z = np.asarray(sol["x"]).ravel()
        lam = np.asarray(sol["z"]).ravel()
        nu = np.asarray(sol["y"]).ravel() if len(p) else np.zeros(0)
        return QpSolution(z=z, lam=np.maximum(lam, 0.0), status=OPTIMAL,
                          solve_time=time.perf_counter() - t0,
                          objective=qp.objective(z),
                          diagnostics={"nu": nu, "row_map": row_map})
    label = INFEASIBLE if "infeasible" in status or \
        not _phase1_feasible(C, p, D, q_ineq, n) else ORACLE_FAILED
    return QpSolution(z=np.zeros(n), lam=np.zeros(len(q_ineq)),
                      status=label,
                      solve_time=time.perf_counter() - t0,
                      diagnostics={"cvxopt_status": status})


def kkt_residual(qp: DenseQp, z: np.ndarray, lam: np.ndarray,
                 nu: np.ndarray | None = None) -> dict:
    """KKT residuals of a candidate solution under the one-sided split."""
    C, p, D, q_ineq, _ = split_rows(qp)
    lam = np.asarray(lam, dtype=float).ravel()
    if len(lam) != len(q_ineq):
        raise ValueError("multiplier length does not match one-sided rows")
    grad = qp.P @ z + qp.q
    if len(q_ineq):
        grad = grad + D.T @ lam
    if len(p):
        if nu is None:
            # Least-squares equality multipliers for the stationarity check.
            nu, *_ = np.linalg.lstsq(C.T, -(qp.P @ z + qp.q
                                            + (D.T @ lam if len(q_ineq)
                                               else 0.0)), rcond=None)
        grad = grad + C.T @ np.asarray(nu).ravel()
    slack = q_ineq - D @ z if len(q_ineq) else np.zeros(0)
    return {
        "stationarity": float(np.max(np.abs(grad))) if len(grad) else 0.0,
        "primal": max(float(np.max(-slack)) if len(slack) else 0.0,
                      float(np.max(np.abs(C @ z - p))) if len(p) else 0.0,
                      0.0),
        "complementarity": float(np.max(np.abs(lam * slack)))
        if len(slack) else 0.0,
        "dual": float(np.min(lam)) if len(lam) else 0.0,
    }


# -- failing-instance dumps -------------------------------------------------

def dump_problem(qp: DenseQp, cfg: PtcConfig, path: str | Path) -> None:
    """Self-contained text serialization of a QP and solver config."""
    payload = {
        "n": qp.n,
        "m": qp.m,
        "P": qp.P.tolist(),
        "q": qp.q.tolist(),
        "A": qp.A.tolist(),
        "l": [v if np.isfinite(v) else ("-inf" if v < 0 else "inf")
              for v in qp.l],
        "u": [v if np.isfinite(v) else ("-inf" if v < 0 else "inf")
              for v in qp.u],
        "ptc": {"h": cfg.h, "beta": cfg.beta, "k_max": cfg.k_max,
                "tol": cfg.tol, "eps1": cfg.eps1, "eps2": cfg.eps2,
                "polish": cfg.polish, "kernel": cfg.kernel},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_problem(path: str | Path) -> tuple[DenseQp, PtcConfig]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)

    def debound(vals):
        return np.array([float(v) if not isinstance(v, str)
                         else (np.inf if v == "inf" else -np.inf)
                         for v in vals])

    qp = DenseQp(P=np.array(payload["P"]), q=np.array(payload["q"]),
                 A=np.array(payload["A"]), l=debound(payload["l"]),
                 u=debound(payload["u"]))
    cfg = PtcConfig(**payload["ptc"])
    return qp, cfg
