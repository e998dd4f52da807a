"""l1-regularized least squares, min ||Ax - y||^2 + lam*||x||_1, via FISTA.

The accelerated proximal-gradient iteration with a monotone accept step
(candidates that would raise the objective keep the previous iterate while
the momentum sequence continues), so the reported objective never
increases. Step size is 1/L with L = 2*lambda_max(A^T A) from power
iteration; no backtracking.

Batch solving runs all frames in lockstep through one Gram-matrix
recurrence with converged frames frozen, which is what makes the solver
usable as a latency baseline.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .sensing import MeasurementMatrix


@dataclass
class LassoConfig:
    lam: float
    max_iter: int = 2000
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class LassoSolution:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_history: np.ndarray = field(repr=False)


@dataclass
class BatchLassoSolution:
    x: np.ndarray  # (n_frames, n)
    objective: np.ndarray  # (n_frames,)
    iterations: np.ndarray
    converged: np.ndarray
    objective_history: np.ndarray = field(repr=False)  # (n_iters, n_frames)


def _entries(A) -> np.ndarray:
    if isinstance(A, MeasurementMatrix):
        return A.entries
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("A must be a 2-D array")
    return A


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise sign(v)*max(|v| - tau, 0), the prox of tau*||.||_1."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def lipschitz_estimate(A, tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """L = 2*lambda_max(A^T A) by power iteration to the given relative tol."""
    A = _entries(A)
    if not np.any(A):
        raise ValueError("zero matrix has no positive Lipschitz constant")
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam_prev = 0.0
    for _ in range(max_iter):
        u = A.T @ (A @ v)
        lam = float(np.linalg.norm(u))
        if lam == 0.0:  # started in the null space; reseed
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = u / lam
        if abs(lam - lam_prev) <= tol * lam:
            return 2.0 * lam
        lam_prev = lam
    return 2.0 * lam


def fista_solve_batch(
    A,
    y_hat: np.ndarray,
    cfg: LassoConfig,
    x0: np.ndarray | None = None,
    L: float | None = None,
) -> BatchLassoSolution:
    """Solve one lasso instance per row of y_hat against a shared matrix."""
    A = _entries(A)
    Y = np.asarray(y_hat, dtype=np.float64)
    if Y.ndim != 2:
        raise ValueError("y_hat must be 2-D (n_frames, m); use fista_solve for one frame")
    m, n = A.shape
    if Y.shape[1] != m:
        raise ValueError(f"measurement dimension {Y.shape[1]} does not match m={m}")
    B = Y.shape[0]
    if L is None:
        L = lipschitz_estimate(A)

    # everything below works on the Gram form: for f(x) = ||Ax - y||^2,
    # grad f = Gx - c with G = 2 A^T A and c = 2 A^T y
    G = 2.0 * (A.T @ A)
    C = 2.0 * (Y @ A).T  # (n, B)
    yy = np.sum(Y**2, axis=1)

    def objective(X, cols):
        quad = 0.5 * np.sum(X * (G @ X), axis=0) - np.sum(C[:, cols] * X, axis=0)
        return quad + yy[cols] + cfg.lam * np.sum(np.abs(X), axis=0)

    if x0 is None:
        X = np.zeros((n, B))
    else:
        x0 = np.asarray(x0, dtype=np.float64)
        X = np.tile(x0[:, None], (1, B)) if x0.ndim == 1 else x0.T.copy()
        if X.shape != (n, B):
            raise ValueError("x0 shape does not match the instance")
    W = X.copy()
    all_cols = np.arange(B)
    F = objective(X, all_cols)
    if not np.all(np.isfinite(F)):
        raise NumericalError("non-finite objective at the initial iterate")

    active = np.ones(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    history = [F.copy()]
    t = 1.0
    shrink = cfg.lam / L

    for it in range(1, cfg.max_iter + 1):
        cols = np.flatnonzero(active)
        Wa = W[:, cols]
        grad = G @ Wa - C[:, cols]
        Z = soft_threshold(Wa - grad / L, shrink)
        Fz = objective(Z, cols)
        if not np.all(np.isfinite(Fz)):
            raise NumericalError(f"non-finite objective at iteration {it}")

        Fa = F[cols]
        accept = Fz <= Fa
        Xa_old = X[:, cols]
        Xa_new = np.where(accept, Z, Xa_old)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        W[:, cols] = (
            Xa_new
            + (t / t_next) * (Z - Xa_new)
            + ((t - 1.0) / t_next) * (Xa_new - Xa_old)
        )
        X[:, cols] = Xa_new
        F[cols] = np.where(accept, Fz, Fa)
        t = t_next
        iterations[cols] = it

        # relative change of the candidate objective; momentum rejections
        # show a large change and keep iterating
        rel = np.abs(Fz - Fa) / np.maximum(Fa, 1e-30)
        done = cols[rel < cfg.tol]
        converged[done] = True
        active[done] = False
        history.append(F.copy())
        if not np.any(active):
            break

    return BatchLassoSolution(
        x=X.T.copy(),
        objective=F,
        iterations=iterations,
        converged=converged,
        objective_history=np.asarray(history),
    )


def fista_solve(
    A,
    y_hat: np.ndarray,
    cfg: LassoConfig,
    x0: np.ndarray | None = None,
    L: float | None = None,
) -> LassoSolution:
    """Single-frame lasso solve (see fista_solve_batch)."""
    y = np.asarray(y_hat, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("y_hat must be 1-D; use fista_solve_batch for batches")
    batch = fista_solve_batch(A, y[None, :], cfg, x0=x0, L=L)
    return LassoSolution(
        x=batch.x[0],
        objective=float(batch.objective[0]),
        iterations=int(batch.iterations[0]),
        converged=bool(batch.converged[0]),
        objective_history=batch.objective_history[:, 0],
    )
