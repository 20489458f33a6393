"""Discounted linear-quadratic regulation with additive Gaussian noise.

Dynamics x' = A x + B a + xi, stage cost x'Qx + a'Ra, discount alpha in
(0, 1). The optimal quadratic value matrix is the fixed point of

    K <- A' (alpha K - alpha^2 K B (alpha B'K B + R)^(-1) B'K) A + Q

iterated from K_0 = Q; the iterates increase monotonically in the
positive-semidefinite order and converge even without controllability of
every coordinate, because the discount keeps the uncontrolled directions
summable. The optimal value is v(x) = x'Kx + alpha/(1-alpha) E xi'K xi and
the optimal action is -gain @ x with gain = alpha (alpha B'KB + R)^(-1) B'KA.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO

import numpy as np


class IterationLimitError(RuntimeError):
    """Fixed-point iteration hit its cap; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class InstabilityError(ValueError):
    """Dynamics matrix has spectral radius >= 1 where stability is required."""


def _check_symmetric(name: str, m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    if np.max(np.abs(m - m.T)) > tol * max(1.0, np.max(np.abs(m))):
        raise ValueError(f"{name} must be symmetric to {tol}")
    return 0.5 * (m + m.T)


@dataclass(frozen=True, eq=False)
class DiscountedLqr:
    """Problem data (A, B, Q, R, alpha, noise covariance)."""

    a_matrix: np.ndarray
    b_matrix: np.ndarray
    q_matrix: np.ndarray
    r_matrix: np.ndarray
    alpha: float
    noise_cov: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        b = np.asarray(self.b_matrix, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        q = _check_symmetric("Q", self.q_matrix)
        r = _check_symmetric("R", self.r_matrix)
        cov = _check_symmetric("noise_cov", self.noise_cov)
        m = a.shape[0]
        if a.shape != (m, m) or b.shape[0] != m or q.shape != (m, m) or cov.shape != (m, m):
            raise ValueError("inconsistent system dimensions")
        if r.shape[0] != b.shape[1]:
            raise ValueError("R must match the control dimension")
        if np.min(np.linalg.eigvalsh(q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(r)) <= 0.0:
            raise ValueError("R must be positive definite")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10:
            raise ValueError("noise covariance must be positive semidefinite")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name, mat in (("a_matrix", a), ("b_matrix", b), ("q_matrix", q),
                          ("r_matrix", r), ("noise_cov", cov)):
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)

    @property
    def state_dim(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def control_dim(self) -> int:
        return self.b_matrix.shape[1]


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Converged quadratic value matrix, feedback gain, and noise constant.

    value_at(x) = x'Kx + noise_constant with
    noise_constant = alpha/(1-alpha) * trace(K Sigma_xi); the optimal action
    is -gain @ x.
    """

    k_matrix: np.ndarray
    gain: np.ndarray
    noise_constant: float
    iterations: int
    residual: float


def riccati_map(problem: DiscountedLqr, k: np.ndarray) -> np.ndarray:
    """One value-iteration step on the quadratic matrix."""
    a, b, r, alpha = problem.a_matrix, problem.b_matrix, problem.r_matrix, problem.alpha
    inner = alpha * b.T @ k @ b + r  # positive definite whenever R is
    middle = alpha * k - alpha**2 * k @ b @ np.linalg.solve(inner, b.T @ k)
    nxt = a.T @ middle @ a + problem.q_matrix
    return 0.5 * (nxt + nxt.T)


def riccati_solve(
    problem: DiscountedLqr, tol: float = 1e-12, max_iter: int = 1_000_000
) -> RiccatiSolution:
    """Iterate the value recursion from K_0 = Q to its fixed point.

    Stops when the Frobenius norm of successive iterates drops below tol;
    raises IterationLimitError (carrying the last residual) past max_iter.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    k = problem.q_matrix.copy()
    diff = np.inf
    for it in range(1, max_iter + 1):
        nxt = riccati_map(problem, k)
        diff = float(np.linalg.norm(nxt - k, "fro"))
        k = nxt
        if diff < tol:
            break
    else:
        raise IterationLimitError(
            f"no convergence within {max_iter} iterations (last step {diff:.3e})", diff
        )
    inner = problem.alpha * problem.b_matrix.T @ k @ problem.b_matrix + problem.r_matrix
    gain = problem.alpha * np.linalg.solve(inner, problem.b_matrix.T @ k @ problem.a_matrix)
    noise_constant = (
        problem.alpha / (1.0 - problem.alpha) * float(np.trace(k @ problem.noise_cov))
    )
    residual = float(np.linalg.norm(riccati_map(problem, k) - k, "fro"))
    return RiccatiSolution(k, gain, noise_constant, it, residual)


def value_at(sol: RiccatiSolution, z) -> float:
    """Expected discounted cost from state z under the optimal policy."""
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != sol.k_matrix.shape[0]:
        raise ValueError(f"state dimension {z.shape[0]} != {sol.k_matrix.shape[0]}")
    return float(z @ sol.k_matrix @ z) + sol.noise_constant


def optimal_action(sol: RiccatiSolution, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != sol.gain.shape[1]:
        raise ValueError(f"state dimension {z.shape[0]} != {sol.gain.shape[1]}")
    return -sol.gain @ z


def spectral_radius(a: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Spectral radius via power iteration on A'A... returned as |lambda|_max.

    Power iteration runs on A with a dense random start; for the small dense
    matrices used here it converges quickly, and a direct eigenvalue call
    serves as the fallback when the iteration stalls (defective/tied moduli).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    prev = 0.0
    for _ in range(max_iter):
        w = a @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - prev) < tol * max(1.0, norm):
            return norm
        prev = norm
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def lyapunov_stationary_cov(
    a_matrix: np.ndarray,
    noise_cov: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Stationary covariance of x' = A x + xi via fixed-point iteration.

    Iterates L <- A L A' + Sigma from zero; converges geometrically at rate
    rho(A)^2, which the precondition rho(A) < 1 guarantees.
    """
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    sigma = _check_symmetric("noise_cov", noise_cov)
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius {rho:.6f} >= 1")
    lam = np.zeros_like(sigma)
    for _ in range(max_iter):
        nxt = a @ lam @ a.T + sigma
        nxt = 0.5 * (nxt + nxt.T)
        if float(np.linalg.norm(nxt - lam, "fro")) < tol:
            return nxt
        lam = nxt
    raise IterationLimitError(
        f"no convergence within {max_iter} iterations",
        float(np.linalg.norm(a @ lam @ a.T + sigma - lam, "fro")),
    )


def lyapunov_direct(a_matrix: np.ndarray, noise_cov: np.ndarray) -> np.ndarray:
    """Solve L = A L A' + Sigma exactly through the vectorized linear system.

    Internal cross-check for the iterative solver: (I - A (x) A) vec(L) = vec(Sigma).
    """
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    sigma = _check_symmetric("noise_cov", noise_cov)
    n = a.shape[0]
    lhs = np.eye(n * n) - np.kron(a, a)
    lam = np.linalg.solve(lhs, sigma.ravel()).reshape(n, n)
    return 0.5 * (lam + lam.T)


def matrix_to_csv(m: np.ndarray, fp: IO[str]) -> None:
    """Row-major comma-separated dump with a shape header line."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    fp.write(f"rows={m.shape[0]},cols={m.shape[1]}\n")
    for row in m:
        fp.write(",".join(repr(float(v)) for v in row) + "\n")
