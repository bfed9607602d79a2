"""Finite-state generator algebra: validation, invariant measures, skeleton
transition matrices via uniformization, row tilting, Perron roots by power
iteration, exponential functionals, and the spectral abscissa of a
diagonally-perturbed generator.

All matrices are dense numpy arrays; states are 1..M externally and 0-based
internally.  Dominant eigenvalues are only ever needed for (shifted)
nonnegative irreducible matrices, so power iteration is the sole eigensolver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
INVARIANT_RESIDUAL_TOL = 1e-10
EIG_TOL = 1e-13
POISSON_TAIL = 1e-14
MAX_POWER_ITER = 100_000


class MarkovError(ValueError):
    pass


class ConvergenceError(MarkovError):
    def __init__(self, message, iterations):
        super().__init__(f"{message} after {iterations} iterations")
        self.iterations = iterations


@dataclass
class GeneratorDiagnostics:
    negative_entries: list = field(default_factory=list)  # (i, j, value), 1-based
    row_sum_violations: list = field(default_factory=list)  # (i, sum), 1-based
    irreducible: bool = False

    @property
    def conservative(self) -> bool:
        return not self.negative_entries and not self.row_sum_violations

    def as_dict(self):
        return {
            "conservative": self.conservative,
            "irreducible": self.irreducible,
            "negative_entries": [[i, j, v] for i, j, v in self.negative_entries],
            "row_sum_violations": [[i, s] for i, s in self.row_sum_violations],
        }


def _as_matrix(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
        raise MarkovError(f"expected a square matrix, got shape {Q.shape}")
    return Q


def is_irreducible(Q) -> bool:
    """Strong connectivity of the positive off-diagonal rate graph."""
    Q = _as_matrix(Q)
    M = Q.shape[0]
    adj = Q > 0
    np.fill_diagonal(adj, False)

    def reachable(a):
        seen = np.zeros(M, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = a[frontier].any(axis=0) & ~seen
            frontier = np.flatnonzero(nxt).tolist()
            seen |= nxt
        return bool(seen.all())

    return reachable(adj) and reachable(adj.T)


def validate_generator(Q, tol: float = ROW_SUM_TOL) -> GeneratorDiagnostics:
    """Diagnostics for conservativeness and irreducibility; never raises."""
    Q = _as_matrix(Q)
    diag = GeneratorDiagnostics()
    M = Q.shape[0]
    for i in range(M):
        for j in range(M):
            if i != j and Q[i, j] < -tol:
                diag.negative_entries.append((i + 1, j + 1, float(Q[i, j])))
        s = float(Q[i].sum())
        if abs(s) > tol:
            diag.row_sum_violations.append((i + 1, s))
    diag.irreducible = is_irreducible(Q)
    return diag


def invariant_measure(Q) -> np.ndarray:
    """Stationary distribution mu with mu Q = 0, sum(mu) = 1.

    One row of Q^T is replaced by the normalization constraint and the system
    is solved by partially-pivoted Gaussian elimination.  Raises for reducible
    generators (singular system or residual beyond tolerance).
    """
    Q = _as_matrix(Q)
    M = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(M)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise MarkovError("singular system: generator is reducible") from exc
    residual = np.abs(mu @ Q).max()
    if residual > INVARIANT_RESIDUAL_TOL or mu.min() < -INVARIANT_RESIDUAL_TOL:
        raise MarkovError(
            f"invariant measure residual {residual:.3e} exceeds tolerance; "
            "generator is likely reducible"
        )
    return mu


def skeleton_transition(Q, tau: float) -> np.ndarray:
    """P = exp(tau Q) by uniformization, truncated at Poisson tail < 1e-14.

    Nonnegativity-preserving by construction; rows are renormalized to sum
    exactly to 1.
    """
    Q = _as_matrix(Q)
    if tau <= 0:
        raise MarkovError(f"skeleton step must be positive, got {tau}")
    M = Q.shape[0]
    lam = float(np.max(-np.diag(Q)))
    if lam <= 0:
        return np.eye(M)
    A = np.eye(M) + Q / lam
    r = lam * tau
    # term-by-term accumulation of the Poisson mixture sum_k w_k A^k
    w = np.exp(-r)
    term = np.eye(M)
    P = w * term
    mass = w
    k = 0
    while 1.0 - mass > POISSON_TAIL:
        k += 1
        w *= r / k
        term = term @ A
        P += w * term
        mass += w
        if k > 100_000:  # unreachable for sane inputs
            raise ConvergenceError("uniformization series did not converge", k)
    P = np.maximum(P, 0.0)
    P /= P.sum(axis=1, keepdims=True)
    return P


def tilt(P, theta) -> np.ndarray:
    """Row tilting: entry (i, j) becomes e^{theta(i)} P_ij."""
    P = _as_matrix(P)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (P.shape[0],):
        raise MarkovError(f"tilt vector length {theta.shape} != {P.shape[0]}")
    return np.exp(theta)[:, None] * P


def perron_root(P, tol: float = EIG_TOL, max_iter: int = MAX_POWER_ITER) -> float:
    """Dominant eigenvalue of a nonnegative primitive matrix by power iteration.

    Convergence: successive Rayleigh quotients within tol.  Raises on the zero
    matrix, on negative entries, and on non-convergence.
    """
    P = _as_matrix(P)
    if P.min() < 0:
        raise MarkovError("perron_root requires a nonnegative matrix")
    if P.max() == 0:
        raise MarkovError("perron_root of the zero matrix is undefined")
    M = P.shape[0]
    v = np.full(M, 1.0 / M)
    lam_prev = np.inf
    for it in range(1, max_iter + 1):
        w = P @ v
        lam = float(v @ w) / float(v @ v)
        nw = np.abs(w).sum()
        if nw == 0:
            raise MarkovError("power iteration collapsed to zero vector")
        v = w / nw
        if abs(lam - lam_prev) < tol:
            return lam
        lam_prev = lam
    raise ConvergenceError("power iteration did not converge", max_iter)


def exp_functional(mu, P, theta, n: int) -> float:
    """E_mu[exp(sum_{k=0}^{n-1} theta(Y_k))] for the P-chain, via n mat-vec
    products with the tilted matrix."""
    P = _as_matrix(P)
    mu = np.asarray(mu, dtype=float)
    if n < 0:
        raise MarkovError("n must be nonnegative")
    Pt = tilt(P, theta)
    r = np.ones(P.shape[0])
    for _ in range(n):
        r = Pt @ r
    return float(mu @ r)


def spectral_abscissa(Q, C, p: float) -> float:
    """eta = -max Re(spec(Q + p diag(C))) for a conservative irreducible Q.

    Computed by shifting: with s = max_i(q_i - p C_i) + 1 the matrix
    B = Q + p diag(C) + s I is nonnegative with positive diagonal, so its
    dominant eigenvalue is real and equals the spectral bound plus s.
    """
    Q = _as_matrix(Q)
    C = np.asarray(C, dtype=float)
    if C.shape != (Q.shape[0],):
        raise MarkovError(f"C has length {C.shape}, expected {Q.shape[0]}")
    if not is_irreducible(Q):
        raise MarkovError("spectral_abscissa requires an irreducible generator")
    q = -np.diag(Q)
    s = float(np.max(q - p * C)) + 1.0
    B = Q + p * np.diag(C) + s * np.eye(Q.shape[0])
    return -(perron_root(B) - s)
