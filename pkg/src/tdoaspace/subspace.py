"""The feasible subspace of the TDOA space and relaxed denoising.

Noiseless TDOA vectors satisfy the zero-sum conditions
-tau_i0 + tau_j0 - tau_ji = 0 for every triple of sensors containing the
reference, i.e. they lie in the n-dimensional kernel of the constraint matrix
C.  Relaxed denoising is the orthogonal projection onto that kernel under the
inner product <u, v> = u^T Sigma^-1 v, which preserves all information the
measurements carry about the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .geometry import canonical_pairs, num_pairs, order_from_pairs
from .noise import NoiseSpec


def constraint_matrix(n: int) -> np.ndarray:
    """The (q-n, q) matrix C whose kernel is the feasible subspace.

    Row for the pair (j, i), i >= 1, encodes -tau_i0 + tau_j0 - tau_ji = 0.
    Rows follow the canonical ordering of the non-reference pairs.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    q = num_pairs(n)
    pairs = canonical_pairs(n)
    C = np.zeros((q - n, q))
    for row, (j, i) in enumerate(pairs[n:]):
        C[row, i - 1] = -1.0   # tau_i0 is the (i-1)-th reference pair
        C[row, j - 1] = 1.0
        C[row, n + row] = -1.0
    return C


def reduction_matrix(n: int) -> np.ndarray:
    """The (q, n) matrix G with tau = G tau_NR: identity block over the
    reference pairs, then one row (-1 at i, +1 at j) per pair (j, i)."""
    if n < 2:
        raise ValueError("n must be >= 2")
    q = num_pairs(n)
    pairs = canonical_pairs(n)
    G = np.zeros((q, n))
    G[:n, :n] = np.eye(n)
    for row, (j, i) in enumerate(pairs[n:]):
        G[n + row, i - 1] = -1.0
        G[n + row, j - 1] = 1.0
    return G


@dataclass(frozen=True)
class ProjectionOperator:
    """Projector P onto the feasible subspace under the Sigma^-1 metric.

    basis holds n columns orthonormal with respect to <u, v>_{Sigma^-1};
    P is idempotent and self-adjoint in that metric.
    """

    matrix: np.ndarray
    basis: np.ndarray
    noise: NoiseSpec
    n: int
    method: str = "closed_form"

    @property
    def q(self) -> int:
        return self.matrix.shape[0]


def weighted_gram_schmidt(vectors: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Modified Gram-Schmidt under <u, v> = u^T Sigma^-1 v.

    A vector is re-orthogonalized once when any projection coefficient
    exceeds half of its incoming norm (classical GS loses orthogonality in
    ill-conditioned metrics).
    """
    vectors = np.asarray(vectors, dtype=float)
    basis: list[np.ndarray] = []
    solved: list[np.ndarray] = []  # cached Sigma^-1 v for each basis vector
    for col in vectors.T:
        w = col.copy()
        prior = np.sqrt(w @ noise.solve(w))
        if prior == 0.0:
            raise ValueError("zero vector passed to Gram-Schmidt")
        redo = False
        for v, sv in zip(basis, solved):
            coef = w @ sv
            w = w - coef * v
            if abs(coef) > 0.5 * prior:
                redo = True
        if redo:
            for v, sv in zip(basis, solved):
                w = w - (w @ sv) * v
        nrm = np.sqrt(max(w @ noise.solve(w), 0.0))
        if nrm <= 1e-12 * prior:
            raise ValueError("linearly dependent vectors passed to Gram-Schmidt")
        w /= nrm
        basis.append(w)
        solved.append(noise.solve(w))
    return np.column_stack(basis)


def projection_operator(n: int, noise: NoiseSpec,
                        method: str = "closed_form") -> ProjectionOperator:
    """Build the projector onto the feasible subspace.

    closed_form computes P = G (G^T Sigma^-1 G)^-1 G^T Sigma^-1 through SPD
    solves; gram_schmidt orthonormalizes the columns of G under the Sigma^-1
    inner product and assembles P = V (Sigma^-1 V)^T.  Both constructions
    agree to machine precision on well-conditioned covariances.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    q = num_pairs(n)
    if noise.q != q:
        raise ValueError(f"covariance is {noise.q}x{noise.q}, expected {q}x{q}")
    G = reduction_matrix(n)
    if method == "closed_form":
        W = noise.solve(G)                      # Sigma^-1 G
        M = G.T @ W                             # n x n, SPD
        cho = cho_factor(M, lower=True)
        P = G @ cho_solve(cho, W.T)
        L = np.tril(cho[0])
        basis = solve_triangular(L, G.T, lower=True).T   # G L^-T
    elif method == "gram_schmidt":
        basis = weighted_gram_schmidt(G, noise)
        P = basis @ noise.solve(basis).T
    else:
        raise ValueError(f"unknown method {method!r}")
    return ProjectionOperator(matrix=P, basis=basis, noise=noise, n=n, method=method)


def denoise(tau_hat, proj: ProjectionOperator) -> np.ndarray:
    """Project measurements onto the feasible subspace: P tau_hat.

    Accepts a single vector or a (batch, q) stack; feasible inputs are fixed
    points.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    if tau_hat.shape[-1] != proj.q:
        raise ValueError(f"expected last dimension {proj.q}, got {tau_hat.shape}")
    return tau_hat @ proj.matrix.T


def nonredundant(tau_hat, noise: NoiseSpec) -> np.ndarray:
    """Weighted least-squares reduction to the n reference TDOAs:
    (G^T Sigma^-1 G)^-1 G^T Sigma^-1 tau_hat, the first n components of the
    denoised vector."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    n = order_from_pairs(noise.q)
    if tau_hat.shape[-1] != noise.q:
        raise ValueError(f"expected last dimension {noise.q}, got {tau_hat.shape}")
    G = reduction_matrix(n)
    W = noise.solve(G)
    M = G.T @ W
    cho = cho_factor(M, lower=True)
    return tau_hat @ cho_solve(cho, W.T).T


def mahalanobis_norm(v, noise: NoiseSpec) -> float:
    """sqrt(v^T Sigma^-1 v); zero iff v = 0."""
    v = np.asarray(v, dtype=float)
    if v.shape != (noise.q,):
        raise ValueError(f"expected shape ({noise.q},), got {v.shape}")
    return float(np.sqrt(max(v @ noise.solve(v), 0.0)))


def subspace_residual(tau) -> float:
    """Feasibility diagnostic: max-norm of C tau (zero on feasible vectors)."""
    tau = np.asarray(tau, dtype=float)
    n = order_from_pairs(tau.shape[-1])
    C = constraint_matrix(n)
    return float(np.abs(tau @ C.T).max())
