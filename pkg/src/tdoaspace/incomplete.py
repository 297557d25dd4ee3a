"""Denoising when only q-s of the q TDOAs were measured.

Deleting the coordinates of the missing pairs maps the feasible subspace onto
a subspace V_S of dimension at most n; projecting the available measurements
onto V_S keeps all positional information, and when dim(V_S) = n the deleted
coordinates can be reconstructed exactly from the projected vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from .errors import RankDeficiencyError
from .geometry import canonical_pairs, num_pairs, pair_index_map
from .noise import NoiseSpec
from .subspace import ProjectionOperator, reduction_matrix, weighted_gram_schmidt

# Singular values below this fraction of the largest count as zero when
# extracting an independent spanning set (entries of I_S G are O(1)).
RANK_RTOL = 1e-9


def normalize_index_set(S, n: int) -> tuple[tuple[int, int], ...]:
    """Validate a collection of missing pairs and sort it canonically."""
    idx_map = pair_index_map(n)
    seen = set()
    for pair in S:
        pair = tuple(int(v) for v in pair)
        if pair not in idx_map:
            raise ValueError(f"{pair} is not a valid (j, i) pair for n={n}")
        if pair in seen:
            raise ValueError(f"duplicate pair {pair} in index set")
        seen.add(pair)
    return tuple(sorted(seen, key=idx_map.__getitem__))


def selection_matrix(S, q: int) -> np.ndarray:
    """The (q-s, q) matrix dropping the coordinates of the pairs in S from a
    full TDOA vector (identity with the s corresponding rows removed)."""
    n = _order_from_q(q)
    missing = normalize_index_set(S, n)
    idx_map = pair_index_map(n)
    drop = {idx_map[p] for p in missing}
    keep = [k for k in range(q) if k not in drop]
    return np.eye(q)[keep]


def _order_from_q(q: int) -> int:
    from .geometry import order_from_pairs
    return order_from_pairs(q)


@dataclass(frozen=True)
class PartialProjection:
    """Projector onto V_S for the available coordinates, plus the bookkeeping
    needed to reconstruct the full TDOA set when dim(V_S) = n."""

    matrix: np.ndarray            # (q-s, q-s)
    basis: np.ndarray             # (q-s, dim_vs)
    dim_vs: int
    selection: np.ndarray         # (q-s, q)
    missing: tuple[tuple[int, int], ...]
    available: tuple[tuple[int, int], ...]
    n: int
    noise: NoiseSpec
    reduction: np.ndarray         # (q-s, n), the available rows of G
    reduction_pinv: np.ndarray    # (n, q-s) when dim_vs = n

    @property
    def q(self) -> int:
        return self.matrix.shape[0]


def partial_subspace(S, noise_S, n: int | None = None) -> PartialProjection:
    """Build the projector for an incomplete measurement set.

    The spanning set {I_S g_k} is reduced to an independent set by
    column-pivoted QR with singular-value thresholding, then orthonormalized
    under the Sigma_S^-1 inner product.
    """
    noise_S = noise_S if isinstance(noise_S, NoiseSpec) else NoiseSpec(noise_S)
    S = tuple(tuple(int(v) for v in p) for p in S)
    if n is None:
        # q - s = noise_S.q determines q, hence n
        q = noise_S.q + len(S)
        n = _order_from_q(q)
    q = num_pairs(n)
    missing = normalize_index_set(S, n)
    if noise_S.q != q - len(missing):
        raise ValueError(
            f"covariance is {noise_S.q}x{noise_S.q}, expected {q - len(missing)}")
    I_S = selection_matrix(missing, q)
    idx_map = pair_index_map(n)
    drop = {idx_map[p] for p in missing}
    available = tuple(p for k, p in enumerate(canonical_pairs(n)) if k not in drop)
    G = reduction_matrix(n)
    span = I_S @ G
    svals = np.linalg.svd(span, compute_uv=False)
    rank = int(np.sum(svals > RANK_RTOL * svals[0])) if svals[0] > 0 else 0
    if rank == 0:
        raise ValueError("no independent directions survive the deletion")
    _, _, piv = qr(span, mode="economic", pivoting=True)
    independent = span[:, piv[:rank]]
    basis = weighted_gram_schmidt(independent, noise_S)
    P_S = basis @ noise_S.solve(basis).T
    pinv = np.linalg.pinv(span) if rank == n else np.zeros((n, q - len(missing)))
    return PartialProjection(
        matrix=P_S, basis=basis, dim_vs=rank, selection=I_S,
        missing=missing, available=available, n=n, noise=noise_S,
        reduction=span, reduction_pinv=pinv,
    )


def complete_projection(pp: PartialProjection) -> bool:
    """True when the available pairs determine the full TDOA set."""
    return pp.dim_vs == pp.n


def denoise_partial(tau_S, pp: PartialProjection) -> np.ndarray:
    """Project available measurements onto V_S: P_S tau_S (vector or stack)."""
    tau_S = np.asarray(tau_S, dtype=float)
    if tau_S.shape[-1] != pp.q:
        raise ValueError(f"expected last dimension {pp.q}, got {tau_S.shape}")
    return tau_S @ pp.matrix.T


def reconstruct_full(tau_S, pp: PartialProjection) -> np.ndarray:
    """The unique feasible q-vector whose available coordinates match tau_S.

    Solves the reference coordinates w from the available rows of G in the
    least-squares sense (exact when tau_S lies in V_S) and returns G w.
    Requires dim(V_S) = n.
    """
    if pp.dim_vs < pp.n:
        raise RankDeficiencyError(
            f"available pairs span only {pp.dim_vs} of {pp.n} dimensions; "
            "reconstruction is not unique")
    tau_S = np.asarray(tau_S, dtype=float)
    if tau_S.shape[-1] != pp.q:
        raise ValueError(f"expected last dimension {pp.q}, got {tau_S.shape}")
    w = tau_S @ pp.reduction_pinv.T
    return w @ reduction_matrix(pp.n).T


def reconstructed_covariance(pp: PartialProjection) -> np.ndarray:
    """Covariance of the reconstructed full set, G Cov(w) G^T, with w the
    reference coordinates solved from the denoised available measurements."""
    if pp.dim_vs < pp.n:
        raise RankDeficiencyError("reconstruction requires dim(V_S) = n")
    M = pp.reduction_pinv @ pp.matrix
    cov_w = M @ pp.noise.sigma @ M.T
    G = reduction_matrix(pp.n)
    return G @ cov_w @ G.T


def partial_from_projection(proj: ProjectionOperator) -> PartialProjection:
    """The trivial partial projector with nothing missing (P_S = P)."""
    n = proj.n
    G = reduction_matrix(n)
    return PartialProjection(
        matrix=proj.matrix, basis=proj.basis, dim_vs=n,
        selection=np.eye(proj.q), missing=(), available=canonical_pairs(n),
        n=n, noise=proj.noise, reduction=G, reduction_pinv=np.linalg.pinv(G),
    )
