"""Source-position estimators on (raw or denoised) TDOA inputs.

Three closed-form localizers plus a local maximum-likelihood refinement:

- ls_locate: unconstrained linear least squares over (x, r) from the n
  reference TDOAs, obtained by squaring ||x - m_k|| = r + tau_k and
  subtracting the reference equation.
- srd_ls_locate: the same residual minimized subject to ||x - m_ref||^2 = r^2,
  solved exactly as a generalized trust-region subproblem with a safeguarded
  bisection+secant search over the multiplier.
- gs_locate: multiple-reference linear least squares over (x, r_i) consuming
  any set of pairs, one equation per pair.
- ml_refine: Gauss-Newton descent on the squared Mahalanobis residual.

Batched variants (leading trial axis) back the Monte-Carlo harness; the
scalar functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficiencyError
from .geometry import SensorArray, canonical_pairs, tdoa_full, tdoa_jacobian
from .noise import NoiseSpec

GTRS_MAX_ITER = 200
GTRS_PHI_TOL = 1e-12


@dataclass
class LocalizationResult:
    x: np.ndarray
    ranges: np.ndarray          # estimated reference range(s), meters
    residual: float
    status: str = "ok"          # ok | fallback | failed
    iterations: int = 0


def _normal_solve(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched least squares through the normal equations; rows whose system
    is singular fall back to lstsq and are flagged not-ok."""
    M = np.einsum("bmu,bmv->buv", A, A)
    rhs = np.einsum("bmu,bm->bu", A, b)
    B, u = rhs.shape
    ok = np.ones(B, dtype=bool)
    try:
        y = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        y = np.empty_like(rhs)
        for k in range(B):
            sol, _, rank, _ = np.linalg.lstsq(A[k], b[k], rcond=None)
            y[k] = sol
            ok[k] = rank == u
    bad = ~np.isfinite(y).all(axis=1)
    if bad.any():
        ok &= ~bad
        y[bad] = 0.0
    return y, ok


def _range_difference_system(array: SensorArray, taus: np.ndarray, ref: int):
    """Rows 2 m_k^T x + 2 tau_k r = |m_k|^2 - tau_k^2 in coordinates with
    m_ref at the origin; taus has shape (B, n)."""
    rel = np.delete(array.positions, ref, axis=0) - array.positions[ref]
    B = taus.shape[0]
    n, dim = rel.shape
    A = np.empty((B, n, dim + 1))
    A[:, :, :dim] = 2.0 * rel
    A[:, :, dim] = 2.0 * taus
    b = np.einsum("nd,nd->n", rel, rel)[None, :] - taus**2
    return A, b


def _check_reduced(array: SensorArray, tau_nr, ref: int) -> np.ndarray:
    if not 0 <= ref <= array.n:
        raise ValueError(f"reference index {ref} out of range 0..{array.n}")
    tau_nr = np.asarray(tau_nr, dtype=float)
    if tau_nr.shape[-1] != array.n:
        raise ValueError(f"expected {array.n} reference TDOAs, got {tau_nr.shape}")
    if array.n < array.dim + 1:
        raise ValueError(f"need n >= dim+1 = {array.dim + 1} reference TDOAs")
    return np.atleast_2d(tau_nr)


def ls_locate_batch(array: SensorArray, tau_nr, ref: int = 0):
    """Vectorized unconstrained LS; returns (x, r, ok) with a leading trial
    axis."""
    taus = _check_reduced(array, tau_nr, ref)
    A, b = _range_difference_system(array, taus, ref)
    y, ok = _normal_solve(A, b)
    x = y[:, :array.dim] + array.positions[ref]
    return x, y[:, array.dim], ok


def ls_locate(array: SensorArray, tau_nr, ref: int = 0) -> LocalizationResult:
    """Unconstrained linear least squares from the reference TDOA set."""
    taus = _check_reduced(array, tau_nr, ref)
    A, b = _range_difference_system(array, taus, ref)
    if np.linalg.matrix_rank(A[0]) < array.dim + 1:
        raise RankDeficiencyError("degenerate array geometry: LS system is rank deficient")
    x, r, ok = ls_locate_batch(array, taus, ref)
    y = np.r_[x[0] - array.positions[ref], r[0]]
    residual = float(np.linalg.norm(A[0] @ y - b[0]))
    return LocalizationResult(x=x[0], ranges=np.array([r[0]]), residual=residual,
                              status="ok" if ok[0] else "failed")


def _gtrs_batch(M: np.ndarray, rhs: np.ndarray, dim: int,
                max_iter: int = GTRS_MAX_ITER, phi_tol: float = GTRS_PHI_TOL):
    """Minimize |A y - b|^2 subject to y^T D y = 0, D = diag(1,..,1,-1),
    given the normal matrix M = A^T A and rhs = A^T b per trial.

    The multiplier solves phi(lam) = y(lam)^T D y(lam) = 0 on the interval
    where M + lam D stays positive definite; phi is strictly decreasing
    there, so a bracketed secant search with bisection safeguards converges.
    Trials without a sign change keep the unconstrained solution, flagged.
    """
    B, u = rhs.shape
    d_sign = np.ones(u)
    d_sign[dim] = -1.0
    D = np.diag(d_sign)

    def solve_at(lam, Msub, rsub):
        Ms = Msub + lam[:, None, None] * D
        y = np.linalg.solve(Ms, rsub[..., None])[..., 0]
        phi = np.einsum("bi,i,bi->b", y, d_sign, y)
        return y, phi

    lam = np.zeros(B)
    fallback = np.zeros(B, dtype=bool)
    y0, phi0 = solve_at(lam, M, rhs)
    open_rows = np.abs(phi0) > phi_tol
    if open_rows.any():
        idx = np.nonzero(open_rows)[0]
        Ms, rs = M[idx], rhs[idx]
        # positive-definiteness interval from the generalized eigenvalues of
        # (D, M): lam in (-1/mu_max, -1/mu_min) with mu_min < 0 < mu_max
        L = np.linalg.cholesky(Ms)
        S = np.linalg.solve(L, np.broadcast_to(D, Ms.shape))
        mu = np.linalg.eigvalsh(np.linalg.solve(L, np.transpose(S, (0, 2, 1))))
        valid = (mu[:, 0] < 0) & (mu[:, -1] > 0)
        lo = np.where(valid, -1.0 / mu[:, -1], -1.0)
        hi = np.where(valid, -1.0 / mu[:, 0], 1.0)
        span = hi - lo
        a = lo + 1e-9 * span
        b_up = hi - 1e-9 * span
        _, fa = solve_at(a, Ms, rs)
        _, fb = solve_at(b_up, Ms, rs)
        bracket = valid & (fa > 0) & (fb < 0)
        fallback[idx[~bracket]] = True

        sub = np.nonzero(bracket)[0]
        a, b_up, fa, fb = a[sub], b_up[sub], fa[sub], fb[sub]
        Msub, rsub = Ms[sub], rs[sub]
        rows = idx[sub]
        lam_sub = 0.5 * (a + b_up)
        live = np.ones(len(sub), dtype=bool)
        for it in range(max_iter):
            if not live.any():
                break
            w = np.nonzero(live)[0]
            width = b_up[w] - a[w]
            denom = fb[w] - fa[w]
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = (a[w] * fb[w] - b_up[w] * fa[w]) / denom
            mid = 0.5 * (a[w] + b_up[w])
            guard = (~np.isfinite(cand) | (cand <= a[w] + 1e-3 * width)
                     | (cand >= b_up[w] - 1e-3 * width) | (it % 4 == 3))
            cand = np.where(guard, mid, cand)
            _, fc = solve_at(cand, Msub[w], rsub[w])
            lam_sub[w] = cand
            hit = np.abs(fc) <= phi_tol
            pos = fc > 0
            a[w] = np.where(pos & ~hit, cand, a[w])
            fa[w] = np.where(pos & ~hit, fc, fa[w])
            b_up[w] = np.where(~pos & ~hit, cand, b_up[w])
            fb[w] = np.where(~pos & ~hit, fc, fb[w])
            shrunk = (b_up[w] - a[w]) <= 1e-15 * np.maximum(1.0, np.abs(cand))
            live[w[hit | shrunk]] = False
        lam[rows] = lam_sub

    y, phi = solve_at(lam, M, rhs)
    return y, phi, fallback


def srd_ls_locate_batch(array: SensorArray, tau_nr, ref: int = 0):
    """Vectorized constrained (squared-range-difference) LS; returns
    (x, r, fallback_mask)."""
    taus = _check_reduced(array, tau_nr, ref)
    A, b = _range_difference_system(array, taus, ref)
    M = np.einsum("bmu,bmv->buv", A, A)
    rhs = np.einsum("bmu,bm->bu", A, b)
    y, _, fallback = _gtrs_batch(M, rhs, array.dim)
    x = y[:, :array.dim] + array.positions[ref]
    r = np.abs(y[:, array.dim])
    return x, r, fallback


def srd_ls_locate(array: SensorArray, tau_nr, ref: int = 0) -> LocalizationResult:
    """Squared-range-difference least squares with the exact range constraint
    ||x - m_ref|| = r enforced through the trust-region multiplier."""
    taus = _check_reduced(array, tau_nr, ref)
    A, b = _range_difference_system(array, taus, ref)
    if np.linalg.matrix_rank(A[0]) < array.dim + 1:
        raise RankDeficiencyError("degenerate array geometry: system is rank deficient")
    x, r, fallback = srd_ls_locate_batch(array, taus, ref)
    y = np.r_[x[0] - array.positions[ref], r[0]]
    residual = float(np.linalg.norm(A[0] @ y - b[0]))
    return LocalizationResult(x=x[0], ranges=np.array([r[0]]), residual=residual,
                              status="fallback" if fallback[0] else "ok")


def _gs_system(array: SensorArray, taus: np.ndarray, pairs):
    """One equation 2(m_j - m_i)^T x + 2 tau_ji r_i = |m_j|^2 - |m_i|^2 - tau^2
    per pair, in centroid coordinates; unknowns are x and one range per
    distinct lower sensor index."""
    centroid = array.positions.mean(axis=0)
    pos = array.positions - centroid
    jarr = np.array([j for j, _ in pairs])
    iarr = np.array([i for _, i in pairs])
    lower = sorted(set(iarr.tolist()))
    col = {i: array.dim + k for k, i in enumerate(lower)}
    B, m = taus.shape
    u = array.dim + len(lower)
    A = np.zeros((B, m, u))
    A[:, :, :array.dim] = 2.0 * (pos[jarr] - pos[iarr])
    A[:, np.arange(m), [col[i] for i in iarr]] = 2.0 * taus
    b = (np.einsum("md,md->m", pos[jarr], pos[jarr])
         - np.einsum("md,md->m", pos[iarr], pos[iarr]))[None, :] - taus**2
    return A, b, centroid, lower


def gs_locate_batch(array: SensorArray, taus, pairs=None):
    """Vectorized multiple-reference LS on an arbitrary pair set; returns
    (x, ranges, ok)."""
    if pairs is None:
        pairs = canonical_pairs(array.n)
    taus = np.atleast_2d(np.asarray(taus, dtype=float))
    if taus.shape[-1] != len(pairs):
        raise ValueError(f"expected {len(pairs)} TDOAs, got {taus.shape}")
    A, b, centroid, _ = _gs_system(array, taus, pairs)
    if A.shape[1] < A.shape[2]:
        raise RankDeficiencyError(
            f"{A.shape[1]} equations cannot determine {A.shape[2]} unknowns")
    y, ok = _normal_solve(A, b)
    x = y[:, :array.dim] + centroid
    return x, y[:, array.dim:], ok


def gs_locate(array: SensorArray, tau, pairs=None) -> LocalizationResult:
    """Multiple-reference linear least squares on the full (or any given)
    TDOA pair set."""
    if pairs is None:
        pairs = canonical_pairs(array.n)
    taus = np.atleast_2d(np.asarray(tau, dtype=float))
    A, b, centroid, lower = _gs_system(array, taus, pairs)
    if A.shape[1] < A.shape[2] or np.linalg.matrix_rank(A[0]) < A.shape[2]:
        raise RankDeficiencyError("pair set does not determine position and ranges")
    x, ranges, ok = gs_locate_batch(array, taus, pairs)
    y = np.r_[x[0] - centroid, ranges[0]]
    residual = float(np.linalg.norm(A[0] @ y - b[0]))
    return LocalizationResult(x=x[0], ranges=ranges[0], residual=residual,
                              status="ok" if ok[0] else "failed")


def ml_cost(array: SensorArray, tau_hat, noise: NoiseSpec, x) -> float:
    """Squared Mahalanobis distance between the measurements and the forward
    map at x; zero iff tau_hat is the noiseless vector of x."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    if tau_hat.shape != (array.q,) or noise.q != array.q:
        raise ValueError("measurement/covariance size must match the array")
    rho = tau_hat - tdoa_full(array, x)
    return float(rho @ noise.solve(rho))


def ml_refine(array: SensorArray, tau_hat, noise: NoiseSpec, x0,
              max_iter: int = 100, grad_tol: float = 1e-10) -> LocalizationResult:
    """Gauss-Newton descent on the Mahalanobis cost from x0.

    Step acceptance is by backtracking, so the cost is non-increasing across
    iterations; stops when the gradient norm drops below grad_tol.
    """
    x = np.asarray(x0, dtype=float).copy()
    cost = ml_cost(array, tau_hat, noise, x)
    status = "ok"
    iterations = 0
    for iterations in range(1, max_iter + 1):
        try:
            J = tdoa_jacobian(array, x)
        except ValueError:
            status = "failed"
            break
        rho = np.asarray(tau_hat, dtype=float) - tdoa_full(array, x)
        w_rho = noise.solve(rho)
        grad = -2.0 * J.T @ w_rho
        if np.linalg.norm(grad) <= grad_tol:
            break
        H = J.T @ noise.solve(J)
        try:
            step = np.linalg.solve(H, J.T @ w_rho)
        except np.linalg.LinAlgError:
            status = "failed"
            break
        alpha = 1.0
        accepted = False
        while alpha >= 1e-8:
            x_new = x + alpha * step
            new_cost = ml_cost(array, tau_hat, noise, x_new)
            if new_cost <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        x, cost = x_new, new_cost
        if alpha * np.linalg.norm(step) <= 1e-14 * (1.0 + np.linalg.norm(x)):
            break  # stationary to double precision; gradient floor reached
    ranges = np.linalg.norm(x - array.positions[0])
    return LocalizationResult(x=x, ranges=np.array([ranges]),
                              residual=float(np.sqrt(cost)), status=status,
                              iterations=iterations)
