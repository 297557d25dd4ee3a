"""Covariance bookkeeping: denoising pushforward, CRLB, and first-order
propagation through the localizer cost functions.

For the additive Gaussian model the Fisher information at x is
J(x)^T Sigma^-1 J(x) with J the TDOA Jacobian; the induced RMSE floor is
sqrt(trace(FIM^-1)).  Estimator sensitivities A(x) = -H_xx^-1 H_xc are taken
by central finite differences of each cost at its noiseless minimizer, which
is solver-agnostic and checkable against Monte-Carlo covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import SensorArray, canonical_pairs, tdoa_full, tdoa_jacobian, tdoa_reduced
from .noise import NoiseSpec
from .subspace import ProjectionOperator

FD_STEP = 1e-5  # relative finite-difference step for the sensitivity matrices


@dataclass(frozen=True)
class CovarianceReport:
    """Covariance before and after denoising, with the PSD-ordering margin."""

    sigma_in: np.ndarray
    sigma_out: np.ndarray
    min_eig_diff: float
    std_in: np.ndarray
    std_out: np.ndarray


def denoised_covariance(proj: ProjectionOperator,
                        noise: NoiseSpec | None = None) -> CovarianceReport:
    """Pushforward P Sigma P^T of the measurement covariance through the
    denoising projector; Sigma - P Sigma P^T is positive semidefinite."""
    noise = noise if noise is not None else proj.noise
    if noise.q != proj.q:
        raise ValueError("covariance size must match the projector")
    P = proj.matrix
    sigma_out = P @ noise.sigma @ P.T
    sigma_out = 0.5 * (sigma_out + sigma_out.T)
    min_eig = float(np.linalg.eigvalsh(noise.sigma - sigma_out).min())
    return CovarianceReport(
        sigma_in=noise.sigma,
        sigma_out=sigma_out,
        min_eig_diff=min_eig,
        std_in=np.sqrt(np.diag(noise.sigma)),
        std_out=np.sqrt(np.clip(np.diag(sigma_out), 0.0, None)),
    )


def crlb(array: SensorArray, x, noise: NoiseSpec,
         pair_indices=None) -> tuple[np.ndarray, float]:
    """Fisher information matrix and the RMSE lower bound sqrt(trace(FIM^-1)).

    pair_indices restricts the measurement set to a subset of the canonical
    pairs; the covariance must match the selected size.
    """
    J = tdoa_jacobian(array, x)
    if pair_indices is not None:
        J = J[np.asarray(pair_indices, dtype=int)]
    if noise.q != J.shape[0]:
        raise ValueError(f"covariance is {noise.q}x{noise.q}, expected {J.shape[0]}")
    fim = J.T @ noise.solve(J)
    fim = 0.5 * (fim + fim.T)
    if np.linalg.cond(fim) > 1e12:
        raise NumericalError("singular Fisher information (degenerate geometry)")
    rlb = float(np.sqrt(np.trace(np.linalg.inv(fim))))
    return fim, rlb


def _cost_function(tag: str, array: SensorArray, noise: NoiseSpec | None, ref: int):
    """The scalar cost f(x, c) each localizer minimizes over x, with the range
    unknowns eliminated in closed form.  c is the localizer's input vector."""
    if tag in ("ls", "srdls"):
        rel = np.delete(array.positions, ref, axis=0) - array.positions[ref]
        norms = np.einsum("nd,nd->n", rel, rel)
        origin = array.positions[ref]
        if tag == "ls":
            def cost(x, c):
                xr = np.asarray(x) - origin
                u = 2.0 * rel @ xr - norms + c**2
                v = 2.0 * c
                vv = v @ v
                r = -(u @ v) / vv if vv > 0 else 0.0
                e = u + r * v
                return float(e @ e)
        else:
            def cost(x, c):
                xr = np.asarray(x) - origin
                r = np.linalg.norm(xr)
                e = 2.0 * rel @ xr + 2.0 * c * r - norms + c**2
                return float(e @ e)
        return cost
    if tag == "gs":
        pairs = canonical_pairs(array.n)
        centroid = array.positions.mean(axis=0)
        pos = array.positions - centroid
        jarr = np.array([j for j, _ in pairs])
        iarr = np.array([i for _, i in pairs])
        norm_diff = (np.einsum("md,md->m", pos[jarr], pos[jarr])
                     - np.einsum("md,md->m", pos[iarr], pos[iarr]))

        def cost(x, c):
            xr = np.asarray(x) - centroid
            u = 2.0 * (pos[jarr] - pos[iarr]) @ xr - norm_diff + c**2
            v = 2.0 * c
            e = u.copy()
            for i in np.unique(iarr):
                sel = iarr == i
                vv = v[sel] @ v[sel]
                r = -(u[sel] @ v[sel]) / vv if vv > 0 else 0.0
                e[sel] = u[sel] + r * v[sel]
            return float(e @ e)
        return cost
    if tag == "ml":
        if noise is None:
            raise ValueError("ml cost needs a NoiseSpec")

        def cost(x, c):
            rho = c - tdoa_full(array, np.asarray(x))
            return float(rho @ noise.solve(rho))
        return cost
    raise ValueError(f"unknown cost tag {tag!r}")


def cost_input(tag: str, array: SensorArray, x, ref: int = 0) -> np.ndarray:
    """The noiseless input vector of a localizer cost at source x."""
    if tag in ("ls", "srdls"):
        return tdoa_reduced(array, x, ref)
    return tdoa_full(array, x)


def estimator_sensitivity(tag: str, array: SensorArray, x,
                          noise: NoiseSpec | None = None, ref: int = 0) -> np.ndarray:
    """First-order sensitivity A(x) = -H_xx^-1 H_xc of the estimator argmin
    f(x, c) at (x, c) = (x, noiseless input), by central differences."""
    x = np.asarray(x, dtype=float)
    cost = _cost_function(tag, array, noise, ref)
    c0 = cost_input(tag, array, x, ref)
    dim, m = x.size, c0.size
    hx = FD_STEP * np.maximum(1.0, np.abs(x))
    hc = FD_STEP * np.maximum(1.0, np.abs(c0))

    def f(dx, dc):
        return cost(x + dx, c0 + dc)

    Hxx = np.empty((dim, dim))
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = hx[i]
        for k in range(i, dim):
            ek = np.zeros(dim)
            ek[k] = hx[k]
            if i == k:
                val = (f(2 * ei, 0) - 2 * f(np.zeros(dim), 0) + f(-2 * ei, 0)) / (4 * hx[i] ** 2)
            else:
                val = (f(ei + ek, 0) - f(ei - ek, 0) - f(-ei + ek, 0) + f(-ei - ek, 0)) \
                    / (4 * hx[i] * hx[k])
            Hxx[i, k] = Hxx[k, i] = val
    Hxc = np.empty((dim, m))
    zc = np.zeros(m)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = hx[i]
        for k in range(m):
            ek = zc.copy()
            ek[k] = hc[k]
            Hxc[i, k] = (f(ei, ek) - f(ei, -ek) - f(-ei, ek) + f(-ei, -ek)) \
                / (4 * hx[i] * hc[k])
    try:
        return -np.linalg.solve(Hxx, Hxc)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular cost Hessian at the noiseless minimizer") from exc


def _input_covariance(tag: str, n: int, cov: np.ndarray) -> np.ndarray:
    """Slice a full q x q covariance down to a localizer's input block
    (reference-0 TDOAs for ls/srdls)."""
    q = cov.shape[0]
    if tag in ("ls", "srdls") and q != n:
        return cov[:n, :n]
    return cov


def propagate_covariance(tag: str, array: SensorArray, x, noise: NoiseSpec,
                         input_cov=None, ref: int = 0) -> np.ndarray:
    """First-order estimator covariance A(x) Sigma_in A(x)^T.

    input_cov overrides the propagated covariance (e.g. the denoised
    pushforward P Sigma P^T); full q x q matrices are sliced to the
    reference block for the localizers that consume n TDOAs (ref = 0).
    """
    A = estimator_sensitivity(tag, array, x, noise=noise, ref=ref)
    cov = np.asarray(input_cov, dtype=float) if input_cov is not None else noise.sigma
    cov = _input_covariance(tag, array.n, cov)
    if cov.shape[0] != A.shape[1]:
        raise ValueError(f"input covariance is {cov.shape}, expected {A.shape[1]}")
    out = A @ cov @ A.T
    return 0.5 * (out + out.T)
