"""Measurement-noise models and the SPD covariance wrapper.

NoiseSpec holds the covariance Sigma that defines the Mahalanobis metric on
the TDOA space; it caches a Cholesky factorization so Sigma^-1 is never formed
explicitly.  NoiseModel covers the four sampling distributions used by the
simulation harness (Gaussian, uniform, uniform+Gaussian, Laplacian).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class NoiseSpec:
    """A symmetric positive-definite covariance matrix (meters^2).

    Degenerate (semidefinite) matrices are rejected rather than regularized.
    """

    def __init__(self, sigma, model: "NoiseModel | None" = None):
        sigma = np.asarray(sigma, dtype=float).copy()
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("covariance must be a square matrix")
        if not np.all(np.isfinite(sigma)):
            raise ValueError("covariance must be finite")
        scale = max(1.0, np.abs(sigma).max())
        if np.abs(sigma - sigma.T).max() > 1e-12 * scale:
            raise ValueError("covariance must be symmetric")
        try:
            self._cho = cho_factor(sigma, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        if np.diag(self._cho[0]).min() <= 0:
            raise ValueError("covariance must be positive definite")
        sigma.flags.writeable = False
        self.sigma = sigma
        self.model = model

    @property
    def q(self) -> int:
        return self.sigma.shape[0]

    def solve(self, b) -> np.ndarray:
        """Sigma^-1 b through the cached Cholesky factor."""
        return cho_solve(self._cho, np.asarray(b, dtype=float))

    @classmethod
    def iid(cls, variance: float, q: int, model: "NoiseModel | None" = None) -> "NoiseSpec":
        if variance <= 0:
            raise ValueError("variance must be positive")
        return cls(variance * np.eye(q), model=model)

    def submatrix(self, indices) -> "NoiseSpec":
        idx = np.asarray(indices, dtype=int)
        return NoiseSpec(self.sigma[np.ix_(idx, idx)], model=self.model)

    def __repr__(self):
        return f"NoiseSpec(q={self.q})"


@dataclass(frozen=True)
class NoiseModel:
    """Sampling distribution for i.i.d. per-pair measurement noise.

    kind is one of "gaussian", "uniform", "uniform_gaussian", "laplacian".
    sigma is a standard deviation in meters; half_width the uniform support
    half-width in meters.  The Laplacian scale is sigma/sqrt(2) so that its
    standard deviation equals sigma.
    """

    kind: str
    sigma: float | None = None
    half_width: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "uniform_gaussian", "laplacian"):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.kind in ("gaussian", "laplacian", "uniform_gaussian"):
            if self.sigma is None or self.sigma <= 0:
                raise ValueError(f"{self.kind} noise needs sigma > 0")
        if self.kind in ("uniform", "uniform_gaussian"):
            if self.half_width is None or self.half_width <= 0:
                raise ValueError(f"{self.kind} noise needs half_width > 0")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls("gaussian", sigma=sigma)

    @classmethod
    def uniform(cls, half_width: float) -> "NoiseModel":
        return cls("uniform", half_width=half_width)

    @classmethod
    def uniform_gaussian(cls, half_width: float, sigma: float) -> "NoiseModel":
        return cls("uniform_gaussian", sigma=sigma, half_width=half_width)

    @classmethod
    def laplacian(cls, sigma: float) -> "NoiseModel":
        return cls("laplacian", sigma=sigma)

    def variance(self) -> float:
        """Second moment per coordinate."""
        if self.kind == "gaussian":
            return self.sigma**2
        if self.kind == "uniform":
            return self.half_width**2 / 3.0
        if self.kind == "uniform_gaussian":
            return self.half_width**2 / 3.0 + self.sigma**2
        return self.sigma**2  # laplacian

    def covariance(self, q: int) -> np.ndarray:
        return self.variance() * np.eye(q)

    def spec(self, q: int) -> NoiseSpec:
        return NoiseSpec(self.covariance(q), model=self)

    def sample(self, q: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (q,) if size is None else (size, q)
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size=shape)
        if self.kind == "uniform":
            return rng.uniform(-self.half_width, self.half_width, size=shape)
        if self.kind == "uniform_gaussian":
            return (rng.uniform(-self.half_width, self.half_width, size=shape)
                    + rng.normal(0.0, self.sigma, size=shape))
        return rng.laplace(0.0, self.sigma / np.sqrt(2.0), size=shape)


def sample_noise(model: NoiseModel, q: int, seed, size: int | None = None) -> np.ndarray:
    """Draw i.i.d. noise; seed may be an int, a SeedSequence, or a Generator."""
    if q < 1:
        raise ValueError("q must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return model.sample(q, rng, size=size)


def uniform_half_width(sample_rate: float, speed: float) -> float:
    """Support half-width c/(2 fs) of the sampling-grid quantization error."""
    if sample_rate <= 0 or speed <= 0:
        raise ValueError("sample_rate and speed must be positive")
    return speed / (2.0 * sample_rate)
