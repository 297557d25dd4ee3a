"""Closed-form planar localization with three sensors.

For three non-collinear sensors in the plane the pair (tau_10, tau_20)
determines the source up to a known ambiguity structure: the feasible pairs
fill part of a hexagon cut by the triangle inequalities, an inscribed ellipse
separates a 1-to-1 region from three 2-to-1 lobes, and the inverse map is the
root of a quadratic.  This module classifies a measured pair and returns the
admissible source positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NotInImageError

TOL_HEX = 1e-9   # hexagon-boundary tolerance (meters-scale geometry)
TOL_DEG = 1e-9   # |a| below this counts as "on the ellipse"
TOL_INV = 1e-8   # forward-map residual accepted on inversion round trips

# 90-degree rotation used throughout the closed-form inversion.
_H = np.array([[0.0, -1.0], [1.0, 0.0]])


class RegionClass(Enum):
    """Where a (tau_10, tau_20) pair sits relative to the image of the
    forward map, with the number of admissible sources."""

    INTERIOR_ELLIPSE = "interior_ellipse"   # a < 0: unique source
    ON_ELLIPSE = "on_ellipse"               # a = 0 in image: finite root plus a source at infinity
    TWO_TO_ONE = "two_to_one"               # b > 0 lobe inside the hexagon: two sources
    ON_BOUNDARY = "on_boundary"             # hexagon boundary in image (coincident roots)
    NOT_IN_IMAGE = "not_in_image"

    @property
    def multiplicity(self) -> int:
        return {
            RegionClass.INTERIOR_ELLIPSE: 1,
            RegionClass.ON_ELLIPSE: 1,
            RegionClass.TWO_TO_ONE: 2,
            RegionClass.ON_BOUNDARY: 1,
            RegionClass.NOT_IN_IMAGE: 0,
        }[self]


class PlanarConfig:
    """Three non-collinear 2D sensors with the derived quantities used by the
    closed-form inversion (displacements, their norms, and the parallelogram
    area W)."""

    def __init__(self, m0, m1, m2):
        pts = np.array([m0, m1, m2], dtype=float)
        if pts.shape != (3, 2) or not np.all(np.isfinite(pts)):
            raise ValueError("need three finite 2D sensor positions")
        self.m0, self.m1, self.m2 = pts
        self.d10_vec = self.m1 - self.m0
        self.d20_vec = self.m2 - self.m0
        self.d21_vec = self.m2 - self.m1
        self.d10 = float(np.linalg.norm(self.d10_vec))
        self.d20 = float(np.linalg.norm(self.d20_vec))
        self.d21 = float(np.linalg.norm(self.d21_vec))
        self.W = float(self.d10_vec[0] * self.d20_vec[1]
                       - self.d10_vec[1] * self.d20_vec[0])
        scale = max(self.d10, self.d20, self.d21)
        if scale <= 0 or abs(self.W) <= 1e-12 * scale**2:
            raise ValueError("sensors must be in general position (non-collinear)")

    @property
    def sensors(self) -> np.ndarray:
        return np.array([self.m0, self.m1, self.m2])

    @property
    def vertices(self) -> np.ndarray:
        """Hexagon vertices mapped from sources at m0, m1, m2."""
        return np.array([
            (self.d10, self.d20),
            (-self.d10, self.d21 - self.d10),
            (self.d21 - self.d20, -self.d20),
        ])


def aux_vectors(cfg: PlanarConfig, t) -> tuple[np.ndarray, np.ndarray]:
    """The direction v and offset l0 of the inversion line
    x = m0 + l0 + lambda v."""
    t10, t20 = float(t[0]), float(t[1])
    v = _H @ (t20 * cfg.d10_vec - t10 * cfg.d20_vec)
    l0 = _H @ ((cfg.d20**2 - t20**2) * cfg.d10_vec
               - (cfg.d10**2 - t10**2) * cfg.d20_vec) / (2.0 * cfg.W)
    return v, l0


def quadratic_coefficients(cfg: PlanarConfig, t) -> tuple[float, float, float]:
    """Coefficients of a lambda^2 + 2 b lambda + c = 0:
    a = |v|^2 - W^2, b = v . l0, c = |l0|^2 (always >= 0)."""
    v, l0 = aux_vectors(cfg, t)
    a = float(v @ v - cfg.W**2)
    b = float(v @ l0)
    c = float(l0 @ l0)
    return a, b, c


def hexagon_contains(cfg: PlanarConfig, t, tol: float = TOL_HEX) -> tuple[bool, bool]:
    """Triangle-inequality membership test; returns (inside, on_boundary)
    with boundary detected within tol."""
    t10, t20 = float(t[0]), float(t[1])
    slacks = np.array([
        cfg.d10 - abs(t10),
        cfg.d20 - abs(t20),
        cfg.d21 - abs(t20 - t10),
    ])
    inside = bool(np.all(slacks >= -tol))
    on_boundary = bool(inside and np.any(slacks <= tol))
    return inside, on_boundary


@dataclass(frozen=True)
class PlanarClassification:
    """Region label plus the inversion coefficients; b is oriented by
    sign(W) so that the feasible 2-to-1 lobes always satisfy b > 0
    (reflecting the sensor triple flips the raw v^T l0)."""

    region: RegionClass
    multiplicity: int
    a: float
    b: float
    c: float


def classify(cfg: PlanarConfig, t) -> PlanarClassification:
    """Classify a TDOA pair by the signs of a and b plus hexagon membership.

    The image is {a < 0} union {b > 0 inside the hexagon} together with the
    in-image parts of the boundary; within tolerance of a region edge the
    lower-multiplicity side wins.
    """
    a, b, c = quadratic_coefficients(cfg, t)
    b *= np.sign(cfg.W)
    inside, on_bd = hexagon_contains(cfg, t)
    if not inside:
        region = RegionClass.NOT_IN_IMAGE
    elif on_bd:
        point = np.asarray(t, dtype=float)
        at_vertex = bool(np.any(np.linalg.norm(cfg.vertices - point, axis=1) <= TOL_HEX))
        region = (RegionClass.ON_BOUNDARY if at_vertex or b > TOL_DEG
                  else RegionClass.NOT_IN_IMAGE)
    elif a < -TOL_DEG:
        region = RegionClass.INTERIOR_ELLIPSE
    elif abs(a) <= TOL_DEG:
        region = RegionClass.ON_ELLIPSE if b > TOL_DEG else RegionClass.NOT_IN_IMAGE
    else:
        region = RegionClass.TWO_TO_ONE if b > TOL_DEG else RegionClass.NOT_IN_IMAGE
    return PlanarClassification(region=region, multiplicity=region.multiplicity,
                                a=a, b=b, c=c)


def _stable_roots(a: float, b: float, c: float) -> tuple[float, float]:
    """Roots (lambda_+, lambda_-) of a x^2 + 2 b x + c = 0, computed in the
    multiply-conjugate form so that a -> 0 or b^2 >> |a c| do not cancel."""
    disc = b * b - a * c
    if disc < 0:
        # inside the image the discriminant is nonnegative up to rounding
        if disc < -1e-12 * max(b * b, abs(a * c), 1.0):
            raise NotInImageError("negative discriminant: no real inverse")
        disc = 0.0
    s = np.sqrt(disc)
    if b >= 0:
        lam_plus = -c / (b + s) if (b + s) != 0 else 0.0
        lam_minus = -(b + s) / a
    else:
        lam_plus = (-b + s) / a
        lam_minus = c / (s - b)
    return lam_plus, lam_minus


def invert(cfg: PlanarConfig, t,
           classification: PlanarClassification | None = None) -> list[np.ndarray]:
    """Admissible source positions for a TDOA pair.

    Returns one position where the forward map is 1-to-1 and two in the
    ambiguous lobes.  On the ellipse (a = 0) the second solution escapes to
    infinity; only the finite root -c/(2b) is returned.  Raises
    NotInImageError when the pair is infeasible.
    """
    cls = classification if classification is not None else classify(cfg, t)
    if cls.multiplicity == 0:
        raise NotInImageError(f"tau pair {tuple(np.asarray(t, float))} is not "
                              "in the image of the forward map")
    v, l0 = aux_vectors(cfg, t)
    v = v * np.sign(cfg.W)  # same orientation convention as the classified b
    a, b, c = cls.a, cls.b, cls.c
    base = cfg.m0 + l0
    if cls.region is RegionClass.ON_ELLIPSE:
        # degenerate quadratic: one finite root, the other at infinity
        return [base - (c / (2.0 * b)) * v]
    lam_plus, lam_minus = _stable_roots(a, b, c)
    if cls.multiplicity == 2:
        return [base + lam_plus * v, base + lam_minus * v]
    return [base + lam_plus * v]


def source_at_infinity(cls: PlanarClassification) -> bool:
    """True when the classified pair corresponds to a measurement whose
    second admissible source lies at infinity."""
    return cls.region is RegionClass.ON_ELLIPSE


def tdoa_pair(cfg: PlanarConfig, x) -> np.ndarray:
    """Forward map (tau_10, tau_20) for a planar source."""
    x = np.asarray(x, dtype=float)
    d = np.linalg.norm(x - cfg.sensors, axis=1)
    return np.array([d[1] - d[0], d[2] - d[0]])
