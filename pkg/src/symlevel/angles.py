"""Exact arithmetic for planar rotations and their cyclic subgroups.

Angles are plain floats in degrees, canonicalized to the half-open interval
(-180, 180]. The identity rotation is 0.0. Conversion to radians happens only
inside trigonometric kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

IDENTITY = 0.0

UNIFORM = "uniform"
GAUSSIAN = "gaussian"
CYCLIC = "cyclic"
FAMILIES = (UNIFORM, GAUSSIAN, CYCLIC)


class DegenerateReadoutError(ValueError):
    """Raised when a 2-vector is too close to zero to define a rotation."""


def canonicalize_angle(raw: float) -> float:
    """Reduce an angle in degrees to the canonical range (-180, 180].

    Idempotent; raises ValueError for non-finite input.
    """
    raw = float(raw)
    if not math.isfinite(raw):
        raise ValueError(f"angle must be finite, got {raw!r}")
    a = math.fmod(raw, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    # fmod can return -0.0; normalize so 0 has a single representation
    return a + 0.0


def compose(g: float, h: float) -> float:
    """Group operation: rotation by g followed by rotation by h (degrees)."""
    return canonicalize_angle(float(g) + float(h))


def inverse(g: float) -> float:
    """Inverse rotation; inverse(180) == 180 (self-inverse on the circle)."""
    return canonicalize_angle(-float(g))


def geodesic_distance(g: float, h: float) -> float:
    """Shortest arc between two rotations, in [0, 180] degrees.

    Respects circular wraparound: d(170, -170) == 20.
    """
    d = abs(canonicalize_angle(float(g) - float(h)))
    return d


def xi_from_vector(v: Sequence[float]) -> float:
    """Readout map from a 2-vector to a rotation angle.

    Returns the two-argument arctangent of (v[1], v[0]) in canonical degrees.
    Raises DegenerateReadoutError when the vector norm is below 1e-8.
    """
    v1, v2 = float(v[0]), float(v[1])
    norm = math.hypot(v1, v2)
    if norm <= 1e-8:
        raise DegenerateReadoutError(
            f"vector norm {norm:.3e} too small to define a rotation"
        )
    return canonicalize_angle(math.degrees(math.atan2(v2, v1)))


def cyclic_elements(n: int) -> tuple[float, ...]:
    """The n rotation angles of the cyclic group C_n, canonicalized.

    cyclic_elements(4) -> (0.0, 90.0, 180.0, -90.0)
    """
    if n < 1:
        raise ValueError(f"cyclic order must be >= 1, got {n}")
    return tuple(canonicalize_angle(k * 360.0 / n) for k in range(int(n)))


@dataclass(frozen=True)
class SymmetrySpec:
    """Per-class symmetry distribution: Uniform(theta), Gaussian(sigma) or Cyclic(n).

    Uniform(0) means no symmetry; Uniform(180) means full rotation.
    """

    family: str
    param: float

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown symmetry family {self.family!r}")
        if self.family == UNIFORM:
            if not 0.0 <= self.param <= 180.0:
                raise ValueError(f"uniform half-width must be in [0, 180], got {self.param}")
        elif self.family == GAUSSIAN:
            if self.param < 0.0:
                raise ValueError(f"gaussian sigma must be >= 0, got {self.param}")
        else:
            if self.param < 1 or self.param != int(self.param):
                raise ValueError(f"cyclic order must be an integer >= 1, got {self.param}")

    @property
    def order(self) -> int:
        if self.family != CYCLIC:
            raise ValueError("order is only defined for cyclic specs")
        return int(self.param)

    def describe(self) -> str:
        if self.family == CYCLIC:
            return f"cyclic({self.order})"
        return f"{self.family}({self.param:g})"


def sample_spec(spec: SymmetrySpec, rng: np.random.Generator) -> float:
    """Draw one rotation angle from a symmetry distribution.

    Uniform draws from U[-theta, theta]; Gaussian draws from N(0, sigma) and
    canonicalizes; Cyclic picks uniformly from cyclic_elements(n).
    """
    if spec.family == UNIFORM:
        if spec.param == 0.0:
            return 0.0
        return canonicalize_angle(rng.uniform(-spec.param, spec.param))
    if spec.family == GAUSSIAN:
        if spec.param == 0.0:
            return 0.0
        return canonicalize_angle(rng.normal(0.0, spec.param))
    elements = cyclic_elements(spec.order)
    return elements[int(rng.integers(0, len(elements)))]
