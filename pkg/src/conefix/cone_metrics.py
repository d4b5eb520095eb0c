"""Metrics and seminorms on the positive orthant of R^n.

Everything here is a closed-form coordinatewise reduction. Vectors may be
passed either as :class:`ConeVector` or as anything ``numpy.asarray`` accepts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

ArrayLike = Union["ConeVector", np.ndarray, list, tuple]


@dataclass(frozen=True)
class ConeVector:
    """A point of R^n, optionally required to lie in the open orthant."""

    entries: np.ndarray
    positive: bool = False

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ValueError("ConeVector needs at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ConeVector entries must be finite")
        if self.positive and np.any(arr <= 0):
            raise ValueError("ConeVector flagged positive has a nonpositive entry")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __len__(self):
        return self.entries.size

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def to_json(self) -> list:
        return [float(v) for v in self.entries]

    @classmethod
    def from_json(cls, data, positive: bool = False) -> "ConeVector":
        if not isinstance(data, list):
            raise ValueError("vector must be a JSON array of numbers")
        return cls(np.asarray(data, dtype=float), positive=positive)


def as_vector(x: ArrayLike, name: str = "x", positive: bool = False) -> np.ndarray:
    """Return a finite 1-d float array, checking positivity if asked."""
    if isinstance(x, ConeVector):
        arr = x.entries
    else:
        arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size < 1:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    if positive and np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


def _pair(y, x, y_positive=False):
    y = as_vector(y, "y", positive=y_positive)
    x = as_vector(x, "x", positive=True)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {y.size} vs {x.size}")
    return y, x


def scale_upper(y: ArrayLike, x: ArrayLike) -> float:
    """M(y/x): the least b with y <= b*x (x strictly positive)."""
    y, x = _pair(y, x)
    return float(np.max(y / x))


def scale_lower(y: ArrayLike, x: ArrayLike) -> float:
    """m(y/x): the greatest a with a*x <= y (x strictly positive)."""
    y, x = _pair(y, x)
    return float(np.min(y / x))


def hilbert_metric(x: ArrayLike, y: ArrayLike) -> float:
    """Hilbert's projective metric log M(y/x) - log m(y/x)."""
    y, x = _pair(y, x, y_positive=True)
    r = y / x
    return float(np.log(np.max(r)) - np.log(np.min(r)))


def thompson_metric(x: ArrayLike, y: ArrayLike) -> float:
    """Thompson's metric max(log M(y/x), -log m(y/x))."""
    y, x = _pair(y, x, y_positive=True)
    r = y / x
    return float(max(np.log(np.max(r)), -np.log(np.min(r))))


def local_norm(x: ArrayLike, u: ArrayLike) -> float:
    """The order-unit norm ||x||_u = max_i |x_i| / u_i."""
    x, u = _pair(x, u)
    return float(np.max(np.abs(x) / u))


def oscillation(x: ArrayLike, u: Optional[ArrayLike] = None) -> float:
    """omega_u(x) = M(x/u) - m(x/u); ``u`` defaults to the all-ones vector."""
    x = as_vector(x)
    if u is None:
        return float(np.max(x) - np.min(x))
    x, u = _pair(x, u)
    r = x / u
    return float(np.max(r) - np.min(r))


def log_exp_conjugate(
    direction: Literal["to_additive", "to_multiplicative"], x: ArrayLike
) -> ConeVector:
    """Coordinatewise log (orthant -> R^n) or exp (R^n -> orthant).

    Under this map Thompson's metric becomes the sup-norm distance.
    """
    if direction == "to_additive":
        return ConeVector(np.log(as_vector(x, positive=True)))
    if direction == "to_multiplicative":
        out = np.exp(as_vector(x))
        if not np.all(np.isfinite(out)) or np.any(out <= 0):
            raise ValueError("exp overflow/underflow leaves the open orthant")
        return ConeVector(out, positive=True)
    raise ValueError(f"unknown direction {direction!r}")


# Normalizing functionals psi, stored as probability vectors.

def uniform_psi(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def coordinate_psi(n: int, i: int) -> np.ndarray:
    if not 0 <= i < n:
        raise ValueError(f"coordinate {i} out of range for n={n}")
    psi = np.zeros(n)
    psi[i] = 1.0
    return psi


def check_psi(psi: ArrayLike, n: int) -> np.ndarray:
    psi = as_vector(psi, "psi")
    if psi.size != n:
        raise ValueError(f"psi has length {psi.size}, expected {n}")
    if np.any(psi < 0) or abs(psi.sum() - 1.0) > 1e-12:
        raise ValueError("psi must be a probability vector (nonnegative, sums to 1)")
    return psi


def normalize_to_slice(x: ArrayLike, u: ArrayLike, psi: Optional[ArrayLike] = None) -> np.ndarray:
    """Rescale positive x so that psi(x) = psi(u)."""
    x = as_vector(x, positive=True)
    u = as_vector(u, "u", positive=True)
    psi = uniform_psi(x.size) if psi is None else check_psi(psi, x.size)
    return x * (psi @ u) / (psi @ x)
