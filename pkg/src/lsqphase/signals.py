"""Complex vector primitives and phase-invariant error metrics.

Signals are plain numpy arrays in the numerical kernels. :class:`ComplexSignal`
is the value type that carries the 2-D shape of an image alongside its
row-major flattened data, together with a flag telling whether the signal is
known to be real.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

SUCCESS_THRESHOLD = 1e-5


class DimensionError(ValueError):
    """Raised when vector lengths or shapes are incompatible."""


class UndefinedReferenceError(ValueError):
    """Raised when a relative error is requested against a zero reference."""


@dataclass(frozen=True)
class ComplexSignal:
    """Immutable flattened signal with shape metadata.

    Args:
        data: 1-D array of samples (row-major flattening for images).
        shape: ``(n,)`` or ``(n1, n2)``.
        real: if True every imaginary part must be zero and ``data`` is
            stored as float64.
    """

    data: np.ndarray
    shape: Tuple[int, ...]
    real: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 1:
            raise DimensionError("data must be one-dimensional (flattened)")
        shape = tuple(int(s) for s in self.shape)
        if len(shape) not in (1, 2) or int(np.prod(shape)) != data.size:
            raise DimensionError(f"shape {shape} does not match length {data.size}")
        if self.real:
            if np.iscomplexobj(data):
                if np.any(data.imag != 0):
                    raise ValueError("real-constrained signal has nonzero imaginary part")
                data = data.real
            data = data.astype(np.float64)
        else:
            data = data.astype(np.complex128)
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_array(cls, array, real: bool = False) -> "ComplexSignal":
        array = np.asarray(array)
        return cls(array.reshape(-1), array.shape, real=real)

    @property
    def n(self) -> int:
        return self.data.size

    def image(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def __len__(self):
        return self.data.size


@dataclass(frozen=True)
class AlignmentResult:
    phase: complex
    distance: float
    relative_error: float


def _check_same_length(u, v):
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape} vs {v.shape}")


def _as_vector(v) -> np.ndarray:
    if isinstance(v, ComplexSignal):
        return v.data
    return np.asarray(v).reshape(-1)


def real_inner(u, v) -> float:
    """Real part of the Hermitian inner product ``sum(conj(u) * v)``."""
    u = _as_vector(u)
    v = _as_vector(v)
    _check_same_length(u, v)
    return float(np.real(np.vdot(u, v)))


def dist_to_solution_set(z, x, mode: str = "complex") -> AlignmentResult:
    """Distance from ``z`` to the set of global-phase copies of ``x``.

    In complex mode the optimal phase is ``<x, z>/|<x, z>|`` (taken as 1 when
    the inner product vanishes). In real mode only the signs +1 and -1 are
    candidates.
    """
    z = _as_vector(z)
    x = _as_vector(x)
    _check_same_length(z, x)
    if mode == "complex":
        ip = np.vdot(x, z)
        mag = abs(ip)
        c = complex(ip / mag) if mag > 0 else 1.0 + 0.0j
        distance = float(np.linalg.norm(z - c * x))
    elif mode == "real":
        d_plus = float(np.linalg.norm(z - x))
        d_minus = float(np.linalg.norm(z + x))
        c, distance = (1.0 + 0.0j, d_plus) if d_plus <= d_minus else (-1.0 + 0.0j, d_minus)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    norm_x = float(np.linalg.norm(x))
    relerr = distance / norm_x if norm_x > 0 else float("inf")
    return AlignmentResult(phase=c, distance=distance, relative_error=relerr)


def relative_error(z, x, mode: str = "complex") -> float:
    if not np.any(_as_vector(x)):
        raise UndefinedReferenceError("relative error undefined for x = 0")
    return dist_to_solution_set(z, x, mode).relative_error


def success(z, x, threshold: float = SUCCESS_THRESHOLD, mode: str = "complex") -> bool:
    """True iff the phase-aligned relative error is strictly below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return relative_error(z, x, mode) < threshold


def complex_gaussian(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Samples of ``N(0, scale^2) + i N(0, scale^2)``."""
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
