"""Random measurement ensembles: dense complex Gaussian and coded diffraction.

Both ensembles expose the same operator surface (``forward``, ``adjoint``,
``measure``) so the objective and the solvers never branch on the model.

DFT convention: the forward transform is the unnormalized sum with kernel
``exp(-2j*pi*j*k/n)`` (``scipy.fft.fftn``). Its adjoint ``F*`` is therefore
``n * ifftn``. One "DFT call" is one full n-point (or n1 x n2-point)
transform, so an L-mask apply costs L calls.
"""
from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.fft
import scipy.linalg

from .signals import DimensionError

__all__ = [
    "OpCounter",
    "GaussianEnsemble",
    "CDPEnsemble",
    "IntensityData",
    "SingularMaskError",
    "measure_intensity",
    "add_poisson_noise",
    "realized_snr_db",
    "write_ensemble",
    "read_ensemble",
]


class SingularMaskError(ValueError):
    """The masks leave some pixel unobserved (sum of |b_l|^2 vanishes)."""


class OpCounter:
    """Cumulative operator-application counts for one solver run.

    ``dft_calls`` counts single n-point DFTs (CDP model); ``matvecs`` counts
    dense matrix applications (Gaussian model). The two are never mixed.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.dft_calls = 0
        self.matvecs = 0

    def add_dft(self, k: int):
        with self._lock:
            self.dft_calls += int(k)

    def add_matvec(self, k: int = 1):
        with self._lock:
            self.matvecs += int(k)

    def __repr__(self):
        return f"OpCounter(dft_calls={self.dft_calls}, matvecs={self.matvecs})"


def _int_seed(seed) -> Optional[int]:
    return int(seed) if isinstance(seed, (int, np.integer)) and not isinstance(seed, bool) else None


def _vector(z, n: int) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim != 1 or z.size != n:
        raise DimensionError(f"expected a vector of length {n}, got shape {z.shape}")
    return z


class GaussianEnsemble:
    """Dense m x n matrix ``A`` whose r-th row is ``a_r^*``.

    Entries have independent real and imaginary parts drawn from N(0, 1/2),
    so ``E|A_rj|^2 = 1``.
    """

    model = "gaussian"

    def __init__(self, matrix, seed: Optional[int] = None, counter: Optional[OpCounter] = None):
        matrix = np.asarray(matrix, dtype=np.complex128)
        if matrix.ndim != 2:
            raise DimensionError("Gaussian ensemble needs a 2-D matrix")
        matrix.setflags(write=False)
        self.matrix = matrix
        self.seed = seed
        self.counter = counter if counter is not None else OpCounter()
        self._qr = None

    @classmethod
    def sample(cls, n: int, m: int, seed=None) -> "GaussianEnsemble":
        rng = np.random.default_rng(seed)
        scale = np.sqrt(0.5)
        matrix = scale * (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        return cls(matrix, seed=_int_seed(seed))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,)

    def with_counter(self, counter: Optional[OpCounter] = None) -> "GaussianEnsemble":
        """Same matrix, fresh (or given) counter. The QR cache is shared."""
        other = GaussianEnsemble.__new__(GaussianEnsemble)
        other.__dict__.update(self.__dict__)
        other.counter = counter if counter is not None else OpCounter()
        return other

    def forward(self, z) -> np.ndarray:
        z = _vector(z, self.n)
        self.counter.add_matvec()
        return self.matrix @ z

    def adjoint(self, w) -> np.ndarray:
        w = _vector(w, self.m)
        self.counter.add_matvec()
        return self.matrix.conj().T @ w

    def least_squares(self, w) -> np.ndarray:
        """argmin_z ||Az - w|| via a cached reduced QR of A (one Q^* apply)."""
        w = _vector(w, self.m)
        if self._qr is None:
            self._qr = np.linalg.qr(self.matrix, mode="reduced")
        q, r = self._qr
        self.counter.add_matvec()
        return scipy.linalg.solve_triangular(r, q.conj().T @ w)

    def measure(self, x) -> np.ndarray:
        return np.abs(self.forward(x)) ** 2


def octanary_masks(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """Masks with entries b1*b2, b1 uniform on {1,-1,i,-i}, b2 in {sqrt(2)/2, sqrt(3)} w.p. 4/5, 1/5."""
    units = np.array([1, -1, 1j, -1j])
    b1 = units[rng.integers(0, 4, size=(count, n))]
    b2 = np.where(rng.random((count, n)) < 0.8, np.sqrt(2) / 2, np.sqrt(3))
    return b1 * b2


def binary_masks(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    return rng.integers(0, 2, size=(count, n)).astype(np.complex128)


class CDPEnsemble:
    """L coded diffraction patterns ``y_{l,k} = |(F (b_l o x))_k|^2``.

    Args:
        masks: array ``(L, n)`` of mask values applied to the flattened signal.
        shape: signal shape, ``(n,)`` or ``(n1, n2)``; 2-D signals use the 2-D DFT.
        pattern: ``"octanary"``, ``"binary"`` or ``"custom"``.
    """

    model = "cdp"

    def __init__(self, masks, shape=None, pattern: str = "custom", seed: Optional[int] = None,
                 counter: Optional[OpCounter] = None):
        masks = np.atleast_2d(np.asarray(masks, dtype=np.complex128))
        n = masks.shape[1]
        shape = (n,) if shape is None else tuple(int(s) for s in shape)
        if len(shape) not in (1, 2) or int(np.prod(shape)) != n:
            raise DimensionError(f"shape {shape} does not match mask length {n}")
        masks.setflags(write=False)
        self.masks = masks
        self.shape = shape
        self.pattern = pattern
        self.seed = seed
        self.counter = counter if counter is not None else OpCounter()
        energy = np.sum(np.abs(masks) ** 2, axis=0)
        self.rank_deficient = bool(np.any(energy == 0))
        self._weight = np.where(energy == 0, 1.0, energy)

    @classmethod
    def sample(cls, shape, num_masks: int, pattern: str = "octanary", seed=None,
               include_ones: bool = False) -> "CDPEnsemble":
        """Draw ``num_masks`` random masks.

        ``include_ones`` replaces the first mask by all ones (a plain Fourier
        measurement); the binary preset uses it so every pixel is observed.
        """
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        n = int(np.prod(shape))
        rng = np.random.default_rng(seed)
        if pattern == "octanary":
            masks = octanary_masks(rng, num_masks, n)
        elif pattern == "binary":
            masks = binary_masks(rng, num_masks, n)
        else:
            raise ValueError(f"unknown mask pattern {pattern!r}")
        if include_ones:
            masks[0] = 1.0
        return cls(masks, shape, pattern, seed=_int_seed(seed))

    @property
    def num_masks(self) -> int:
        return self.masks.shape[0]

    @property
    def n(self) -> int:
        return self.masks.shape[1]

    @property
    def m(self) -> int:
        return self.num_masks * self.n

    def with_counter(self, counter: Optional[OpCounter] = None) -> "CDPEnsemble":
        other = CDPEnsemble.__new__(CDPEnsemble)
        other.__dict__.update(self.__dict__)
        other.counter = counter if counter is not None else OpCounter()
        return other

    def _axes(self):
        return tuple(range(-len(self.shape), 0))

    def forward(self, z) -> np.ndarray:
        z = _vector(z, self.n)
        stack = (self.masks * z).reshape((self.num_masks,) + self.shape)
        self.counter.add_dft(self.num_masks)
        return scipy.fft.fftn(stack, axes=self._axes()).reshape(-1)

    def _inverse_stack(self, w) -> np.ndarray:
        w = _vector(w, self.m)
        stack = w.reshape((self.num_masks,) + self.shape)
        self.counter.add_dft(self.num_masks)
        return scipy.fft.ifftn(stack, axes=self._axes()).reshape(self.num_masks, self.n)

    def adjoint(self, w) -> np.ndarray:
        """``sum_l conj(b_l) o F^*(w_l)`` with ``F^* = n * ifft``."""
        return self.n * np.sum(self.masks.conj() * self._inverse_stack(w), axis=0)

    def pseudo_inverse(self, w, allow_singular: bool = False) -> np.ndarray:
        """Moore-Penrose left inverse: ``sum_l conj(b_l) o ifft(w_l) / sum_l |b_l|^2``.

        Zero-energy pixels raise :class:`SingularMaskError` unless
        ``allow_singular`` is set, in which case their weight is taken as 1.
        """
        if self.rank_deficient and not allow_singular:
            raise SingularMaskError("masks leave some pixels unobserved; include an all-ones mask")
        return np.sum(self.masks.conj() * self._inverse_stack(w), axis=0) / self._weight

    def least_squares(self, w) -> np.ndarray:
        return self.pseudo_inverse(w)

    def measure(self, x) -> np.ndarray:
        return np.abs(self.forward(x)) ** 2


@dataclass(frozen=True)
class IntensityData:
    """Measured intensities plus (optionally) the signal that produced them."""

    y: np.ndarray
    x_true: Optional[np.ndarray] = None
    snr_db: Optional[float] = None

    @property
    def m(self) -> int:
        return self.y.size


def measure_intensity(ensemble, x) -> IntensityData:
    x = np.asarray(x)
    y = ensemble.measure(x)
    y.setflags(write=False)
    return IntensityData(y=y, x_true=x.copy())


def realized_snr_db(y_clean, y_noisy) -> float:
    y_clean = np.asarray(y_clean, dtype=float)
    err = np.sum((np.asarray(y_noisy, dtype=float) - y_clean) ** 2)
    return float(10 * np.log10(np.sum(y_clean**2) / err))


def add_poisson_noise(data: IntensityData, target_snr_db: float, seed=None) -> IntensityData:
    """Scaled Poisson noise ``Poisson(alpha*y)/alpha`` reaching ``target_snr_db`` on average.

    ``E||yhat - y||^2 = sum(y)/alpha``, hence ``alpha = 10^(SNR/10) sum(y)/||y||^2``.
    """
    y = np.asarray(data.y, dtype=float)
    if np.any(y < 0):
        raise ValueError("intensities must be nonnegative")
    total = y.sum()
    if total <= 0:
        raise ValueError("cannot reach a finite SNR on all-zero measurements")
    alpha = 10 ** (target_snr_db / 10) * total / np.sum(y**2)
    rng = np.random.default_rng(seed)
    noisy = rng.poisson(alpha * y) / alpha
    noisy.setflags(write=False)
    return replace(data, y=noisy, snr_db=float(target_snr_db))


# -- binary container -------------------------------------------------------
#
# layout (little endian):
#   magic   5s   b"PLNS1"
#   kind    B    0 = gaussian, 1 = cdp
#   pattern B    0 = custom, 1 = octanary, 2 = binary
#   itemsz  B    8 = complex64, 16 = complex128
#   seed    q    -1 when unknown
#   ndim    I
#   dims    ndim x Q   gaussian: (m, n); cdp: (L, *signal_shape)
#   payload raw row-major complex values

MAGIC = b"PLNS1"
_PATTERNS = {"custom": 0, "octanary": 1, "binary": 2}
_HEAD = struct.Struct("<5sBBBqI")


def write_ensemble(ensemble, path, dtype=np.complex128):
    dtype = np.dtype(dtype)
    if dtype not in (np.complex64, np.complex128):
        raise ValueError("payload must be complex64 or complex128")
    if isinstance(ensemble, GaussianEnsemble):
        kind, pattern, payload = 0, 0, ensemble.matrix
        dims = payload.shape
    else:
        kind, pattern, payload = 1, _PATTERNS[ensemble.pattern], ensemble.masks
        dims = (ensemble.num_masks,) + ensemble.shape
    seed = -1 if ensemble.seed is None else int(ensemble.seed)
    with open(Path(path), "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, kind, pattern, dtype.itemsize, seed, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        fh.write(np.ascontiguousarray(payload, dtype=dtype.newbyteorder("<")).tobytes())


def read_ensemble(path):
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError("not a PLNS1 ensemble file")
    _, kind, pattern, itemsize, seed, ndim = _HEAD.unpack_from(raw, 0)
    offset = _HEAD.size
    dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    dtype = np.dtype("<c8" if itemsize == 8 else "<c16")
    count = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).astype(np.complex128)
    seed = None if seed < 0 else seed
    if kind == 0:
        return GaussianEnsemble(payload.reshape(dims), seed=seed)
    names = {v: k for k, v in _PATTERNS.items()}
    num_masks, shape = dims[0], tuple(dims[1:])
    return CDPEnsemble(payload.reshape(num_masks, -1), shape, names[pattern], seed=seed)
