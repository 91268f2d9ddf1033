"""Least-squares intensity misfit ``f(z) = (1/2m) || |Az|^2 - y ||^2`` and its calculus.

Conventions follow the Frechet expansion

    f(z + h) = f(z) + 2 Re<h, grad f(z)> + Re<h, H_f[z] h> + ...

so the directional derivative along ``h`` is ``2 * real_inner(h, grad)`` and
the second directional derivative is ``2 * real_inner(h, H_f[z] h)``.

In real-constrained mode iterates are real vectors, the gradient is the real
part of the complex gradient and the Hessian is the real part of the complex
Hessian operator. Both are half the true real-variable derivatives, which only
rescales step sizes; the directional-derivative identities above still hold
for real directions.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .measurement import CDPEnsemble, IntensityData
from .signals import DimensionError

MAX_DENSE_N = 512


class CapabilityError(RuntimeError):
    """Requested dense construction exceeds the size guard."""


class Evaluation:
    """Lazy evaluation of ``f`` and ``grad f`` at one point.

    ``Az`` is computed once and shared by the cost and the gradient, so a full
    (f, g) evaluation costs one forward and one adjoint apply.
    """

    def __init__(self, objective: "Objective", z):
        self.objective = objective
        self.z = z

    @cached_property
    def Az(self) -> np.ndarray:
        return self.objective.ensemble.forward(self.z)

    @cached_property
    def residual(self) -> np.ndarray:
        return np.abs(self.Az) ** 2 - self.objective.y

    @cached_property
    def f(self) -> float:
        return float(np.dot(self.residual, self.residual) / (2 * self.objective.m))

    @cached_property
    def g(self) -> np.ndarray:
        obj = self.objective
        g = obj.ensemble.adjoint(self.Az * self.residual) / obj.m
        return g.real.copy() if obj.real else g


class Objective:
    """Cost, gradient and Hessian information for one intensity data set.

    Args:
        ensemble: a :class:`GaussianEnsemble` or :class:`CDPEnsemble`.
        data: :class:`IntensityData` or a plain array of intensities.
        mode: ``"complex"`` or ``"real"`` (real-constrained iterates).
    """

    def __init__(self, ensemble, data, mode: str = "complex"):
        if mode not in ("complex", "real"):
            raise ValueError(f"unknown mode {mode!r}")
        if isinstance(data, IntensityData):
            y, self.x_true = data.y, data.x_true
        else:
            y, self.x_true = data, None
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != ensemble.m:
            raise DimensionError(f"{y.size} intensities for an ensemble with m = {ensemble.m}")
        self.ensemble = ensemble
        self.y = y
        self.m = y.size
        self.mode = mode

    @property
    def real(self) -> bool:
        return self.mode == "real"

    @property
    def n(self) -> int:
        return self.ensemble.n

    @property
    def counter(self):
        return self.ensemble.counter

    def norm_x_sq_estimate(self) -> float:
        """``mean(y)``, an unbiased estimate of ``||x||^2`` since ``E|a_r^* x|^2 = ||x||^2``."""
        return float(np.mean(self.y))

    def with_counter(self, counter=None) -> "Objective":
        other = Objective.__new__(Objective)
        other.__dict__.update(self.__dict__)
        other.ensemble = self.ensemble.with_counter(counter)
        return other

    def _check(self, z) -> np.ndarray:
        z = np.asarray(z)
        if z.ndim != 1 or z.size != self.n:
            raise DimensionError(f"expected length {self.n}, got shape {z.shape}")
        return z

    def at(self, z) -> Evaluation:
        return Evaluation(self, self._check(z))

    def cost(self, z) -> float:
        return self.at(z).f

    def gradient(self, z) -> np.ndarray:
        return self.at(z).g

    def hessian_vec(self, z, h, Az=None) -> np.ndarray:
        """``H_f[z](h) = (1/m) [A*((2|Az|^2 - y) o Ah) + A*((Az)^2 o conj(Ah))]``."""
        z = self._check(z)
        h = self._check(h)
        ens = self.ensemble
        u = ens.forward(z) if Az is None else Az
        v = ens.forward(h)
        w = (2 * np.abs(u) ** 2 - self.y) * v + u**2 * np.conj(v)
        out = ens.adjoint(w) / self.m
        return out.real.copy() if self.real else out

    def hessian_matrix(self, z) -> np.ndarray:
        """Dense Hessian.

        Complex mode returns the 2n x 2n Hermitian block matrix acting on the
        stacked vector ``(h, conj(h))``; its quadratic form equals the second
        directional derivative. Real mode returns the n x n symmetric matrix
        ``(1/m) sum Re((2|a*z|^2 - y) a a^* + (a^* z)^2 a a^T)`` whose
        quadratic form is half the second directional derivative.
        """
        z = self._check(z)
        if self.n > MAX_DENSE_N:
            raise CapabilityError(f"dense Hessian limited to n <= {MAX_DENSE_N}")
        A = explicit_matrix(self.ensemble)
        u = A @ z
        d1 = 2 * np.abs(u) ** 2 - self.y
        d2 = u**2
        AH = A.conj().T
        top_left = AH @ (d1[:, None] * A) / self.m
        top_right = AH @ (d2[:, None] * A.conj()) / self.m
        if self.real:
            return np.real(top_left + top_right)
        bottom_left = A.T @ (np.conj(d2)[:, None] * A) / self.m
        bottom_right = A.T @ (d1[:, None] * A.conj()) / self.m
        return np.block([[top_left, top_right], [bottom_left, bottom_right]])

    def directional_derivatives(self, x, w, t: float):
        """First and second derivatives of ``t -> f(x + t w)``.

        ``f'(t) = (2/m) sum Re((|u|^2 - y) u conj(v))`` and
        ``f''(t) = (2/m) sum Re((2|u|^2 - y)|v|^2 + u^2 conj(v)^2)`` with
        ``u = A(x + t w)`` and ``v = A w``.
        """
        x = self._check(x)
        w = self._check(w)
        u = self.ensemble.forward(x + t * w)
        v = self.ensemble.forward(w)
        au2 = np.abs(u) ** 2
        d1 = 2.0 / self.m * np.sum(np.real((au2 - self.y) * u * np.conj(v)))
        d2 = 2.0 / self.m * np.sum(np.real((2 * au2 - self.y) * np.abs(v) ** 2 + u**2 * np.conj(v) ** 2))
        return float(d1), float(d2)


def explicit_matrix(ensemble) -> np.ndarray:
    """The m x n matrix of an ensemble (CDP rows ``f_k^* D_l``), not counted as DFT calls."""
    if isinstance(ensemble, CDPEnsemble):
        probe = ensemble.with_counter()
        eye = np.eye(ensemble.n, dtype=np.complex128)
        return np.stack([probe.forward(col) for col in eye], axis=1)
    return np.asarray(ensemble.matrix)


def expected_gradient(z, x) -> np.ndarray:
    """``E[grad f(z)] = (2||z||^2 - ||x||^2) z - (x^* z) x`` for z independent of the sampling."""
    z = np.asarray(z)
    x = np.asarray(x)
    return (2 * np.vdot(z, z).real - np.vdot(x, x).real) * z - np.vdot(x, z) * x


def expected_hessian(z, x, mode: str = "complex") -> np.ndarray:
    """Closed-form expected Hessian at a fixed point ``z``.

    Complex mode gives the 2n x 2n block matrix ``[[B, 2 z z^T], [2 conj(z) z^*, conj(B)]]``
    with ``B = (2||z||^2 - ||x||^2) I + 2 z z^* - x x^*``; at ``z = x`` this is
    ``||x||^2 I + (3/2) p p^* - (1/2) q q^*`` with ``p = (x; conj x)``,
    ``q = (x; -conj x)``. Real mode gives ``(2||z||^2 - ||x||^2) I + 4 z z^T - x x^T``.
    """
    z = np.asarray(z)
    x = np.asarray(x)
    n = z.size
    shift = 2 * np.vdot(z, z).real - np.vdot(x, x).real
    if mode == "real":
        if np.iscomplexobj(z) and np.any(z.imag) or np.iscomplexobj(x) and np.any(x.imag):
            raise ValueError("real mode requires real z and x")
        z, x = np.real(z), np.real(x)
        return shift * np.eye(n) + 4 * np.outer(z, z) - np.outer(x, x)
    if mode != "complex":
        raise ValueError(f"unknown mode {mode!r}")
    z = z.astype(np.complex128)
    x = x.astype(np.complex128)
    B = shift * np.eye(n) + 2 * np.outer(z, z.conj()) - np.outer(x, x.conj())
    C = 2 * np.outer(z, z)
    return np.block([[B, C], [C.conj(), B.conj()]])
