r"""Orthonormal Legendre and Hermite polynomial kernels.

Legendre polynomials are orthonormal with respect to the uniform density
:math:`\rho_0 = 1/2` on :math:`[-1, 1]`, Hermite (probabilists') polynomials
with respect to the standard Gaussian density. Factorial ratios are
evaluated in exact integer arithmetic and rounded once, so every
coefficient is within an ulp or two of its true value.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np


class Family(str, enum.Enum):
    LEGENDRE = "legendre"
    HERMITE = "hermite"


def as_family(family: Family | str) -> Family:
    try:
        return Family(family.lower() if isinstance(family, str) else family)
    except ValueError:
        raise ValueError(f"unknown polynomial family {family!r}") from None


def _dfact(n: int) -> int:
    """Double factorial n!!, with (-1)!! = 0!! = 1."""
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def _sqrt(x: Fraction) -> float:
    # float(Fraction) rounds correctly, so the result is within one ulp
    return math.sqrt(float(x))


def _selection_ok(k: int, l: int, m: int) -> bool:
    return (k + l + m) % 2 == 0 and abs(k - l) <= m <= k + l


@lru_cache(maxsize=None)
def _wigner3jm_sq_exact(k: int, l: int, m: int) -> Fraction:
    g = (k + l + m) // 2
    f = math.factorial
    ratio = Fraction(f(g), f(g - k) * f(g - l) * f(g - m))
    return Fraction(f(2 * g - 2 * k) * f(2 * g - 2 * l) * f(2 * g - 2 * m), f(2 * g + 1)) * ratio * ratio


@lru_cache(maxsize=None)
def wigner3jm_sq(k: int, l: int, m: int) -> float:
    """Square of the 3jm symbol (k l m; 0 0 0).

    Zero unless ``k + l + m`` is even and the triangle condition holds.
    """
    if min(k, l, m) < 0 or not _selection_ok(k, l, m):
        return 0.0
    return float(_wigner3jm_sq_exact(*sorted((k, l, m))))


@lru_cache(maxsize=None)
def triple_coefficient(family: Family | str, k: int, l: int, m: int) -> float:
    r"""Triple product integral :math:`\int \phi_k \phi_l \phi_m \rho\,dy`.

    This is also the coefficient of :math:`\phi_m` in the linearization of
    :math:`\phi_k \phi_l`.
    """
    family = as_family(family)
    if min(k, l, m) < 0 or not _selection_ok(k, l, m):
        return 0.0
    k, l, m = sorted((k, l, m))
    if family is Family.LEGENDRE:
        w = _wigner3jm_sq_exact(k, l, m)
        return _sqrt((2 * k + 1) * (2 * l + 1) * (2 * m + 1) * w * w)
    g = (k + l + m) // 2
    return _sqrt(Fraction(math.comb(k, g - m) * math.comb(l, g - m) * math.comb(m, g - k)))


@lru_cache(maxsize=None)
def _inversion(family: Family, k: int) -> tuple[float, ...]:
    out = [0.0] * (k + 1)
    for n in range(k % 2, k + 1, 2):
        if family is Family.LEGENDRE:
            c = Fraction(math.comb(k, n) * math.factorial(n) * _dfact(k - n - 1), _dfact(k + n + 1))
            out[n] = _sqrt(c * c * (2 * n + 1))
        else:
            c = math.comb(k, n) * _dfact(k - n - 1)
            out[n] = _sqrt(Fraction(c * c * math.factorial(n)))
    return tuple(out)


def inversion_coefficients(family: Family | str, k: int) -> list[float]:
    r"""Coefficients :math:`c_n` with :math:`y^k = \sum_{n=0}^k c_n \phi_n(y)`."""
    family = as_family(family)
    if k < 0:
        raise ValueError("k must be nonnegative")
    return list(_inversion(family, k))


def linearize_product(family: Family | str, k: int, l: int) -> list[tuple[int, float]]:
    """Nonzero terms ``(m, c_m)`` of ``phi_k * phi_l = sum_m c_m phi_m``."""
    family = as_family(family)
    return [
        (m, triple_coefficient(family, k, l, m))
        for m in range(abs(k - l), k + l + 1, 2)
    ]


def eval_all(family: Family | str, nmax: int, y) -> np.ndarray:
    """Values of ``phi_0 .. phi_nmax`` at ``y``; shape ``(nmax + 1,) + y.shape``."""
    family = as_family(family)
    y = np.asarray(y, dtype=float)
    out = np.empty((nmax + 1,) + y.shape)
    out[0] = 1.0
    if nmax == 0:
        return out
    if family is Family.LEGENDRE:
        # unnormalized P_n by recurrence, then scale
        p_prev = np.ones_like(y)
        p_cur = y.copy()
        out[1] = p_cur
        for n in range(1, nmax):
            p_next = ((2 * n + 1) * y * p_cur - n * p_prev) / (n + 1)
            p_prev, p_cur = p_cur, p_next
            out[n + 1] = p_cur
        out *= np.sqrt(2.0 * np.arange(nmax + 1) + 1.0).reshape((-1,) + (1,) * y.ndim)
    else:
        out[1] = y
        for n in range(1, nmax):
            out[n + 1] = (y * out[n] - math.sqrt(n) * out[n - 1]) / math.sqrt(n + 1)
    return out


def eval_poly(family: Family | str, n: int, y):
    """Value of the orthonormal polynomial of degree ``n`` at ``y``."""
    vals = eval_all(family, n, y)[n]
    return float(vals) if np.ndim(vals) == 0 else vals


def gauss_rule(family: Family | str, npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes and weights normalized to the family's probability density."""
    family = as_family(family)
    if family is Family.LEGENDRE:
        x, w = np.polynomial.legendre.leggauss(npts)
        return x, w / 2.0
    x, w = np.polynomial.hermite_e.hermegauss(npts)
    return x, w / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KMatrix:
    r"""Symmetric banded univariate moment matrix :math:`\int y^k\phi_l\phi_m\rho`.

    ``bands[d, i]`` holds entry ``(i, i + d)`` for ``d = 0..k``; entries with
    ``i + d >= dim`` are padding and stay zero.
    """

    family: Family
    k: int
    dim: int
    bands: np.ndarray

    def __getitem__(self, idx: tuple[int, int]) -> float:
        l, m = idx
        if l > m:
            l, m = m, l
        d = m - l
        if d > self.k or m >= self.dim:
            return 0.0
        return float(self.bands[d, l])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for d in range(min(self.k, self.dim - 1) + 1):
            vals = self.bands[d, : self.dim - d]
            idx = np.arange(self.dim - d)
            out[idx, idx + d] = vals
            out[idx + d, idx] = vals
        return out


def build_k_matrix(family: Family | str, k: int, dim: int) -> KMatrix:
    """Assemble ``K^k`` from inversion and triple-product coefficients."""
    family = as_family(family)
    if k < 0 or dim < 1:
        raise ValueError("need k >= 0 and dim >= 1")
    if k == 0:
        # orthonormality
        return KMatrix(family, 0, dim, np.ones((1, dim)))
    coeffs = inversion_coefficients(family, k)
    bands = np.zeros((k + 1, dim))
    # parity rule: only offsets d with d = k (mod 2) survive
    for d in range(k % 2, k + 1, 2):
        for l in range(dim - d):
            m = l + d
            bands[d, l] = sum(
                coeffs[n] * triple_coefficient(family, l, m, n)
                for n in range(d, k + 1, 2)
            )
    return KMatrix(family, k, dim, bands)
