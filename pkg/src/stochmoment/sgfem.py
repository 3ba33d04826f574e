r"""Stochastic Galerkin solver for the 1D model problem.

Solves :math:`-(a(y, x) u')' = 1` on (-1, 1) with zero boundary values and

.. math:: a(y, x) = 1 + \Big(1 + \sum_{m=1}^M a_m(x) y_m\Big)^p,

with :math:`a_m(x) = m^{-s}` or :math:`m^{-s}\sin(m\pi x)` and uniform
:math:`y_m \in [-1, 1]`. The coefficient is expanded into monomials
:math:`y^\mu`; the Galerkin system
:math:`(I \otimes A_0 + \sum_\mu G^\mu \otimes A_\mu) u = e_0 \otimes f`
is applied in Kronecker form and solved by preconditioned CG.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import qmc

from .fem import FemSpace
from .moment import assemble_moment_matrices
from .multiindex import IndexSet, MultiIndex, from_dense
from .orthopoly import Family, as_family, eval_all


class ModelError(ValueError):
    """The diffusion coefficient is not uniformly positive."""


class NumericalError(RuntimeError):
    """The Galerkin system could not be solved to tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


class InsufficientDataError(ValueError):
    pass


class DegenerateReferenceError(ValueError):
    pass


SPATIAL_KINDS = ("constant", "sinusoidal")


@dataclass(frozen=True)
class DiffusionSpec:
    M: int
    s: float
    p: int
    spatial: str = "constant"

    def __post_init__(self):
        if self.M < 1 or self.p < 1 or int(self.p) != self.p:
            raise ModelError("need M >= 1 and a positive integer power p")
        if self.s <= 0:
            raise ModelError("decay exponent s must be positive")
        if self.spatial not in SPATIAL_KINDS:
            raise ModelError(f"spatial must be one of {SPATIAL_KINDS}")

    def amplitude(self, m: int) -> float:
        return m ** (-self.s)

    def spatial_factor(self, m: int, x):
        x = np.asarray(x, dtype=float)
        if self.spatial == "constant":
            return np.ones_like(x)
        return np.sin(m * np.pi * x)

    def closed_form(self, y, x) -> np.ndarray:
        """``a(y, x)`` for ``y`` of shape ``(..., M)`` and broadcastable ``x``."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        bracket = 1.0
        for m in range(1, self.M + 1):
            bracket = bracket + self.amplitude(m) * self.spatial_factor(m, x) * y[..., m - 1]
        return 1.0 + bracket ** self.p


@dataclass
class NonAffineExpansion:
    """``a(y, x) = a0 + sum_mu coeff_mu * prod_m f_m(x)^mu_m * y^mu``.

    ``f_m`` is 1 (constant) or ``sin(m pi x)``; ``coeffs`` already include
    the multinomial factor and the amplitudes ``m^{-s mu_m}``.
    """

    spec: DiffusionSpec
    a0: float
    xi: list
    coeffs: list

    @property
    def tilde_m(self) -> int:
        return max((mu[-1][0] for mu in self.xi), default=0)

    @property
    def term_count(self) -> int:
        return 1 + len(self.xi)

    def spatial_key(self, mu: MultiIndex) -> MultiIndex:
        return () if self.spec.spatial == "constant" else mu

    def spatial_values(self, mu: MultiIndex, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for m, e in self.spatial_key(mu):
            out = out * self.spec.spatial_factor(m, x) ** e
        return out

    def evaluate(self, y, x) -> np.ndarray:
        """The expanded form at ``y`` (shape ``(..., M)``) and ``x``."""
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        total = self.a0 + 0.0 * x
        for mu, c in zip(self.xi, self.coeffs):
            mono = 1.0
            for m, e in mu:
                mono = mono * y[..., m - 1] ** e
            total = total + c * self.spatial_values(mu, x) * mono
        return total


def monomial_exponents(M: int, p: int):
    """Exponent vectors of length M with 1 <= total <= p, graded then lexicographic."""
    out = []
    for total in range(1, p + 1):
        level = [e for e in itertools.product(range(total + 1), repeat=M) if sum(e) == total]
        out.extend(sorted(level, reverse=True))
    return out


def positivity_lower_bound(spec: DiffusionSpec) -> float:
    """Interval bound on ``min a`` from ``|a_m(x)| <= m^{-s}``."""
    S = sum(spec.amplitude(m) for m in range(1, spec.M + 1))
    lo, hi = 1.0 - S, 1.0 + S
    if spec.p % 2 == 0:
        low_pow = 0.0 if lo <= 0.0 <= hi else min(abs(lo), abs(hi)) ** spec.p
    else:
        low_pow = lo ** spec.p
    return 1.0 + low_pow


def expand_diffusion(
    spec: DiffusionSpec, *, check: bool = True, samples_log2: int = 14, seed: int = 0
) -> NonAffineExpansion:
    """Multinomial expansion of the coefficient, with a positivity check.

    The check needs both an interval lower bound on ``a`` and the minimum
    over ``2**samples_log2`` scrambled Sobol points in ``Gamma x D`` to be
    positive.
    """
    xi, coeffs = [], []
    p = spec.p
    for e in monomial_exponents(spec.M, p):
        k = sum(e)
        c = math.factorial(p) / math.factorial(p - k)
        for m, em in enumerate(e, start=1):
            c /= math.factorial(em)
            c *= spec.amplitude(m) ** em
        xi.append(from_dense(e))
        coeffs.append(c)
    exp = NonAffineExpansion(spec, 2.0, xi, coeffs)
    if check:
        bound = positivity_lower_bound(spec)
        sampler = qmc.Sobol(d=spec.M + 1, scramble=True, seed=seed)
        pts = sampler.random_base2(samples_log2) * 2.0 - 1.0
        sampled = float(np.min(exp.evaluate(pts[:, : spec.M], pts[:, spec.M])))
        if bound <= 0.0 or sampled <= 0.0:
            raise ModelError(
                f"diffusion coefficient not positive (interval bound {bound:.3g}, "
                f"sampled minimum {sampled:.3g})"
            )
    return exp


# ---------------------------------------------------------------------------
# Galerkin solve


@dataclass
class ChaosSolution:
    """Chaos coefficients ``coeffs[i]`` (dof vectors) for multi-index ``indices[i]``."""

    indices: list
    coeffs: np.ndarray
    fem: FemSpace
    index_set: IndexSet | None = None
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.indices)

    def zero_ordinal(self) -> int:
        for i, a in enumerate(self.indices):
            if not a:
                return i
        return -1

    def evaluate(self, y, family: Family | str = Family.LEGENDRE) -> np.ndarray:
        """Dof vector of the surrogate at one parameter point ``y``."""
        y = np.asarray(y, dtype=float)
        nmax = max((v for a in self.indices for _, v in a), default=0)
        phi = eval_all(family, nmax, y) if y.size else np.ones((1, 0))
        basis = np.ones(len(self.indices))
        for i, a in enumerate(self.indices):
            for m, e in a:
                basis[i] *= phi[e, m - 1]
        return basis @ self.coeffs


def _kron_terms(expansion: NonAffineExpansion, gmats: dict, fem: FemSpace, n: int):
    """Group Galerkin terms by spatial factor: list of ``(G, A)`` pairs."""
    groups: dict = {(): [sp.identity(n, format="csr") * expansion.a0]}
    for mu, c in zip(expansion.xi, expansion.coeffs):
        groups.setdefault(expansion.spatial_key(mu), []).append(gmats[mu] * c)
    terms = []
    for key, mats in groups.items():
        G = mats[0]
        for extra in mats[1:]:
            G = G + extra
        A = fem.stiffness(expansion.spatial_values(key, fem.x) if key else 1.0)
        terms.append((G.tocsr(), A))
    return terms


def assemble_and_solve(
    expansion: NonAffineExpansion,
    index_set: IndexSet,
    fem: FemSpace | None = None,
    family: Family | str = Family.LEGENDRE,
    *,
    tol: float = 1e-12,
    maxit: int = 2000,
    direct_limit: int = 5_000,
    threads: int = 1,
    subset: Sequence[int] | None = None,
) -> ChaosSolution:
    """Solve the stochastic Galerkin system on ``index_set``.

    A single spatial group (space-independent coefficient) separates into a
    stochastic and a spatial solve. Otherwise small systems are factorized
    directly and larger ones use CG with the mean-coefficient block as
    preconditioner.

    ``subset`` restricts the Galerkin space to the given ordinals of
    ``index_set`` (e.g. a best-M selection). Moment-matrix entries depend
    only on the two multi-indices involved, so the restricted matrices are
    submatrices of the full ones.
    """
    family = as_family(family)
    fem = fem or FemSpace()
    gmats = {
        mu: g.values
        for mu, g in assemble_moment_matrices(index_set, expansion.xi, family, threads=threads).matrices.items()
    }
    indices = list(index_set.indices)
    if subset is not None:
        keep = np.unique(np.asarray(subset, dtype=int))
        if keep.size == 0 or keep[0] != 0:
            raise ValueError("subset must contain the zero multi-index (ordinal 0)")
        gmats = {mu: g[keep][:, keep] for mu, g in gmats.items()}
        indices = [indices[i] for i in keep]
    n = len(indices)
    terms = _kron_terms(expansion, gmats, fem, n)
    f = fem.load(1.0)
    B = np.zeros((n, fem.ndof))
    B[0] = f  # orthonormal basis: stochastic load is the unit vector at the zero index
    info = {"terms": len(terms), "unknowns": n * fem.ndof}

    def apply(U):
        out = np.zeros_like(U)
        for G, A in terms:
            out += G @ (A @ U.T).T
        return out

    if len(terms) == 1:
        G, A = terms[0]
        e0 = np.zeros(n)
        e0[0] = 1.0
        g = spla.spsolve(G.tocsc(), e0) if n > 1 else e0 / G.toarray()[0, 0]
        a = spla.spsolve(A.tocsc(), f)
        U = np.outer(g, a)
        info["method"] = "separable"
    elif n * fem.ndof <= direct_limit:
        big = sum(sp.kron(G, A, format="csr") for G, A in terms)
        U = spla.spsolve(big.tocsc(), B.ravel()).reshape(n, fem.ndof)
        info["method"] = "direct"
    else:
        mean_block = sum(G[0, 0] * A.toarray() for G, A in terms)
        chol = cho_factor(mean_block)
        shape = (n, fem.ndof)
        op = spla.LinearOperator(
            (n * fem.ndof,) * 2, matvec=lambda v: apply(v.reshape(shape)).ravel(), dtype=float
        )
        pre = spla.LinearOperator(
            (n * fem.ndof,) * 2, matvec=lambda v: cho_solve(chol, v.reshape(shape).T).T.ravel(),
            dtype=float,
        )
        iters = [0]

        def count(_):
            iters[0] += 1

        u, flag = spla.cg(op, B.ravel(), rtol=tol, atol=0.0, maxiter=maxit, M=pre, callback=count)
        U = u.reshape(shape)
        info["method"] = "pcg"
        info["iterations"] = iters[0]
        if flag != 0:
            res = np.linalg.norm(apply(U) - B) / np.linalg.norm(B)
            raise NumericalError(f"CG did not converge in {maxit} iterations", res)
    res = float(np.linalg.norm(apply(U) - B) / np.linalg.norm(B))
    info["residual"] = res
    if not np.isfinite(res) or res > 1e-9:
        raise NumericalError("Galerkin residual above 1e-9", res)
    return ChaosSolution(indices, U, fem, index_set if subset is None else None, info)


# ---------------------------------------------------------------------------
# post-processing


@dataclass
class Statistics:
    """Mean and variance fields sampled at the FEM quadrature points."""

    mean: np.ndarray
    variance: np.ndarray
    mean_dofs: np.ndarray | None = None


def statistics(sol: ChaosSolution) -> Statistics:
    vals = sol.fem.values @ sol.coeffs.T  # (nq, |Lambda|)
    z = sol.zero_ordinal()
    mean = vals[:, z] if z >= 0 else np.zeros(vals.shape[0])
    sq = vals * vals
    var = sq.sum(axis=1) - (sq[:, z] if z >= 0 else 0.0)
    mean_dofs = sol.coeffs[z] if z >= 0 else np.zeros(sol.fem.ndof)
    return Statistics(mean, var, mean_dofs)


def exact_reference_example1(spec: DiffusionSpec, fem: FemSpace, npts: int = 32) -> Statistics:
    """Mean and variance of ``(1 - x^2) / (2 a(y))`` by tensor Gauss-Legendre in ``y``."""
    if spec.spatial != "constant":
        raise ValueError("closed-form reference needs a space-independent coefficient")
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    weights = weights / 2.0
    grids = np.meshgrid(*([nodes] * spec.M), indexing="ij")
    wgrid = np.ones_like(grids[0])
    for m in range(spec.M):
        shape = [1] * spec.M
        shape[m] = -1
        wgrid = wgrid * weights.reshape(shape)
    y = np.stack([g.ravel() for g in grids], axis=-1)
    inv = 1.0 / spec.closed_form(y, 0.0)
    w = wgrid.ravel()
    e1 = float(w @ inv)
    e2 = float(w @ (inv * inv))
    shape_x = (1.0 - fem.x ** 2) / 2.0
    return Statistics(shape_x * e1, shape_x ** 2 * (e2 - e1 * e1))


def relative_errors(sol, reference) -> tuple[float, float]:
    """Relative L2(D) errors of mean and variance, in percent."""
    s = statistics(sol) if isinstance(sol, ChaosSolution) else sol
    r = statistics(reference) if isinstance(reference, ChaosSolution) else reference
    fem = sol.fem if isinstance(sol, ChaosSolution) else None
    if fem is None and isinstance(reference, ChaosSolution):
        fem = reference.fem
    if fem is None:
        raise ValueError("need at least one ChaosSolution to fix the quadrature rule")
    nm, nv = fem.l2_norm(r.mean), fem.l2_norm(r.variance)
    if nm == 0.0 or nv == 0.0:
        raise DegenerateReferenceError("reference mean or variance has zero norm")
    return (
        fem.l2_norm(s.mean - r.mean) / nm * 100.0,
        fem.l2_norm(s.variance - r.variance) / nv * 100.0,
    )


def coefficient_norms(sol: ChaosSolution) -> list[tuple[MultiIndex, float, int]]:
    """``(multi-index, gradient norm, ordinal)`` sorted by decreasing norm."""
    norms = sol.fem.energy_norms(sol.coeffs)
    order = sorted(range(len(sol)), key=lambda i: (-norms[i], i))
    return [(sol.indices[i], float(norms[i]), i) for i in order]


def estimate_weights(sol: ChaosSolution, M: int, *, squared: bool = True, include_mean: bool = False) -> np.ndarray:
    """Decay rates ``g_m`` of the coefficient norms along the coordinate rays.

    Fits ``log q_k = c - g_m k`` by least squares over the ray
    ``{k e_m : k >= 1}`` (``k >= 0`` with ``include_mean``), where
    ``q_k`` is the squared V-norm of ``u_{k e_m}`` by default and the plain
    V-norm with ``squared=False``. Only ratios ``g_m / g_min`` enter the
    anisotropic sets, so the choice changes the scale of ``g`` but not the
    sets built from it.
    """
    norms = sol.fem.energy_norms(sol.coeffs)
    if squared:
        norms = norms * norms
    mean = [(0, norms[i]) for i, a in enumerate(sol.indices) if not a]
    ray: dict = {}
    for i, a in enumerate(sol.indices):
        if len(a) == 1:
            m, k = a[0]
            ray.setdefault(m, []).append((k, norms[i]))
    g = np.empty(M)
    for m in range(1, M + 1):
        pts = (mean if include_mean else []) + sorted(ray.get(m, []))
        pts = [(k, v) for k, v in pts if v > 0]
        if len(pts) < 3:
            raise InsufficientDataError(f"ray along y_{m} has fewer than 3 usable points")
        k, v = np.array(pts, dtype=float).T
        g[m - 1] = -np.polyfit(k, np.log(v), 1)[0]
    return g


def best_m_select(sol: ChaosSolution, M: int) -> ChaosSolution:
    """The ``M`` terms with the largest gradient norms (ties by ordinal)."""
    if M > len(sol):
        raise ValueError(f"M={M} exceeds the solution size {len(sol)}")
    keep = sorted(o for _, _, o in coefficient_norms(sol)[:M])
    return ChaosSolution(
        [sol.indices[i] for i in keep], sol.coeffs[keep], sol.fem, None, {"best_m": M, "ordinals": keep}
    )


def solve_best_m(expansion: NonAffineExpansion, sol: ChaosSolution, M: int, **kwargs) -> ChaosSolution:
    """Galerkin solution on the best-M index set selected from ``sol``."""
    if sol.index_set is None:
        raise ValueError("best-M re-solve needs a solution computed on a full index set")
    keep = best_m_select(sol, M).info["ordinals"]
    if 0 not in keep:
        keep = [0] + keep[:-1]
    out = assemble_and_solve(expansion, sol.index_set, sol.fem, subset=keep, **kwargs)
    out.info["best_m"] = M
    return out


def fit_rate(norms: Sequence[float], first: int = 1, last: int | None = None) -> float:
    """Decay rate ``r`` of ``norm ~ rank^{-r}`` over ranks ``first..last`` (1-based)."""
    vals = np.asarray(norms, dtype=float)
    last = vals.size if last is None else last
    if last > vals.size:
        raise InsufficientDataError(f"need {last} norms, have {vals.size}")
    ranks = np.arange(first, last + 1, dtype=float)
    window = vals[first - 1 : last]
    if window.size < 3:
        raise InsufficientDataError("rate fit needs at least 3 points")
    slope = np.polyfit(np.log(ranks), np.log(window), 1)[0]
    return float(-slope)
