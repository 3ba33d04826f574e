r"""Sparse stochastic moment matrices over hierarchical index sets.

For a monomial exponent :math:`\mu`, the moment matrix is

.. math:: [G^\mu]_{\alpha\beta} = \int y^\mu \Phi_\alpha \Phi_\beta \rho\,dy
          = \prod_{m \in \mathrm{supp}\,\mu} [K^{\mu_m}]_{\alpha_m\beta_m},

and its nonzeros are the support of the summed matrix
:math:`S^\mu = \sum_{w \in W(\mu)} N^w`, where :math:`N^w` marks pairs
:math:`\alpha \pm w = \beta`. Neighbour matrices are found per ``w`` by
subtracting ``w`` from every element, testing membership with the stored
set weights and locating the result with a tree walk.

Matrices are held as full symmetric ``scipy.sparse`` CSR matrices; assembly
goes through coordinate lists.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .multiindex import IndexSet, MultiIndex, NotInSetError, SignedMultiIndex, length, subtract, to_dense
from .orthopoly import Family, KMatrix, as_family, build_k_matrix, eval_all, gauss_rule


class DimensionError(ValueError):
    """A K matrix is too small for the exponents present in the index set."""


class OracleSizeError(ValueError):
    """Instance too large for the dense quadrature oracle."""


# ---------------------------------------------------------------------------
# weight sets


def _sign_normalize(w: SignedMultiIndex) -> SignedMultiIndex:
    if w and w[0][1] < 0:
        return tuple((p, -v) for p, v in w)
    return w


@dataclass(frozen=True)
class WeightSet:
    mu: MultiIndex
    elements: tuple
    sign_part_size: int
    magnitude_part_size: int

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def bound(self) -> int:
        return self.sign_part_size * self.magnitude_part_size


def weight_set(mu: MultiIndex) -> WeightSet:
    """Offsets ``w`` whose neighbour matrices cover the nonzeros of ``G^mu``.

    Elements are products of a sign pattern (first support position fixed
    to ``+``) and a magnitude pattern (values ``<= mu_m`` with the parity of
    ``mu_m``). Since ``N^w = N^{-w}``, every element is normalized so that
    its first nonzero coordinate is positive, and duplicates are dropped.
    """
    mu = tuple(mu)
    if not mu:
        return WeightSet((), ((),), 1, 1)
    supp = [p for p, _ in mu]
    signs = [(1,)] + [(1, -1)] * (len(supp) - 1)
    mags = [tuple(range(v % 2, v + 1, 2)) for _, v in mu]
    seen: dict = {}
    for sgn in itertools.product(*signs):
        for mag in itertools.product(*mags):
            w = tuple((p, s * a) for p, s, a in zip(supp, sgn, mag) if a != 0)
            seen.setdefault(_sign_normalize(w), None)
    f_size = 1
    for _, v in mu:
        f_size *= v // 2 + 1
    return WeightSet(mu, tuple(seen), 2 ** (len(supp) - 1), f_size)


def union_weights(wsets: Iterable[WeightSet]) -> list[SignedMultiIndex]:
    """``W_Xi``: distinct offsets over several weight sets, in first-seen order."""
    out: dict = {}
    for ws in wsets:
        for w in ws:
            out.setdefault(w, None)
    return list(out)


def summed_work_bound(xi: Sequence[MultiIndex]) -> float:
    """Conservative bound on ``sum |W(mu)|`` over ``xi``."""
    xi = list(xi)
    if not xi:
        return 0.0
    mmax = max((v for mu in xi for _, v in mu), default=0)
    mtilde = max(length(mu) for mu in xi)
    return max(1.0, len(xi) / 2.0 * (mmax + 2) ** mtilde)


# ---------------------------------------------------------------------------
# neighbour matrices


@dataclass(frozen=True)
class NeighbourMatrix:
    w: SignedMultiIndex
    pattern: sp.csr_matrix  # bool, symmetric

    @property
    def nnz(self) -> int:
        return self.pattern.nnz


@dataclass
class NeighbourStats:
    """Work counters for the fast neighbour construction."""

    weights: int = 0
    candidates: int = 0
    located: int = 0
    locate_steps: int = 0


def _pattern(n: int, rows, cols) -> sp.csr_matrix:
    """Symmetric boolean pattern with entries ``(rows, cols)`` and their transposes."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    # sorted unique linear keys give CSR order directly; scipy's COO path
    # costs more than the search itself on small sets
    keys = np.unique(np.concatenate([rows * n + cols, cols * n + rows]))
    r, c = np.divmod(keys, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    idx_dtype = np.int32 if n < 2**31 - 1 and keys.size < 2**31 - 1 else np.int64
    return sp.csr_matrix(
        (np.ones(keys.size, dtype=bool), c.astype(idx_dtype), indptr.astype(idx_dtype)),
        shape=(n, n),
    )


def _identity_pattern(n: int) -> sp.csr_matrix:
    return sp.identity(n, dtype=bool, format="csr")


def _neighbour_one(iset: IndexSet, dicts, w: SignedMultiIndex):
    """Ordinal pairs ``(n, k)`` with ``Lambda[n] - w = Lambda[k]`` plus counters."""
    n_el = len(iset)
    rows: list[int] = []
    cols: list[int] = []
    candidates = steps = 0
    if not w:
        return list(range(n_el)), list(range(n_el)), 0, 0
    rule = iset._rule
    w_pos = [(p, v) for p, v in w if v > 0]
    indices = iset.indices
    weights = iset.weights
    if rule == "ts":
        mu = iset._mu
        if length(w) > len(mu) or any(mu[p - 1] <= 0.0 for p, _ in w):
            return rows, cols, 0, 0
        mu_w = 1.0
        for p, v in w:
            mu_w *= mu[p - 1] ** v
        lo = iset._eps * (1.0 - 1e-9)
    else:
        if length(w) > iset._N:
            return rows, cols, 0, 0
        sum_w = sum(v for _, v in w)
        K = iset._K
    for n in range(n_el):
        d = dicts[n]
        ok = True
        for p, v in w_pos:
            if d.get(p, 0) < v:
                ok = False
                break
        if not ok:
            continue
        hint = None
        if rule == "ts":
            hint = weights[n] / mu_w
            if hint < lo:
                continue
        elif rule == "td" and weights[n] - sum_w > K:
            continue
        gamma = subtract(indices[n], w)
        if not iset.contains(gamma, hint):
            continue
        candidates += 1
        k, s = iset.walk(gamma)
        steps += s
        if k < 0:
            raise NotInSetError(f"membership test accepted {gamma} but the tree walk failed")
        rows.append(n)
        cols.append(k)
    return rows, cols, candidates, steps


def neighbour_matrices(
    iset: IndexSet,
    weights: Sequence[SignedMultiIndex],
    *,
    threads: int = 1,
    stats: NeighbourStats | None = None,
) -> dict[SignedMultiIndex, NeighbourMatrix]:
    """Neighbour matrices ``N^w`` for every ``w`` in ``weights``.

    Work is ``O(|weights| |Lambda| max|alpha|)`` tree steps. ``threads`` only
    changes scheduling; the result is identical for any worker count.
    """
    weights = [tuple(w) for w in weights]
    dicts = [dict(a) for a in iset.indices]
    n = len(iset)

    def job(w):
        return _neighbour_one(iset, dicts, w)

    if threads > 1 and len(weights) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, weights))
    else:
        results = [job(w) for w in weights]
    out = {}
    for w, (rows, cols, cand, steps) in zip(weights, results):
        out[w] = NeighbourMatrix(w, _identity_pattern(n) if not w else _pattern(n, rows, cols))
        if stats is not None:
            stats.weights += 1
            stats.candidates += cand
            stats.located += len(rows) if w else 0
            stats.locate_steps += steps
    return out


def dense_array(iset: IndexSet, dim: int | None = None) -> np.ndarray:
    """The set as an ``(|Lambda|, dim)`` integer array."""
    dim = max(iset.max_length, 1) if dim is None else dim
    out = np.zeros((len(iset), dim), dtype=np.int64)
    for i, a in enumerate(iset.indices):
        for p, v in a:
            out[i, p - 1] = v
    return out


def brute_force_neighbour(iset: IndexSet, w: SignedMultiIndex, chunk: int = 256) -> NeighbourMatrix:
    """``N^w`` by comparing every pair of elements (``O(|Lambda|^2)``)."""
    w = tuple(w)
    n = len(iset)
    dim = max(iset.max_length, length(w), 1)
    X = dense_array(iset, dim).astype(np.int32)
    wd = np.asarray(to_dense(w, dim), dtype=np.int32)
    rows, cols = [], []
    for start in range(0, n, chunk):
        diff = X[None, :, :] - X[start:start + chunk, None, :]
        hit = np.all(diff == wd, axis=2) | np.all(diff == -wd, axis=2)
        r, c = np.nonzero(hit)
        rows.append(r + start)
        cols.append(c)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    return NeighbourMatrix(w, _pattern(n, rows, cols))


# ---------------------------------------------------------------------------
# summed and moment matrices


@dataclass(frozen=True)
class SummedMatrix:
    mu: MultiIndex
    counts: sp.csr_matrix  # int64, symmetric


@dataclass(frozen=True)
class MomentMatrix:
    mu: MultiIndex
    values: sp.csr_matrix  # float64, symmetric

    @property
    def nnz(self) -> int:
        return self.values.nnz


def summed_matrix(ws: WeightSet, nmats: Mapping[SignedMultiIndex, NeighbourMatrix]) -> SummedMatrix:
    total = None
    for w in ws:
        try:
            pat = nmats[w].pattern
        except KeyError:
            raise KeyError(f"no neighbour matrix for offset {w}") from None
        term = pat.astype(np.int64)
        total = term if total is None else total + term
    total = total.tocsr()
    total.sort_indices()
    return SummedMatrix(ws.mu, total)


def k_matrices(family, exponents: Iterable[int], dim: int) -> dict[int, KMatrix]:
    return {k: build_k_matrix(family, k, dim) for k in sorted(set(exponents))}


def _check_kmats(mu: MultiIndex, kmats: Mapping[int, KMatrix], max_exp: int) -> None:
    for _, k in mu:
        if k not in kmats:
            raise KeyError(f"missing K matrix for power {k}")
        if kmats[k].dim <= max_exp:
            raise DimensionError(
                f"K^{k} has dimension {kmats[k].dim}, need > {max_exp} for this index set"
            )


def _entry_values(mu, X, kdense, rows, cols) -> np.ndarray:
    vals = np.ones(rows.size)
    for p, k in mu:
        vals *= kdense[k][X[rows, p - 1], X[cols, p - 1]]
    return vals


def moment_matrix(
    mu: MultiIndex,
    iset: IndexSet,
    smat: SummedMatrix,
    kmats: Mapping[int, KMatrix],
) -> MomentMatrix:
    """Evaluate ``G^mu`` on the nonzero pattern of ``S^mu`` by the product formula."""
    mu = tuple(mu)
    n = len(iset)
    if not mu:
        return MomentMatrix(mu, sp.identity(n, format="csr"))
    _check_kmats(mu, kmats, iset.max_exponent)
    X = dense_array(iset, max(iset.max_length, length(mu), 1))
    upper = sp.triu(smat.counts, format="coo")
    rows, cols = upper.row.astype(np.int64), upper.col.astype(np.int64)
    kdense = {k: kmats[k].to_dense() for _, k in mu}
    vals = _entry_values(mu, X, kdense, rows, cols)
    return MomentMatrix(mu, _symmetric(n, rows, cols, vals))


def _symmetric(n, rows, cols, vals) -> sp.csr_matrix:
    off = rows != cols
    r = np.concatenate([rows, cols[off]])
    c = np.concatenate([cols, rows[off]])
    v = np.concatenate([vals, vals[off]])
    out = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    out.sort_indices()
    return out


def direct_moment_matrix(mu: MultiIndex, iset: IndexSet, kmats: Mapping[int, KMatrix]) -> MomentMatrix:
    """``G^mu`` by the product formula over all pairs; for small sets."""
    mu = tuple(mu)
    n = len(iset)
    if not mu:
        return MomentMatrix(mu, sp.identity(n, format="csr"))
    _check_kmats(mu, kmats, iset.max_exponent)
    dim = max(iset.max_length, length(mu), 1)
    X = dense_array(iset, dim)
    rows, cols = np.triu_indices(n)
    supp = {p for p, _ in mu}
    same = np.ones(rows.size, dtype=bool)
    for m in range(1, dim + 1):
        if m not in supp:
            same &= X[rows, m - 1] == X[cols, m - 1]
    rows, cols = rows[same], cols[same]
    kdense = {k: kmats[k].to_dense() for _, k in mu}
    vals = _entry_values(mu, X, kdense, rows, cols)
    keep = vals != 0.0
    return MomentMatrix(mu, _symmetric(n, rows[keep], cols[keep], vals[keep]))


@dataclass
class MomentAssembly:
    """All products of one assembly run."""

    matrices: dict
    weight_sets: dict = field(default_factory=dict)
    neighbours: dict = field(default_factory=dict)
    summed: dict = field(default_factory=dict)
    stats: NeighbourStats = field(default_factory=NeighbourStats)
    direct: bool = False


def assemble_moment_matrices(
    iset: IndexSet,
    xi: Sequence[MultiIndex],
    family: Family | str = Family.LEGENDRE,
    *,
    threads: int = 1,
    dense_threshold: int = 64,
    keep_intermediate: bool = False,
) -> MomentAssembly:
    """Build ``G^mu`` for every ``mu`` in ``xi``.

    Sets smaller than ``dense_threshold`` skip the neighbour machinery and
    evaluate the product formula over all pairs.
    """
    family = as_family(family)
    xi = [tuple(mu) for mu in xi]
    exps = {k for mu in xi for _, k in mu}
    kmats = k_matrices(family, exps, iset.max_exponent + 1)
    if len(iset) < dense_threshold:
        mats = {mu: direct_moment_matrix(mu, iset, kmats) for mu in xi}
        return MomentAssembly(mats, direct=True)
    wsets = {mu: weight_set(mu) for mu in xi}
    total = sum(len(ws) for ws in wsets.values())
    bound = summed_work_bound(xi)
    if total > bound:
        raise AssertionError(f"sum |W(mu)| = {total} exceeds the bound {bound}")
    stats = NeighbourStats()
    nmats = neighbour_matrices(iset, union_weights(wsets.values()), threads=threads, stats=stats)
    mats, summed = {}, {}
    for mu in xi:
        smat = summed_matrix(wsets[mu], nmats)
        mats[mu] = moment_matrix(mu, iset, smat, kmats)
        if keep_intermediate:
            summed[mu] = smat
    out = MomentAssembly(mats, stats=stats)
    if keep_intermediate:
        out.weight_sets = wsets
        out.neighbours = nmats
        out.summed = summed
    return out


# ---------------------------------------------------------------------------
# quadrature oracle


def quadrature_moment_oracle(
    mu: MultiIndex,
    iset: IndexSet,
    family: Family | str,
    *,
    max_nodes: int = 400_000,
    max_size: int = 600,
) -> np.ndarray:
    """Dense ``G^mu`` by tensor Gauss quadrature of the defining integral."""
    family = as_family(family)
    mu = tuple(mu)
    n = len(iset)
    dim = max(iset.max_length, length(mu), 1)
    X = dense_array(iset, dim)
    mud = to_dense(mu, dim)
    npts = [(mud[m] + 2 * int(X[:, m].max())) // 2 + 2 for m in range(dim)]
    total = int(np.prod(npts, dtype=np.int64))
    if n > max_size or total > max_nodes:
        raise OracleSizeError(f"oracle instance too large: |Lambda|={n}, nodes={total}")
    rules = [gauss_rule(family, q) for q in npts]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.ones_like(grids[0])
    for m, (_, w) in enumerate(rules):
        shape = [1] * dim
        shape[m] = -1
        wgrid = wgrid * (w.reshape(shape) * grids[m] ** mud[m] if mud[m] else w.reshape(shape))
    phi = np.ones((n, total))
    for m in range(dim):
        vals = eval_all(family, int(X[:, m].max()), grids[m].ravel())
        phi *= vals[X[:, m]]
    return (phi * wgrid.ravel()) @ phi.T


# ---------------------------------------------------------------------------
# Matrix Market export


def write_matrix_market(path, matrix: sp.spmatrix, field: str = "real") -> None:
    """Write a symmetric matrix (lower triangle) in Matrix Market coordinate format.

    ``field`` is ``"real"``, ``"integer"`` or ``"pattern"``.
    """
    if field not in ("real", "integer", "pattern"):
        raise ValueError(f"unsupported field {field!r}")
    low = sp.tril(matrix, format="coo")
    order = np.lexsort((low.row, low.col))
    rows, cols, data = low.row[order], low.col[order], low.data[order]
    lines = [f"%%MatrixMarket matrix coordinate {field} symmetric"]
    lines.append(f"{matrix.shape[0]} {matrix.shape[1]} {rows.size}")
    for r, c, v in zip(rows.tolist(), cols.tolist(), data.tolist()):
        if field == "pattern":
            lines.append(f"{r + 1} {c + 1}")
        elif field == "integer":
            lines.append(f"{r + 1} {c + 1} {int(v)}")
        else:
            lines.append(f"{r + 1} {c + 1} {float(v):.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
