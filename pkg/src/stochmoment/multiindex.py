r"""Hierarchical multi-index sets with parent-to-child trees.

Multi-indices are stored sparsely as tuples of ``(position, exponent)``
pairs with strictly increasing 1-based positions and nonzero exponents, so
``(2, 0, 1)`` is ``((1, 2), (3, 1))`` and the zero multi-index is ``()``.
Signed multi-indices (differences and weight-set elements) use the same
layout with possibly negative exponents.

Sets are grown with an explicit stack: after a multi-index is added, its
feasible children (one-increments at a position ``>=`` its length) are
pushed in increasing position order, so the child with the largest position
is added first. Each new ordinal is put at the *front* of its parent's child
list, which leaves every child list sorted by position. Ordinals are
0-based; the root has ordinal 0.

A multi-index in the set is located from the root in ``|alpha|`` tree
steps, without any hashing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator, Sequence, Union

MultiIndex = tuple  # tuple[tuple[int, int], ...], exponents > 0
SignedMultiIndex = tuple  # same layout, exponents nonzero

# relative slack applied to real-valued thresholds (aTD via exp transform, aTP)
THRESHOLD_RTOL = 1e-12
# half-width of the band around the TS threshold in which the ratio test
# is replaced by an exact ordered recomputation
_RATIO_BAND = 1e-9


class ConfigurationError(ValueError):
    """Invalid index-set specification."""


class NotInSetError(LookupError):
    """Raised when a multi-index is not an element of the set."""


# ---------------------------------------------------------------------------
# multi-index arithmetic


def canonical(pairs: Iterable[tuple[int, int]]) -> SignedMultiIndex:
    """Sort by position, merge repeated positions and drop zero exponents."""
    acc: dict[int, int] = {}
    for pos, val in pairs:
        if pos < 1:
            raise ValueError(f"positions are 1-based, got {pos}")
        acc[pos] = acc.get(pos, 0) + val
    return tuple((p, v) for p, v in sorted(acc.items()) if v != 0)


def from_dense(values: Sequence[int]) -> SignedMultiIndex:
    return tuple((i + 1, int(v)) for i, v in enumerate(values) if v != 0)


def to_dense(alpha: SignedMultiIndex, dim: int | None = None) -> list[int]:
    n = length(alpha) if dim is None else dim
    out = [0] * n
    for pos, val in alpha:
        if pos > n:
            raise ValueError(f"position {pos} exceeds dimension {n}")
        out[pos - 1] = val
    return out


def length(alpha: SignedMultiIndex) -> int:
    """Largest position in the support, 0 for the zero multi-index."""
    return alpha[-1][0] if alpha else 0


def degree(alpha: SignedMultiIndex) -> int:
    """Sum of the exponents, ``|alpha|``."""
    return sum(v for _, v in alpha)


def support(alpha: SignedMultiIndex) -> set[int]:
    return {p for p, _ in alpha}


def subtract(a: SignedMultiIndex, b: SignedMultiIndex) -> SignedMultiIndex:
    """Componentwise difference ``a - b`` in canonical sparse form."""
    out = []
    i = j = 0
    na, nb = len(a), len(b)
    while i < na or j < nb:
        if j >= nb or (i < na and a[i][0] < b[j][0]):
            out.append(a[i])
            i += 1
        elif i >= na or b[j][0] < a[i][0]:
            out.append((b[j][0], -b[j][1]))
            j += 1
        else:
            v = a[i][1] - b[j][1]
            if v:
                out.append((a[i][0], v))
            i += 1
            j += 1
    return tuple(out)


def add(a: SignedMultiIndex, b: SignedMultiIndex) -> SignedMultiIndex:
    return subtract(a, tuple((p, -v) for p, v in b))


def format_pairs(alpha: SignedMultiIndex) -> str:
    return ",".join(f"{p}:{v}" for p, v in alpha)


def parse_pairs(text: str) -> SignedMultiIndex:
    text = text.strip()
    if not text:
        return ()
    pairs = []
    for item in text.split(","):
        p, v = item.split(":")
        pairs.append((int(p), int(v)))
    return canonical(pairs)


# ---------------------------------------------------------------------------
# specifications


def _check_weights(g: Sequence[float], n: int) -> tuple[float, ...]:
    g = tuple(float(x) for x in g)
    if len(g) != n:
        raise ConfigurationError(f"weight vector has length {len(g)}, expected N={n}")
    if any(not math.isfinite(x) or x <= 0 for x in g):
        raise ConfigurationError("weights must be positive and finite")
    if any(g[i] > g[i + 1] for i in range(n - 1)):
        raise ConfigurationError(
            "weights must be nondecreasing; permute the dimensions first"
        )
    return g


def _check_nk(n: int, k, integer_k: bool = True) -> None:
    if int(n) != n or n < 1:
        raise ConfigurationError(f"N must be a positive integer, got {n}")
    if integer_k and (int(k) != k or k < 0):
        raise ConfigurationError(f"K must be a nonnegative integer, got {k}")
    if not integer_k and (not math.isfinite(k) or k < 0):
        raise ConfigurationError(f"K must be a nonnegative real, got {k}")


@dataclass(frozen=True)
class TS:
    """Threshold sequence set: ``prod mu_m^alpha_m >= eps``."""

    mu: tuple[float, ...]
    eps: float

    def __post_init__(self):
        mu = tuple(float(x) for x in self.mu)
        object.__setattr__(self, "mu", mu)
        if not (0.0 < self.eps < 1.0):
            raise ConfigurationError(f"eps must lie in (0, 1), got {self.eps}")
        if mu and not (mu[0] < 1.0):
            raise ConfigurationError("mu[0] must be < 1 (mu[0] = 1 gives an infinite set)")
        if any(x < 0 or not math.isfinite(x) for x in mu):
            raise ConfigurationError("mu entries must be finite and nonnegative")
        if any(mu[i] < mu[i + 1] for i in range(len(mu) - 1)):
            raise ConfigurationError("mu must be nonincreasing")


@dataclass(frozen=True)
class IsoTD:
    N: int
    K: int

    def __post_init__(self):
        _check_nk(self.N, self.K)


@dataclass(frozen=True)
class ATD:
    """Anisotropic total degree: ``sum g_n alpha_n <= g_min K``."""

    N: int
    K: float
    g: tuple[float, ...]

    def __post_init__(self):
        _check_nk(self.N, self.K, integer_k=False)
        object.__setattr__(self, "g", _check_weights(self.g, self.N))

    def as_ts(self) -> TS:
        gmin = self.g[0]
        mu = tuple(math.exp(-x / gmin) for x in self.g)
        eps = math.exp(-self.K * (1.0 + THRESHOLD_RTOL) - THRESHOLD_RTOL)
        return TS(mu, eps)


@dataclass(frozen=True)
class IsoTP:
    N: int
    K: int

    def __post_init__(self):
        _check_nk(self.N, self.K)


@dataclass(frozen=True)
class ATP:
    """Anisotropic tensor product: ``max g_n alpha_n <= g_min K``."""

    N: int
    K: float
    g: tuple[float, ...]

    def __post_init__(self):
        _check_nk(self.N, self.K, integer_k=False)
        object.__setattr__(self, "g", _check_weights(self.g, self.N))


IndexSetSpec = Union[TS, IsoTD, ATD, IsoTP, ATP]

_KINDS = {"ts": TS, "isotd": IsoTD, "atd": ATD, "isotp": IsoTP, "atp": ATP}


def spec_kind(spec: IndexSetSpec) -> str:
    return type(spec).__name__.lower()


def spec_to_dict(spec: IndexSetSpec) -> dict:
    d = asdict(spec)
    for key, val in d.items():
        if isinstance(val, tuple):
            d[key] = list(val)
    return {"kind": spec_kind(spec), **d}


def spec_from_dict(d: dict) -> IndexSetSpec:
    """Build a spec from its JSON form, e.g. ``{"kind": "isotd", "N": 2, "K": 3}``."""
    d = dict(d)
    kind = str(d.pop("kind", "")).lower()
    if kind not in _KINDS:
        raise ConfigurationError(f"unknown index set kind {kind!r}")
    try:
        if kind == "ts":
            return TS(tuple(d["mu"]), float(d["eps"]))
        if kind in ("isotd", "isotp"):
            return _KINDS[kind](int(d["N"]), int(d["K"]))
        return _KINDS[kind](int(d["N"]), float(d["K"]), tuple(d["g"]))
    except KeyError as exc:
        raise ConfigurationError(f"missing field {exc.args[0]!r} for {kind}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None


def _atp_ok(ratio: float, exponent: int, K: float) -> bool:
    return ratio * exponent <= K * (1.0 + THRESHOLD_RTOL)


# ---------------------------------------------------------------------------
# the index set


class IndexSet:
    """Multi-index set plus its parenthood tree.

    Attributes
    ----------
    indices : list of MultiIndex
        Elements in generation order; ``indices[0]`` is the zero multi-index.
    weights : list
        ``mu^alpha`` (TS and aTD), ``|alpha|`` (isoTD) or
        ``max_n g_n alpha_n / g_min`` (aTP, isoTP).
    children : list of list of int
        Child ordinals of each ordinal, sorted by the child's length.
    parents : list of int
        Parent ordinal, -1 for the root.

    Build instances with :func:`build_index_set`; they are not modified
    afterwards.
    """

    def __init__(self, spec, indices, weights, children, parents):
        self.spec = spec
        self.indices = indices
        self.weights = weights
        self.children = children
        self.parents = parents
        self.lengths = [length(a) for a in indices]
        kind = spec_kind(spec)
        # the membership rule actually used by the tree (aTD runs as TS)
        self._rule = "ts" if kind in ("ts", "atd") else ("td" if kind == "isotd" else "tp")
        if self._rule == "ts":
            ts = spec if kind == "ts" else spec.as_ts()
            self._mu = ts.mu
            self._eps = ts.eps
        elif kind == "isotd":
            self._N, self._K = spec.N, spec.K
        else:
            self._N, self._K = spec.N, float(spec.K)
            g = spec.g if kind == "atp" else (1.0,) * spec.N
            self._ratio = tuple(x / g[0] for x in g)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[MultiIndex]:
        return iter(self.indices)

    def __getitem__(self, ordinal: int) -> MultiIndex:
        return self.indices[ordinal]

    @property
    def max_length(self) -> int:
        return max(self.lengths)

    @property
    def max_exponent(self) -> int:
        return max((v for a in self.indices for _, v in a), default=0)

    @property
    def max_degree(self) -> int:
        return max(degree(a) for a in self.indices)

    # -- location -------------------------------------------------------

    def walk(self, target: MultiIndex) -> tuple[int, int]:
        """Tree walk to ``target``; returns ``(ordinal, steps)``, ordinal -1 if absent."""
        children = self.children
        lengths = self.lengths
        from_end = self._rule == "tp"
        k = 0
        u = 1
        steps = 0
        for pos, val in target:
            if val <= 0:
                return -1, steps
            j = val
            if pos > u:
                kids = children[k]
                if not kids:
                    return -1, steps
                if from_end:
                    # aTP: the child at position u may be missing, count from the back
                    idx = len(kids) - 1 - (lengths[kids[-1]] - pos)
                else:
                    idx = pos - u
                if idx < 0 or idx >= len(kids) or lengths[kids[idx]] != pos:
                    return -1, steps
                k = kids[idx]
                steps += 1
                j -= 1
                u = pos
            while j > 0:
                kids = children[k]
                if not kids or lengths[kids[0]] != pos:
                    return -1, steps
                k = kids[0]
                steps += 1
                j -= 1
        return k, steps

    def locate(self, target: MultiIndex) -> int:
        """Ordinal of ``target``; raises :class:`NotInSetError` if it is absent."""
        k, _ = self.walk(tuple(target))
        if k < 0:
            raise NotInSetError(f"{format_pairs(target) or '0'} is not in the index set")
        return k

    # -- membership -----------------------------------------------------

    def _ts_value(self, gamma: SignedMultiIndex) -> float | None:
        """``mu^gamma`` multiplied in tree order (bit-identical to stored weights)."""
        mu = self._mu
        val = 1.0
        for pos, e in gamma:
            if pos > len(mu) or mu[pos - 1] <= 0.0:
                return None
            m = mu[pos - 1]
            for _ in range(e):
                val *= m
        return val

    def contains(self, candidate: SignedMultiIndex, weight_hint: float | None = None) -> bool:
        """Set condition for ``candidate``, without a tree walk in the common case.

        ``weight_hint`` is an approximation of ``mu^candidate`` (TS/aTD sets),
        typically ``mu^eta / mu^w`` from stored weights. Only when it falls
        within a narrow band around the threshold is the exact ordered
        product recomputed.
        """
        for _, v in candidate:
            if v < 0:
                return False
        if self._rule == "ts":
            if candidate and (candidate[-1][0] > len(self._mu)):
                return False
            eps = self._eps
            if weight_hint is not None:
                if weight_hint >= eps * (1.0 + _RATIO_BAND):
                    return True
                if weight_hint < eps * (1.0 - _RATIO_BAND):
                    return False
            val = self._ts_value(candidate)
            return val is not None and val >= eps
        if candidate and candidate[-1][0] > self._N:
            return False
        if self._rule == "td":
            return degree(candidate) <= self._K
        ratio, K = self._ratio, self._K
        return all(_atp_ok(ratio[p - 1], v, K) for p, v in candidate)

    def __contains__(self, candidate) -> bool:
        return self.contains(tuple(candidate))

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        """One line per element: ``ordinal, parent, pairs, weight`` tab-separated."""
        lines = [
            f"{i}\t{self.parents[i]}\t{format_pairs(a)}\t{float(self.weights[i]):.17g}"
            for i, a in enumerate(self.indices)
        ]
        return "\n".join(lines) + "\n"


def read_index_text(text: str) -> list[tuple[int, int, MultiIndex, float]]:
    """Parse the text serialization back into ``(ordinal, parent, index, weight)`` rows."""
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"malformed index-set line: {line!r}")
        rows.append((int(parts[0]), int(parts[1]), parse_pairs(parts[2]), float(parts[3])))
    return rows


def index_set_from_text(spec: IndexSetSpec, text: str) -> IndexSet:
    """Rebuild an :class:`IndexSet` (tree included) from :meth:`IndexSet.to_text` output."""
    rows = read_index_text(text)
    n = len(rows)
    indices = [()] * n
    weights = [0.0] * n
    parents = [-1] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for ordinal, parent, alpha, weight in rows:
        indices[ordinal] = alpha
        weights[ordinal] = weight
        parents[ordinal] = parent
    # front insertion in generation order == sort by child length
    for ordinal in range(1, n):
        children[parents[ordinal]].insert(0, ordinal)
    for kids in children:
        kids.sort(key=lambda c: length(indices[c]))
    return IndexSet(spec, indices, weights, children, parents)


# ---------------------------------------------------------------------------
# construction


def _children_ts(mu, eps):
    nmu = len(mu)

    def feasible(alpha, weight):
        start = max(length(alpha), 1)
        out = []
        for m in range(start, nmu + 1):
            val = weight * mu[m - 1]
            if val >= eps:
                out.append((m, val))
            else:
                # mu is nonincreasing: no later position can pass either
                break
        return out

    return feasible


def _children_td(N, K):
    def feasible(alpha, weight):
        if weight >= K:
            return []
        return [(m, weight + 1) for m in range(max(length(alpha), 1), N + 1)]

    return feasible


def _children_tp(N, K, ratio):
    def feasible(alpha, weight):
        u = length(alpha)
        out = []
        for m in range(max(u, 1), N + 1):
            cur = alpha[-1][1] if (alpha and m == u) else 0
            if _atp_ok(ratio[m - 1], cur + 1, K):
                out.append((m, max(weight, ratio[m - 1] * (cur + 1))))
        return out

    return feasible


def build_index_set(spec: IndexSetSpec) -> IndexSet:
    """Generate the index set described by ``spec`` with its parenthood tree."""
    if not isinstance(spec, (TS, IsoTD, ATD, IsoTP, ATP)):
        raise ConfigurationError(f"not an index set spec: {spec!r}")
    if isinstance(spec, (TS, ATD)):
        ts = spec if isinstance(spec, TS) else spec.as_ts()
        feasible = _children_ts(ts.mu, ts.eps)
        root_weight = 1.0
    elif isinstance(spec, IsoTD):
        feasible = _children_td(spec.N, spec.K)
        root_weight = 0
    else:
        g = spec.g if isinstance(spec, ATP) else (1.0,) * spec.N
        feasible = _children_tp(spec.N, float(spec.K), tuple(x / g[0] for x in g))
        root_weight = 0.0

    indices: list[MultiIndex] = [()]
    weights = [root_weight]
    children: list[list[int]] = [[]]
    parents = [-1]
    stack: list[tuple[int, int, float]] = []
    for m, val in feasible((), root_weight):
        stack.append((0, m, val))
    while stack:
        parent, m, val = stack.pop()
        alpha = indices[parent]
        if alpha and alpha[-1][0] == m:
            child = alpha[:-1] + ((m, alpha[-1][1] + 1),)
        else:
            child = alpha + ((m, 1),)
        ordinal = len(indices)
        indices.append(child)
        weights.append(val)
        children.append([])
        parents.append(parent)
        children[parent].insert(0, ordinal)
        for mm, vv in feasible(child, val):
            stack.append((ordinal, mm, vv))
    return IndexSet(spec, indices, weights, children, parents)
