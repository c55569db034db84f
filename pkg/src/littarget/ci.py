"""Conditional-independence answering for the matching phase.

Two interchangeable backends answer queries between recovered noises and
observed variables:

* :class:`GraphOracle` reads d-separation off the augmented graph (the
  infinite-sample answer under T-faithfulness).
* :class:`PartialCorrelationTest` runs a Fisher-z partial-correlation test
  within each environment and combines the per-environment z scores.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .graph import AugmentedGraph, d_separated


class Ref(NamedTuple):
    """Reference to an observed variable (``"x"``) or a recovered noise (``"n"``)."""

    kind: str
    index: int

    def __repr__(self) -> str:
        return f"{'X' if self.kind == 'x' else 'N~'}{self.index}"


def obs(i: int) -> Ref:
    return Ref("x", int(i))


def noise(j: int) -> Ref:
    return Ref("n", int(j))


class CiError(ValueError):
    pass


@dataclass(frozen=True)
class CiQuery:
    x: Ref
    y: Ref
    cond: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "cond", frozenset(self.cond))
        if self.x == self.y:
            raise CiError("x and y must differ")
        if self.x in self.cond or self.y in self.cond:
            raise CiError("x and y must not appear in the conditioning set")

    def key(self) -> tuple:
        pair = tuple(sorted((self.x, self.y)))
        return pair + (tuple(sorted(self.cond)),)


def query(x: Ref, y: Ref, cond: Iterable[Ref] = ()) -> CiQuery:
    return CiQuery(x, y, frozenset(cond))


class CiBackend:
    """Common bookkeeping: a call counter and a thread-safe memo cache."""

    exact = False

    def __init__(self, memoize: bool = True):
        self.calls = 0
        self._memo = {} if memoize else None
        self._lock = threading.Lock()

    def is_independent(self, q: CiQuery) -> bool:
        with self._lock:
            self.calls += 1
            if self._memo is not None and q.key() in self._memo:
                return self._memo[q.key()]
        ans = self._independent(q)
        if self._memo is not None:
            with self._lock:
                self._memo[q.key()] = ans
        return ans

    def _independent(self, q: CiQuery) -> bool:
        raise NotImplementedError


class GraphOracle(CiBackend):
    """d-separation on the augmented graph, with recovered-noise index ``j``
    mapped to noise node ``noise_nodes[j]``."""

    exact = True

    def __init__(self, graph: AugmentedGraph, noise_nodes: Sequence[int] | None = None, memoize: bool = True):
        super().__init__(memoize)
        self.graph = graph
        self.noise_nodes = tuple(graph.noise_nodes if noise_nodes is None else noise_nodes)
        if sorted(self.noise_nodes) != sorted(graph.noise_nodes):
            raise CiError("noise map must be a permutation of the graph's noise nodes")

    def _node(self, r: Ref) -> int:
        if r.kind == "n":
            try:
                return self.noise_nodes[r.index]
            except IndexError:
                raise CiError(f"unknown recovered noise {r}") from None
        if r.index not in self.graph.observed:
            raise CiError(f"{r} is not an observed variable of the graph")
        return r.index

    def _independent(self, q: CiQuery) -> bool:
        return d_separated(
            self.graph, {self._node(q.x)}, {self._node(q.y)}, {self._node(c) for c in q.cond}
        )


def _normal_scores(col: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(col)
    return stats.norm.ppf(ranks / (len(col) + 1.0))


class PartialCorrelationTest(CiBackend):
    """Fisher-z partial-correlation test pooled across environments.

    Each environment's ``x`` and ``y`` columns are residualized on the
    conditioning set (with intercept); the per-environment partial
    correlations are Fisher-z transformed and combined with Stouffer's
    method. Independence is reported iff the two-sided p-value is at least
    ``alpha``.

    Parameters
    ----------
    data : MultiEnvDataset
    noises : RecoveredNoises or array of shape (n_samples, k), row-aligned
        with ``data``
    alpha : significance level
    rank_normalize : replace each noise column by normal scores of its
        ranks, making the test invariant to monotone transforms of the
        recovered noises
    max_cond : largest conditioning set accepted
    """

    def __init__(self, data, noises, alpha: float = 0.15, rank_normalize: bool = True,
                 max_cond: int = 8, memoize: bool = True):
        super().__init__(memoize)
        n_samples = getattr(noises, "samples", noises)
        n_samples = np.asarray(n_samples, dtype=float)
        if n_samples.ndim == 1:
            n_samples = n_samples[:, None]
        if n_samples.shape[0] != data.X.shape[0]:
            raise CiError("noises are not aligned with the dataset")
        if rank_normalize:
            n_samples = np.column_stack([_normal_scores(c) for c in n_samples.T]) if n_samples.size else n_samples
        self.alpha = float(alpha)
        self.max_cond = int(max_cond)
        self.observed_ids = tuple(data.observed_ids)
        self._col = {v: c for c, v in enumerate(self.observed_ids)}
        self._X = np.asarray(data.X, dtype=float)
        self._N = n_samples
        self._envs = [np.flatnonzero(data.env == e) for e in np.unique(data.env)]

    def _column(self, r: Ref) -> np.ndarray:
        if r.kind == "n":
            if not 0 <= r.index < self._N.shape[1]:
                raise CiError(f"unknown recovered noise {r}")
            return self._N[:, r.index]
        if r.index not in self._col:
            raise CiError(f"{r} is not an observed column")
        return self._X[:, self._col[r.index]]

    def partial_correlations(self, q: CiQuery) -> np.ndarray:
        """Per-environment partial correlation of ``x`` and ``y`` given ``cond``."""
        if len(q.cond) > self.max_cond:
            raise CiError(f"conditioning set of size {len(q.cond)} exceeds cap {self.max_cond}")
        x, y = self._column(q.x), self._column(q.y)
        z = [self._column(c) for c in sorted(q.cond)]
        out = np.empty(len(self._envs))
        for e, idx in enumerate(self._envs):
            if len(idx) <= len(z) + 3:
                raise CiError("conditioning set larger than the sample support")
            design = np.column_stack([np.ones(len(idx))] + [c[idx] for c in z])
            xy = np.column_stack([x[idx], y[idx]])
            coef, *_ = np.linalg.lstsq(design, xy, rcond=None)
            res = xy - design @ coef
            sx, sy = np.sqrt((res ** 2).sum(axis=0))
            if sx == 0 or sy == 0:
                raise CiError(f"zero residual variance in environment {e}")
            out[e] = float(res[:, 0] @ res[:, 1] / (sx * sy))
        return out

    def p_value(self, q: CiQuery) -> float:
        r = np.clip(self.partial_correlations(q), -1 + 1e-12, 1 - 1e-12)
        m = np.array([len(idx) for idx in self._envs])
        z = np.arctanh(r) * np.sqrt(m - len(q.cond) - 3)
        combined = z.sum() / np.sqrt(len(z))
        return float(2 * stats.norm.sf(abs(combined)))

    def _independent(self, q: CiQuery) -> bool:
        return self.p_value(q) >= self.alpha

    def dependence_score(self, q: CiQuery) -> float:
        """Sum over environments of the absolute partial correlation."""
        with self._lock:
            self.calls += 1
        return float(np.abs(self.partial_correlations(q)).sum())
