"""Indicator sets and candidate sets shared by the recovery and matching phases."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping


class IndicatorSets:
    """Per-variable sets of recovered-noise indices.

    ``sets[i]`` holds the indices (``0..k-1``) of the recovered noises that
    are dependent on observed variable ``i``. Possible-parent sets and
    residual sets are derived lazily and cached.

    Parameters
    ----------
    sets : mapping from observed-variable id to an iterable of noise indices
    k : number of recovered noises; defaults to ``1 + max index``
    """

    def __init__(self, sets: Mapping[int, Iterable[int]], k: int | None = None):
        self._sets = {int(v): frozenset(int(j) for j in s) for v, s in sets.items()}
        used = set().union(*self._sets.values()) if self._sets else set()
        if k is None:
            k = max(used) + 1 if used else 0
        if any(j < 0 or j >= k for j in used):
            raise ValueError(f"noise indices must lie in [0, {k})")
        self.k = int(k)

    def __getitem__(self, v: int) -> frozenset:
        return self._sets[v]

    def __contains__(self, v: int) -> bool:
        return v in self._sets

    def __iter__(self):
        return iter(self.variables)

    def __len__(self) -> int:
        return len(self._sets)

    def __eq__(self, other) -> bool:
        if not isinstance(other, IndicatorSets):
            return NotImplemented
        return self._sets == other._sets and self.k == other.k

    def __repr__(self) -> str:
        body = ", ".join(f"{v}: {sorted(self._sets[v])}" for v in self.variables)
        return f"IndicatorSets({{{body}}}, k={self.k})"

    @cached_property
    def variables(self) -> tuple:
        return tuple(sorted(self._sets))

    def as_dict(self) -> dict:
        return dict(self._sets)

    @cached_property
    def _possible_parents(self) -> dict:
        return {
            i: frozenset(j for j in self.variables if self._sets[j] < self._sets[i])
            for i in self.variables
        }

    def possible_parents(self, i: int) -> frozenset:
        """Variables whose indicator set is a strict subset of ``I_i``."""
        return self._possible_parents[i]

    @cached_property
    def _residuals(self) -> dict:
        out = {}
        for i in self.variables:
            covered = set()
            for j in self._possible_parents[i]:
                covered |= self._sets[j]
            out[i] = self._sets[i] - covered
        return out

    def residual(self, i: int) -> frozenset:
        """Noises of ``I_i`` covered by no indicator set of a possible parent."""
        return self._residuals[i]

    @cached_property
    def _groups(self) -> dict:
        groups: dict = {}
        for v in self.variables:
            groups.setdefault(self._sets[v], []).append(v)
        return {s: tuple(vs) for s, vs in groups.items()}

    def group_of(self, i: int) -> tuple:
        """All variables sharing ``I_i``, including ``i``, in id order."""
        return self._groups[self._sets[i]]

    def is_unique(self, i: int) -> bool:
        return len(self.group_of(i)) == 1

    def holders(self, noise: int) -> tuple:
        """Variables whose indicator set contains ``noise``."""
        return tuple(v for v in self.variables if noise in self._sets[v])

    def unused_noises(self) -> frozenset:
        """Noise indices that appear in no indicator set."""
        used = set().union(*self._sets.values()) if self._sets else set()
        return frozenset(range(self.k)) - used

    def relabel(self, perm: Mapping[int, int]) -> "IndicatorSets":
        """Apply a noise-index permutation ``old -> new``."""
        return IndicatorSets({v: {perm[j] for j in s} for v, s in self._sets.items()}, self.k)

    def to_matrix(self):
        """Binary matrix, rows in ``variables`` order, one column per noise."""
        import numpy as np

        m = np.zeros((len(self.variables), self.k), dtype=bool)
        for r, v in enumerate(self.variables):
            m[r, sorted(self._sets[v])] = True
        return m


@dataclass(frozen=True)
class CandidateSet:
    """Output of the matching phase.

    ``verdicts`` records which rule decided each observed variable:
    ``"I"`` (empty residual), ``"A"`` (residual noises anchored elsewhere),
    ``"II"`` / ``"unique"`` (unique indicator set), ``"C1"`` / ``"C2"``
    (group resolution, with suffix ``":in"`` or ``":out"``), or
    ``"aux-child"`` for the graphical characterization.
    """

    members: frozenset
    verdicts: dict = field(default_factory=dict, compare=False)
    latent_only: frozenset = field(default=frozenset(), compare=False)

    def __contains__(self, v) -> bool:
        return v in self.members

    def __iter__(self):
        return iter(sorted(self.members))

    def __len__(self) -> int:
        return len(self.members)
