"""Matching phase: assign recovered noises to observed variables.

:func:`lit_match` is the reference loop over variables; :func:`lit_fast`
walks the indicator matrix instead (row/column support counts) and must
return the same candidate set for the same CI backend.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass

from .ci import CiBackend, noise, obs, query
from .sets import CandidateSet, IndicatorSets

log = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 6


class Mode(str, enum.Enum):
    SUFFICIENT = "sufficient"
    LATENT = "latent"


class FaithfulnessError(RuntimeError):
    """Exact CI answers contradict the structure implied by the indicator sets."""


@dataclass
class MatchStats:
    ci_tests_phase3: int = 0
    ci_tests_indicator: int = 0

    @property
    def total(self) -> int:
        return self.ci_tests_phase3 + self.ci_tests_indicator


def check_condition_I(I: IndicatorSets, i: int) -> bool:
    """True iff the residual set of ``i`` is empty (``i`` is not a target)."""
    return not I.residual(i)


def check_condition_II(I: IndicatorSets, i: int) -> bool:
    """True iff ``I_i`` is shared by no other variable (``i`` is a target)."""
    if not I.residual(i):
        raise ValueError(f"condition II needs a nonempty residual set for {i}")
    return I.is_unique(i)


def check_condition_A(I: IndicatorSets, i: int) -> bool:
    """True iff every residual noise of ``i`` also sits in some indicator set
    that does not contain ``I_i`` (``i`` is then not an observed target)."""
    res = I.residual(i)
    if not res:
        raise ValueError(f"condition A needs a nonempty residual set for {i}")
    own = I[i]
    return all(any(not own <= I[j] for j in I.holders(l) if j != i) for l in res)


def _sorted_subsets(items):
    items = sorted(items)
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


def resolve_group_C1(I: IndicatorSets, group, ci: CiBackend, stats: MatchStats | None = None,
                     residual=None, parents=None) -> int:
    """Pick the one group member that is an intervention target.

    With an exact backend this is the unique member ``k`` for which the
    residual noise is independent of every other member given ``k`` and the
    possible parents. With a statistical backend it is the member minimizing
    the summed dependence score over the rest of the group (ties go to the
    lowest id).
    """
    group = sorted(group)
    if len(group) < 2:
        raise ValueError("group resolution needs at least two variables")
    stats = stats if stats is not None else MatchStats()
    residual = sorted(I.residual(group[0]) if residual is None else residual)
    parents = I.possible_parents(group[0]) if parents is None else frozenset(parents)
    base = [obs(s) for s in sorted(parents)]

    if ci.exact:
        if len(residual) != 1:
            raise FaithfulnessError(
                f"group {group} has {len(residual)} residual noises; causal sufficiency needs exactly one"
            )
        l = residual[0]
        winners = []
        for k in group:
            ok = True
            for j in group:
                if j == k:
                    continue
                stats.ci_tests_phase3 += 1
                if not ci.is_independent(query(noise(l), obs(j), base + [obs(k)])):
                    ok = False
                    break
            if ok:
                winners.append(k)
        if len(winners) != 1:
            raise FaithfulnessError(f"{len(winners)} members of {group} satisfy the separation condition")
        return winners[0]

    best, best_score = None, None
    for k in group:
        score = 0.0
        for j in group:
            if j == k:
                continue
            for l in residual:
                stats.ci_tests_phase3 += 1
                score += ci.dependence_score(query(noise(l), obs(j), base + [obs(k)]))
        if best_score is None or score < best_score:
            best, best_score = k, score
    return best


def filter_group_C2(I: IndicatorSets, group, ci: CiBackend, exhaustive: bool | None = None,
                    stats: MatchStats | None = None, residual=None, parents=None) -> frozenset:
    """Drop every member that some residual noise is separated from.

    The conditioning set is a subset of the other members, a subset of the
    possible parents, and all other noises of the shared indicator set. The
    relaxed form only tries the full sets. Returns the surviving members.
    """
    group = sorted(group)
    if len(group) < 2:
        raise ValueError("group filtering needs at least two variables")
    stats = stats if stats is not None else MatchStats()
    shared = I[group[0]]
    residual = sorted(I.residual(group[0]) if residual is None else residual)
    parents = sorted(I.possible_parents(group[0]) if parents is None else parents)
    if exhaustive is None:
        exhaustive = ci.exact
    if exhaustive and (len(group) > EXHAUSTIVE_CAP or len(parents) > EXHAUSTIVE_CAP):
        log.warning("group of %d with %d possible parents exceeds the exhaustive cap; using relaxed test",
                    len(group), len(parents))
        exhaustive = False

    survivors = []
    for j in group:
        others = [v for v in group if v != j]
        removed = False
        for l in residual:
            extra = [noise(m) for m in sorted(shared - {l})]
            if exhaustive:
                choices = ((ks, ss) for ks in _sorted_subsets(others) for ss in _sorted_subsets(parents))
            else:
                choices = [(others, parents)]
            for ks, ss in choices:
                stats.ci_tests_phase3 += 1
                cond = [obs(v) for v in ks] + [obs(v) for v in ss] + extra
                if ci.is_independent(query(noise(l), obs(j), cond)):
                    removed = True
                    break
            if removed:
                break
        if not removed:
            survivors.append(j)
    return frozenset(survivors)


def _finish(members, verdicts, I: IndicatorSets) -> CandidateSet:
    return CandidateSet(frozenset(members), verdicts, I.unused_noises())


def lit_match(I: IndicatorSets, ci: CiBackend, mode=Mode.SUFFICIENT, exhaustive: bool | None = None):
    """Reference matching loop. Returns ``(CandidateSet, MatchStats)``."""
    mode = Mode(mode)
    stats = MatchStats()
    members, verdicts, pending = set(), {}, []
    for v in I.variables:
        if check_condition_I(I, v):
            verdicts[v] = "I"
        elif mode is Mode.LATENT and check_condition_A(I, v):
            verdicts[v] = "A"
        elif I.is_unique(v):
            members.add(v)
            verdicts[v] = "II" if mode is Mode.SUFFICIENT else "unique"
        else:
            pending.append(v)

    groups: dict = {}
    for v in pending:
        groups.setdefault(I[v], []).append(v)
    for shared in sorted(groups, key=lambda s: min(groups[s])):
        group = groups[shared]
        if mode is Mode.SUFFICIENT:
            winner = resolve_group_C1(I, group, ci, stats)
            members.add(winner)
            verdicts.update({v: "C1:in" if v == winner else "C1:out" for v in group})
        else:
            kept = filter_group_C2(I, group, ci, exhaustive, stats)
            members |= kept
            verdicts.update({v: "C2:in" if v in kept else "C2:out" for v in group})
    return _finish(members, verdicts, I), stats


def lit_fast(I: IndicatorSets, ci: CiBackend, mode=Mode.SUFFICIENT, exhaustive: bool | None = None):
    """Matrix-walk version of the matching loop.

    Rows are visited in order of their nonzero count ``n`` (ties: fewest
    remaining entries, then lowest id). Visiting a row settles every row with
    the same indicator set, then deletes that set's columns from the rows
    whose indicator set strictly contains it, so a row's remaining support
    is its residual set when it is reached. Rows left without entries are
    excluded. In latent mode the residual columns are scanned in order of
    their column count ``m`` to test whether each is anchored outside the
    row's supersets.
    """
    mode = Mode(mode)
    stats = MatchStats()
    members, verdicts = set(), {}
    n_row = {v: len(I[v]) for v in I.variables}
    m_col = {c: len(I.holders(c)) for c in range(I.k)}
    current = {}
    for v in I.variables:
        if I[v]:
            current[v] = set(I[v])
        else:
            verdicts[v] = "I"

    while current:
        w = min(current, key=lambda v: (n_row[v], len(current[v]), v))
        full = I[w]
        support = frozenset(current[w])
        z_j = sorted(v for v in current if I[v] == full)

        if mode is Mode.SUFFICIENT:
            if len(z_j) == 1:
                members.add(w)
                verdicts[w] = "II"
            else:
                winner = resolve_group_C1(I, z_j, ci, stats, residual=support,
                                          parents=I.possible_parents(w))
                members.add(winner)
                verdicts.update({v: "C1:in" if v == winner else "C1:out" for v in z_j})
        else:
            anchored = all(
                any(not full <= I[v] for v in I.holders(c))
                for c in sorted(support, key=lambda c: (m_col[c], c))
            )
            if anchored:
                verdicts.update({v: "A" for v in z_j})
            elif len(z_j) == 1:
                members.add(w)
                verdicts[w] = "unique"
            else:
                kept = filter_group_C2(I, z_j, ci, exhaustive, stats, residual=support,
                                       parents=I.possible_parents(w))
                members |= kept
                verdicts.update({v: "C2:in" if v in kept else "C2:out" for v in z_j})

        for v in z_j:
            del current[v]
        for v in list(current):
            if full < I[v]:
                current[v] -= full
                if not current[v]:
                    verdicts[v] = "I"
                    del current[v]
    return _finish(members, verdicts, I), stats
