"""Shared fixtures and brute-force reference implementations."""

import itertools
import zlib

import numpy as np
import pytest

from littarget.ci import CiBackend
from littarget.graph import Dag, build_augmented_graph


def chain_graph():
    # 1 -> 2 -> 3, all observed
    return Dag({1: "observed", 2: "observed", 3: "observed"}, [(1, 2), (2, 3)])


def seven_node_graph():
    # targets 1, 2, 5; I_5 = I_6 = I_7 = {N1, N2, N5}, I_4 empty
    kinds = {v: "observed" for v in range(1, 8)}
    edges = [(1, 3), (2, 3), (3, 5), (4, 5), (5, 6), (6, 7)]
    return Dag(kinds, edges), frozenset({1, 2, 5})


def confounded_graph(latent_target: bool):
    # node 0 is a hidden confounder of 1 and 2
    kinds = {0: "latent", 1: "observed", 2: "observed", 3: "observed"}
    edges = [(0, 1), (0, 2), (1, 2), (2, 3)]
    T = frozenset({0, 2}) if latent_target else frozenset({1, 2})
    return Dag(kinds, edges), T


@pytest.fixture
def seven():
    g, T = seven_node_graph()
    return build_augmented_graph(g, T)


@pytest.fixture
def confounded():
    g, T = confounded_graph(False)
    return build_augmented_graph(g, T)


@pytest.fixture
def confounded_latent_target():
    g, T = confounded_graph(True)
    return build_augmented_graph(g, T)


def simple_paths(g, a, b):
    """All simple paths between ``a`` and ``b`` in the skeleton."""
    out = []

    def walk(path):
        v = path[-1]
        for y in sorted(g.neighbors(v)):
            if y in path:
                continue
            if y == b:
                out.append(path + [y])
            else:
                walk(path + [y])

    walk([a])
    return out


def _collider(g, p, m, q):
    return (p, m) in g.edges and (q, m) in g.edges


def brute_d_separated(g, a, b, W):
    """Path enumeration: no path is active given ``W``."""
    W = set(W)
    for path in simple_paths(g, a, b):
        active = True
        for p, m, q in zip(path, path[1:], path[2:]):
            if _collider(g, p, m, q):
                if m not in W and not (g.descendants(m) & W):
                    active = False
                    break
            elif m in W:
                active = False
                break
        if active:
            return False
    return True


def brute_inducing_path(g, a, b, hidden):
    """Some path whose non-colliders are hidden and whose colliders are
    ancestors of ``a`` or ``b``."""
    anc = g.ancestors_of((a, b))
    for path in simple_paths(g, a, b):
        ok = True
        for p, m, q in zip(path, path[1:], path[2:]):
            if _collider(g, p, m, q):
                if m not in anc:
                    ok = False
                    break
            elif m not in hidden:
                ok = False
                break
        if ok:
            return True
    return False


class TableBackend(CiBackend):
    """Deterministic pseudo-random answers keyed on the query, for
    comparing two algorithms against the same backend."""

    exact = False

    def __init__(self, salt=0):
        super().__init__()
        self.salt = salt

    def _h(self, q):
        return zlib.crc32(f"{self.salt}{q.key()!r}".encode())

    def _independent(self, q):
        return self._h(q) % 3 == 0

    def dependence_score(self, q):
        with self._lock:
            self.calls += 1
        return (self._h(q) % 1000) / 1000.0


def random_dags(seed, count, n_range=(3, 8), latent=False):
    from littarget.simulate import random_dag

    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(*n_range))
        lat = int(rng.integers(0, n // 2 + 1)) if latent else 0
        yield random_dag(n, min(1.0, 2.0 / (n - 1)), lat, rng)


def all_pairs(nodes):
    return itertools.combinations(sorted(nodes), 2)
