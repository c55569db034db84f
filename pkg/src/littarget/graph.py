"""Directed-graph machinery: DAGs with latent nodes, augmented graphs with
explicit noise nodes, d-separation, inducing paths, MAG projection and the
auxiliary graph whose noise-children characterize the candidate set.

Node ids are integers. Every node carries a kind: observed, latent, or
noise (noise nodes only appear in augmented graphs).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

from .sets import CandidateSet, IndicatorSets


class NodeKind(str, enum.Enum):
    OBSERVED = "observed"
    LATENT = "latent"
    NOISE = "noise"


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class Dag:
    """Immutable DAG with typed nodes.

    Parameters
    ----------
    kinds : mapping node id -> NodeKind (or its string value), or a sequence
        of kinds indexed by id
    edges : iterable of ``(parent, child)`` pairs
    """

    def __init__(self, kinds, edges: Iterable = ()):
        if not isinstance(kinds, Mapping):
            kinds = dict(enumerate(kinds))
        self._kinds = {int(v): NodeKind(k) for v, k in kinds.items()}
        parents = {v: set() for v in self._kinds}
        children = {v: set() for v in self._kinds}
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a not in self._kinds or b not in self._kinds:
                raise GraphError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise GraphError(f"self-loop on node {a}")
            if (a, b) in seen:
                raise GraphError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
            parents[b].add(a)
            children[a].add(b)
        self._edges = frozenset(seen)
        self._parents = {v: frozenset(p) for v, p in parents.items()}
        self._children = {v: frozenset(c) for v, c in children.items()}
        self._order = self._toposort()

    def _toposort(self) -> tuple:
        indeg = {v: len(p) for v, p in self._parents.items()}
        queue = deque(sorted(v for v, d in indeg.items() if d == 0))
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for c in sorted(self._children[v]):
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self._kinds):
            raise CycleError("graph contains a directed cycle")
        return tuple(order)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dag):
            return NotImplemented
        return self._kinds == other._kinds and self._edges == other._edges

    def __hash__(self):
        return hash((frozenset(self._kinds.items()), self._edges))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(nodes={len(self._kinds)}, edges={sorted(self._edges)})"

    @property
    def nodes(self) -> tuple:
        return tuple(sorted(self._kinds))

    @property
    def edges(self) -> frozenset:
        return self._edges

    @property
    def kinds(self) -> dict:
        return dict(self._kinds)

    def kind(self, v: int) -> NodeKind:
        self._check(v)
        return self._kinds[v]

    def has_node(self, v) -> bool:
        return v in self._kinds

    def _check(self, v):
        if v not in self._kinds:
            raise GraphError(f"unknown node id {v!r}")

    def _check_all(self, vs):
        for v in vs:
            self._check(v)

    def of_kind(self, kind) -> frozenset:
        kind = NodeKind(kind)
        return frozenset(v for v, k in self._kinds.items() if k is kind)

    @cached_property
    def observed(self) -> frozenset:
        return self.of_kind(NodeKind.OBSERVED)

    @cached_property
    def latent(self) -> frozenset:
        return self.of_kind(NodeKind.LATENT)

    def parents(self, v: int) -> frozenset:
        self._check(v)
        return self._parents[v]

    def children(self, v: int) -> frozenset:
        self._check(v)
        return self._children[v]

    def neighbors(self, v: int) -> frozenset:
        return self.parents(v) | self.children(v)

    def topological_order(self) -> tuple:
        return self._order

    def ancestors(self, v: int) -> frozenset:
        """All nodes with a directed path to ``v``, including ``v`` itself."""
        return self.ancestors_of((v,))

    def ancestors_of(self, vs: Iterable[int]) -> frozenset:
        vs = list(vs)
        self._check_all(vs)
        seen = set(vs)
        stack = list(vs)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return frozenset(seen)

    def descendants(self, v: int) -> frozenset:
        """All nodes reachable from ``v`` by a directed path, including ``v``."""
        self._check(v)
        seen = {v}
        stack = [v]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return frozenset(seen)


class AugmentedGraph(Dag):
    """DAG with one explicit noise node per intervention target.

    Observed targets gain a noise parent. Latent targets are replaced by
    their noise node, which inherits the latent's outgoing edges and has no
    incoming edges.

    Attributes
    ----------
    base : the original Dag
    targets : intervention targets, as base node ids
    noise_of : target id -> noise node id
    replaced_latents : latent target id -> noise node id
    noise_nodes : noise node ids, indexed by noise index (targets in id order)
    """

    def __init__(self, kinds, edges, base: Dag, targets, noise_of, replaced_latents):
        super().__init__(kinds, edges)
        self.base = base
        self.targets = frozenset(targets)
        self.noise_of = dict(noise_of)
        self.replaced_latents = dict(replaced_latents)
        self.noise_nodes = tuple(self.noise_of[t] for t in sorted(self.targets))

    @cached_property
    def noise_index(self) -> dict:
        """Noise node id -> noise index."""
        return {node: j for j, node in enumerate(self.noise_nodes)}

    @cached_property
    def hidden(self) -> frozenset:
        """Latent nodes that are not intervention targets."""
        return self.latent

    @property
    def observed_targets(self) -> frozenset:
        return frozenset(t for t in self.targets if t not in self.replaced_latents)


def build_augmented_graph(g: Dag, targets: Iterable[int]) -> AugmentedGraph:
    targets = frozenset(int(t) for t in targets)
    bad = targets - set(g.nodes)
    if bad:
        raise GraphError(f"targets {sorted(bad)} are not nodes of the graph")
    base_id = (max(g.nodes) + 1) if g.nodes else 0
    noise_of = {t: base_id + r for r, t in enumerate(sorted(targets))}
    replaced = {t: noise_of[t] for t in targets if g.kind(t) is NodeKind.LATENT}

    kinds = {v: k for v, k in g.kinds.items() if v not in replaced}
    kinds.update({node: NodeKind.NOISE for node in noise_of.values()})
    edges = set()
    for a, b in g.edges:
        if b in replaced:
            continue
        edges.add((replaced.get(a, a), b))
    for t, node in noise_of.items():
        if t not in replaced:
            edges.add((node, t))
    return AugmentedGraph(kinds, edges, g, targets, noise_of, replaced)


def _as_sets(*groups):
    return [frozenset(int(v) for v in grp) for grp in groups]


def d_separated(g: Dag, U: Iterable[int], V: Iterable[int], W: Iterable[int] = ()) -> bool:
    """True iff every path between ``U`` and ``V`` is blocked given ``W``.

    Reachability ("Bayes-ball") formulation: linear in the number of edges.
    """
    U, V, W = _as_sets(U, V, W)
    g._check_all(U | V | W)
    if U & V or U & W or V & W:
        raise GraphError("U, V and W must be pairwise disjoint")
    if not U or not V:
        return True
    anc_w = g.ancestors_of(W)
    # direction "up": entered from a child; "down": entered from a parent
    visited = set()
    stack = [(u, "up") for u in U]
    while stack:
        v, d = stack.pop()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v in V:
            return False
        if d == "up":
            if v in W:
                continue
            stack.extend((p, "up") for p in g.parents(v))
            stack.extend((c, "down") for c in g.children(v))
        else:
            if v not in W:
                stack.extend((c, "down") for c in g.children(v))
            if v in anc_w:
                stack.extend((p, "up") for p in g.parents(v))
    return True


def has_inducing_path(g: Dag, a: int, b: int, hidden: Iterable[int] | None = None) -> bool:
    """Whether an inducing path between ``a`` and ``b`` relative to ``hidden`` exists.

    Every interior node must be hidden or a collider, and every collider an
    ancestor of ``a`` or ``b``. Searched over (node, arrowhead-into-node)
    states, so the cost is linear in the number of edges.
    """
    g._check(a)
    g._check(b)
    if a == b:
        raise GraphError("endpoints of an inducing path must differ")
    hidden = g.latent if hidden is None else frozenset(hidden)
    anc = g.ancestors_of((a, b))

    def steps(v):
        # (next node, arrowhead at v on this edge, arrowhead at next node)
        for c in g.children(v):
            yield c, False, True
        for p in g.parents(v):
            yield p, True, False

    visited = set()
    stack = []
    for x, _, into_x in steps(a):
        if x == b:
            return True
        stack.append((x, into_x))
    while stack:
        w, into_w = stack.pop()
        if (w, into_w) in visited:
            continue
        visited.add((w, into_w))
        for y, arrow_at_w, into_y in steps(w):
            if y == a:
                continue
            collider = into_w and arrow_at_w
            if collider:
                if w not in anc:
                    continue
            elif w not in hidden:
                continue
            if y == b:
                return True
            stack.append((y, into_y))
    return False


class Mark(str, enum.Enum):
    TAIL = "tail"
    ARROW = "arrow"


@dataclass(frozen=True)
class MagEdge:
    """Edge between ``a < b`` with the mark at each endpoint."""

    a: int
    b: int
    mark_a: Mark
    mark_b: Mark


class Mag:
    """Maximal ancestral graph over the retained (non-hidden) nodes."""

    def __init__(self, nodes: Iterable[int], edges: Iterable[MagEdge]):
        self.nodes = tuple(sorted(nodes))
        self.edges = frozenset(edges)
        self._by_pair = {frozenset((e.a, e.b)): e for e in self.edges}

    def adjacent(self, u: int, v: int) -> bool:
        return frozenset((u, v)) in self._by_pair

    def edge(self, u: int, v: int) -> MagEdge | None:
        return self._by_pair.get(frozenset((u, v)))

    def mark_at(self, u: int, v: int) -> Mark | None:
        """Mark at endpoint ``v`` of the edge between ``u`` and ``v``."""
        e = self.edge(u, v)
        if e is None:
            return None
        return e.mark_b if v == e.b else e.mark_a

    @property
    def directed(self) -> frozenset:
        out = set()
        for e in self.edges:
            if e.mark_a is Mark.TAIL and e.mark_b is Mark.ARROW:
                out.add((e.a, e.b))
            elif e.mark_a is Mark.ARROW and e.mark_b is Mark.TAIL:
                out.add((e.b, e.a))
        return frozenset(out)

    @property
    def bidirected(self) -> frozenset:
        return frozenset(
            frozenset((e.a, e.b))
            for e in self.edges
            if e.mark_a is Mark.ARROW and e.mark_b is Mark.ARROW
        )

    def adjacencies(self) -> frozenset:
        return frozenset(self._by_pair)


def project_to_mag(g: Dag, hidden: Iterable[int] | None = None) -> Mag:
    """Latent projection: adjacency iff an inducing path exists; marks from
    ancestral relations in ``g``."""
    hidden = g.latent if hidden is None else frozenset(hidden)
    g._check_all(hidden)
    kept = [v for v in g.nodes if v not in hidden]
    anc = {v: g.ancestors(v) for v in kept}
    edges = []
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            if not has_inducing_path(g, a, b, hidden):
                continue
            mark_a = Mark.TAIL if a in anc[b] else Mark.ARROW
            mark_b = Mark.TAIL if b in anc[a] else Mark.ARROW
            edges.append(MagEdge(a, b, mark_a, mark_b))
    return Mag(kept, edges)


def oracle_indicator_sets(g: AugmentedGraph) -> IndicatorSets:
    """Noise indices whose noise node is an ancestor of each observed node."""
    sets = {}
    for v in sorted(g.observed):
        sets[v] = {g.noise_index[a] for a in g.ancestors(v) if a in g.noise_index}
    return IndicatorSets(sets, k=len(g.noise_nodes))


@dataclass(frozen=True)
class AuxiliaryGraph:
    """Augmented graph with noise-to-observed edges added or removed."""

    base: AugmentedGraph
    added_edges: frozenset
    removed_edges: frozenset

    @property
    def edges(self) -> frozenset:
        return (self.base.edges - self.removed_edges) | self.added_edges

    def children(self, v: int) -> frozenset:
        return frozenset(b for a, b in self.edges if a == v)


def build_auxiliary_graph(g: AugmentedGraph) -> AuxiliaryGraph:
    """Add or remove noise-to-observed edges of the augmented graph.

    Children and parents of a noise node are read in the ancestral
    projection over ``g.hidden``: a noise node is linked to an observed node
    iff an inducing path joins them. The parents used when propagating a
    kept latent-noise edge are the linked noises in the residual set of its
    endpoint.
    """
    hidden = g.hidden
    observed = sorted(g.observed)
    ind = oracle_indicator_sets(g)
    base_edges = g.edges
    ip_cache = {}

    def ip(u, v):
        if (u, v) not in ip_cache:
            ip_cache[(u, v)] = has_inducing_path(g, u, v, hidden)
        return ip_cache[(u, v)]

    final = {(a, b) for a, b in base_edges if a in g.noise_index and b in g.observed
             and a not in g.replaced_latents.values()}

    # (a): noises of observed targets reach same-indicator variables through
    # inducing paths
    for t in sorted(g.observed_targets):
        n_t = g.noise_of[t]
        for x in observed:
            if x != t and ind[x] == ind[t] and ip(n_t, x):
                final.add((n_t, x))

    # (b)(i): a latent-target noise keeps an edge only to children whose
    # indicator set is contained in those of all its other children
    kept = []
    for node in (g.noise_of[t] for t in sorted(g.replaced_latents)):
        kids = [x for x in observed if ip(node, x)]
        for x in kids:
            if all(ind[x] <= ind[y] for y in kids if y != x):
                kept.append((node, x))

    # (b)(ii): decisions are collected against the post-(b)(i) edge set and
    # applied together, so the result does not depend on edge order
    add_b, rm_b = set(), set()
    for node, x in kept:
        residual = {g.noise_nodes[j] for j in ind.residual(x)}
        parents = [p for p in sorted(residual) if ip(p, x)]
        for y in observed:
            if y == x or ind[y] != ind[x]:
                continue
            if all(ip(p, y) for p in parents):
                add_b.add((node, y))
            else:
                rm_b.add((node, y))
    final |= (set(kept) | add_b) - rm_b

    # latent-noise edges into hidden nodes are left untouched
    final |= {(a, b) for a, b in base_edges if a in g.noise_index and b not in g.observed}
    noise_edges = {(a, b) for a, b in base_edges if a in g.noise_index}
    return AuxiliaryGraph(
        base=g,
        added_edges=frozenset(final - noise_edges),
        removed_edges=frozenset(noise_edges - final),
    )


def theoretical_candidate_set(aux: AuxiliaryGraph) -> CandidateSet:
    """Observed children of all noise nodes of the auxiliary graph."""
    g = aux.base
    noise = frozenset(g.noise_nodes)
    members = frozenset(b for a, b in aux.edges if a in noise and b in g.observed)
    return CandidateSet(members, {v: "aux-child" for v in sorted(members)})


# -- text serialization ------------------------------------------------------

def dumps_graph(g: Dag, targets: Iterable[int] | None = None, coefficients: Mapping | None = None) -> str:
    """Line-oriented format: ``nodes <n>``, then ``<id> <kind>`` per node,
    then ``edge <a> <b>`` lines, optional ``targets ...`` and ``coef a b w``."""
    lines = [f"nodes {len(g.nodes)}"]
    lines += [f"{v} {g.kind(v).value}" for v in g.nodes]
    lines += [f"edge {a} {b}" for a, b in sorted(g.edges)]
    if targets is not None:
        lines.append("targets " + " ".join(str(t) for t in sorted(targets)))
    if coefficients:
        lines += [f"coef {a} {b} {w!r}" for (a, b), w in sorted(coefficients.items())]
    return "\n".join(lines) + "\n"


def loads_graph(text: str) -> tuple:
    """Parse the graph format. Returns ``(dag, targets_or_None, coefficients)``."""
    kinds, edges, coefs = {}, [], {}
    targets = None
    expected = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        try:
            if head == "nodes":
                expected = int(parts[1])
            elif head == "edge":
                edges.append((int(parts[1]), int(parts[2])))
            elif head == "targets":
                targets = frozenset(int(p) for p in parts[1:])
            elif head == "coef":
                coefs[(int(parts[1]), int(parts[2]))] = float(parts[3])
            else:
                kinds[int(parts[0])] = NodeKind(parts[1])
        except (IndexError, ValueError) as exc:
            raise GraphError(f"line {lineno}: cannot parse {raw!r}") from exc
    if expected is not None and expected != len(kinds):
        raise GraphError(f"header declares {expected} nodes, found {len(kinds)}")
    return Dag(kinds, edges), targets, coefs
