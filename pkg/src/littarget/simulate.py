"""Random SCMs and multi-environment data.

Soft interventions only rescale exogenous noises: the graph and the
mechanisms are shared by all environments, and for each intervention target
the noise standard deviation changes from one environment to the next.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import Dag, GraphError, NodeKind, dumps_graph

LEAKY_SLOPE = 0.2


class NoiseFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class ExponentialFamilySpec:
    """Order-one exponential family ``p(n | u) ∝ Q(n) exp(lambda(u) q(n))``.

    Only scale families are generated: ``q(n) = -n**2 / 2`` (Gaussian) or
    ``q(n) = -|n|`` (Laplace), both strictly monotone in ``|n|``, and the
    natural parameter of environment ``u`` is fixed by its scale.
    """

    family: NoiseFamily

    def sufficient_statistic(self, x):
        x = np.asarray(x, dtype=float)
        if self.family is NoiseFamily.GAUSSIAN:
            return -(x ** 2) / 2
        return -np.abs(x)

    def natural_parameter(self, std):
        std = np.asarray(std, dtype=float)
        if self.family is NoiseFamily.GAUSSIAN:
            return 1.0 / std ** 2
        return np.sqrt(2.0) / std


@dataclass(frozen=True)
class LinearMechanism:
    """``coefficients[(parent, child)]`` is the edge weight."""

    coefficients: dict


@dataclass(frozen=True)
class MlpLayer:
    """One-hidden-layer additive mechanism for one node.

    ``x = w_out @ leaky_relu(w_in @ parents + b_in) + b_out + noise``; the
    columns of ``w_in`` follow ``parents`` order.
    """

    parents: tuple
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: float

    def __call__(self, pa: np.ndarray) -> np.ndarray:
        h = pa @ self.w_in.T + self.b_in
        h = np.where(h > 0, h, LEAKY_SLOPE * h)
        return h @ self.w_out + self.b_out


@dataclass(frozen=True)
class MlpMechanism:
    layers: dict  # node -> MlpLayer, for nodes with parents
    leaky_slope: float = LEAKY_SLOPE


@dataclass(frozen=True)
class ScmSpec:
    graph: Dag
    mechanism: object
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN

    def __post_init__(self):
        if isinstance(self.mechanism, LinearMechanism):
            if set(self.mechanism.coefficients) != set(self.graph.edges):
                raise GraphError("linear coefficients must cover exactly the graph's edges")
            if any(w == 0 for w in self.mechanism.coefficients.values()):
                raise ValueError("linear coefficients must be nonzero")
        elif isinstance(self.mechanism, MlpMechanism):
            for v in self.graph.nodes:
                pa = self.graph.parents(v)
                layer = self.mechanism.layers.get(v)
                if not pa:
                    if layer is not None:
                        raise GraphError(f"root node {v} must not have an MLP")
                    continue
                if layer is None or set(layer.parents) != set(pa):
                    raise GraphError(f"MLP of node {v} does not match its parents")
                if (layer.w_in <= 0).any() or (layer.w_out <= 0).any():
                    raise ValueError("MLP weights must be strictly positive")
        else:
            raise TypeError(f"unknown mechanism {type(self.mechanism).__name__}")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.mechanism, LinearMechanism)

    def weight_matrix(self) -> np.ndarray:
        """``B[child, parent]`` over node ids; linear specs only."""
        if not self.is_linear:
            raise TypeError("weight matrix is defined for linear specs only")
        n = max(self.graph.nodes) + 1
        B = np.zeros((n, n))
        for (a, b), w in self.mechanism.coefficients.items():
            B[b, a] = w
        return B

    def dumps(self, targets=None) -> str:
        coefs = self.mechanism.coefficients if self.is_linear else None
        return dumps_graph(self.graph, targets, coefs)


@dataclass
class EnvironmentPlan:
    """Per-environment noise standard deviations, ``scale[d, node]``."""

    n_envs: int
    scale: np.ndarray
    targets: frozenset
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        if self.scale.shape[0] != self.n_envs:
            raise ValueError("scale must have one row per environment")
        for v in range(self.scale.shape[1]):
            varies = np.ptp(self.scale[:, v]) > 0
            if varies != (v in self.targets):
                raise ValueError(f"noise scale of node {v} must vary iff it is a target")


@dataclass
class MultiEnvDataset:
    """Pooled samples over observed variables.

    ``X[r]`` is a sample from environment ``env[r]``; column ``c`` holds
    node ``observed_ids[c]``. ``noise`` keeps the simulated exogenous noises
    (all nodes, by node id) for evaluation; it is ``None`` for loaded data.
    """

    X: np.ndarray
    env: np.ndarray
    observed_ids: tuple
    noise: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.env = np.asarray(self.env, dtype=int)
        self.observed_ids = tuple(int(v) for v in self.observed_ids)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.observed_ids):
            raise ValueError("column count must equal the number of observed nodes")
        if len(self.env) != self.X.shape[0]:
            raise ValueError("env index must have one entry per sample")
        counts = np.bincount(self.env, minlength=self.n_envs)
        if (counts == 0).any():
            raise ValueError("every environment needs at least one sample")

    @property
    def n_envs(self) -> int:
        return int(self.env.max()) + 1 if len(self.env) else 0

    def environment(self, d: int) -> np.ndarray:
        return self.X[self.env == d]

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = ["env"] + [f"x_{v}" for v in self.observed_ids]
        buf.write(",".join(header) + "\n")
        for e, row in zip(self.env, self.X):
            buf.write(str(int(e)) + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MultiEnvDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        if header[0] != "env" or not all(h.startswith("x_") for h in header[1:]):
            raise ValueError("expected header 'env,x_<id>,...'")
        ids = [int(h[2:]) for h in header[1:]]
        arr = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        return cls(arr[:, 1:], arr[:, 0].astype(int), ids)


def random_dag(n: int, edge_prob: float, latent_count: int = 0, seed=None, max_tries: int = 200) -> Dag:
    """Random DAG: a random node order, each forward pair joined with
    probability ``edge_prob``. Latent nodes are repaired with extra edges to
    later observed nodes until each has at least two observed children."""
    if n < 2:
        raise ValueError("need at least two nodes")
    if not 0 <= latent_count <= n // 2:
        raise ValueError("latent_count must lie in [0, n // 2]")
    if not 0 <= edge_prob <= 1:
        raise ValueError("edge_prob must be a probability")
    rng = as_rng(seed)
    for _ in range(max_tries):
        order = rng.permutation(n)
        pos = np.empty(n, dtype=int)
        pos[order] = np.arange(n)
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < edge_prob:
                    edges.add((int(order[i]), int(order[j])))
        latents = set(int(v) for v in rng.choice(n, size=latent_count, replace=False)) if latent_count else set()
        ok = True
        for h in sorted(latents, key=lambda v: pos[v]):
            kids = [c for a, c in edges if a == h and c not in latents]
            later = [int(v) for v in order[pos[h] + 1:] if v not in latents and (h, int(v)) not in edges]
            need = 2 - len(kids)
            if need > len(later):
                ok = False
                break
            if need > 0:
                for c in rng.choice(later, size=need, replace=False):
                    edges.add((h, int(c)))
        if ok:
            kinds = {v: NodeKind.LATENT if v in latents else NodeKind.OBSERVED for v in range(n)}
            return Dag(kinds, edges)
    raise GraphError("could not give every latent node two observed children")


def target_count(n: int, setting: int) -> int:
    return (n + 1) // 2 if setting in (1, 2) else n // 2


def sample_targets(g: Dag, setting: int, seed=None) -> frozenset:
    """Settings 1-2: ``(n+1)//2`` targets among all nodes (no latents).
    Setting 3: ``n//2`` targets, 80% (rounded down) of the latents among them."""
    rng = as_rng(seed)
    n = len(g.nodes)
    latents = sorted(g.latent)
    observed = sorted(g.observed)
    if setting in (1, 2):
        if latents:
            raise ValueError(f"setting {setting} requires a causally sufficient graph")
        return frozenset(int(v) for v in rng.choice(observed, size=target_count(n, setting), replace=False))
    if setting != 3:
        raise ValueError(f"unknown setting {setting}")
    if len(latents) != n // 2:
        raise ValueError("setting 3 requires n // 2 latent nodes")
    n_lat = (4 * len(latents)) // 5
    n_obs = target_count(n, 3) - n_lat
    picked = list(rng.choice(latents, size=n_lat, replace=False)) if n_lat else []
    picked += list(rng.choice(observed, size=n_obs, replace=False)) if n_obs else []
    return frozenset(int(v) for v in picked)


def make_environment_plan(targets, n_nodes: int, n_envs: int, seed=None) -> EnvironmentPlan:
    """Targets draw variances from U[1, 5] in the first ceil(D/2)
    environments and U[5, 9] in the rest; other nodes draw one variance from
    U[1, 3] shared by all environments."""
    if n_envs < 2:
        raise ValueError("need at least two environments")
    rng = as_rng(seed)
    targets = frozenset(int(t) for t in targets)
    var = np.empty((n_envs, n_nodes))
    first = math.ceil(n_envs / 2)
    for v in range(n_nodes):
        if v in targets:
            var[:first, v] = rng.uniform(1, 5, size=first)
            var[first:, v] = rng.uniform(5, 9, size=n_envs - first)
        else:
            var[:, v] = rng.uniform(1, 3)
    warnings = []
    if n_envs < len(targets) + 1:
        warnings.append(f"{n_envs} environments cannot separate {len(targets)} changing noises")
    return EnvironmentPlan(n_envs, np.sqrt(var), targets, warnings)


def random_linear_spec(g: Dag, seed=None, low: float = 0.5, high: float = 1.0,
                       noise_family=NoiseFamily.GAUSSIAN) -> ScmSpec:
    rng = as_rng(seed)
    coefs = {e: float(rng.uniform(low, high)) for e in sorted(g.edges)}
    return ScmSpec(g, LinearMechanism(coefs), NoiseFamily(noise_family))


def hidden_width(fan_in: int) -> int:
    return 2 * fan_in + 2


def random_mlp_spec(g: Dag, seed=None, low: float = 0.5, high: float = 1.0,
                    noise_family=NoiseFamily.LAPLACE) -> ScmSpec:
    rng = as_rng(seed)
    layers = {}
    for v in g.topological_order():
        pa = tuple(sorted(g.parents(v)))
        if not pa:
            continue
        h = hidden_width(len(pa))
        layers[v] = MlpLayer(
            parents=pa,
            w_in=rng.uniform(low, high, size=(h, len(pa))),
            b_in=rng.uniform(low, high, size=h),
            w_out=rng.uniform(low, high, size=h),
            b_out=float(rng.uniform(low, high)),
        )
    return ScmSpec(g, MlpMechanism(layers), NoiseFamily(noise_family))


def _draw_noise(rng, family: NoiseFamily, size, std):
    if family is NoiseFamily.GAUSSIAN:
        return rng.standard_normal(size) * std
    return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size) * std


def generate(spec: ScmSpec, plan: EnvironmentPlan, samples_per_env: int, seed=None) -> MultiEnvDataset:
    """Ancestral sampling in every environment; latent columns are dropped."""
    g = spec.graph
    n = max(g.nodes) + 1
    if plan.scale.shape[1] != n:
        raise ValueError("plan and spec disagree on the number of nodes")
    rng = as_rng(seed)
    m = int(samples_per_env)
    noise = np.empty((plan.n_envs * m, n))
    for d in range(plan.n_envs):
        noise[d * m:(d + 1) * m] = _draw_noise(rng, spec.noise_family, (m, n), plan.scale[d])
    if spec.is_linear:
        A = np.eye(n) - spec.weight_matrix()
        X = np.linalg.solve(A, noise.T).T
    else:
        X = np.zeros_like(noise)
        for v in g.topological_order():
            X[:, v] = noise[:, v]
            layer = spec.mechanism.layers.get(v)
            if layer is not None:
                X[:, v] += layer(X[:, list(layer.parents)])
    observed = sorted(g.observed)
    env = np.repeat(np.arange(plan.n_envs), m)
    return MultiEnvDataset(X[:, observed], env, observed, noise)


@dataclass(frozen=True)
class MixingMatrix:
    """Total-effect matrix: ``values[r, c]`` is the effect of the noise of
    node ``col_ids[c]`` on observed node ``row_ids[r]``."""

    values: np.ndarray
    row_ids: tuple
    col_ids: tuple

    def columns(self, ids) -> np.ndarray:
        pos = {v: c for c, v in enumerate(self.col_ids)}
        return self.values[:, [pos[v] for v in ids]]


def analytic_mixing_matrix(spec: ScmSpec) -> MixingMatrix:
    """Rows of ``(I - B)^-1`` for observed nodes; columns ordered latent
    noises first, then observed noises, each in id order."""
    g = spec.graph
    B = spec.weight_matrix()
    A = np.eye(B.shape[0]) - B
    W = np.linalg.inv(A)
    assert np.all(np.isfinite(W))
    rows = sorted(g.observed)
    cols = sorted(g.latent) + sorted(g.observed)
    return MixingMatrix(W[np.ix_(rows, cols)], tuple(rows), tuple(cols))
