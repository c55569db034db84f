"""Recovery phase: estimate the changing exogenous noises and indicator sets.

Linear data go through FastICA on the pooled sample. Pooling turns each
changing noise into a scale mixture, which is non-Gaussian even when every
environment is Gaussian, while noises with a fixed distribution stay
Gaussian. Nonlinear data first go through a contrastive feature extractor
trained to tell real ``(X, U)`` pairs from pairs with a shuffled environment
label, and FastICA is then applied to the learned features.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment

from .sets import IndicatorSets
from .simulate import MultiEnvDataset, as_rng

log = logging.getLogger(__name__)


class RecoveryError(RuntimeError):
    pass


@dataclass
class RecoveredNoises:
    """Recovered components, one column each, row-aligned with a dataset."""

    samples: np.ndarray
    env: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.env = np.asarray(self.env, dtype=int)
        if self.samples.ndim != 2 or self.samples.shape[0] != len(self.env):
            raise ValueError("samples must be (n_samples, k) and aligned with env")

    @property
    def k(self) -> int:
        return self.samples.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["env"] + [f"nt_{j + 1}" for j in range(self.k)]) + "\n")
        for e, row in zip(self.env, self.samples):
            buf.write(str(int(e)) + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RecoveredNoises":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        if header[0] != "env" or not all(h.startswith("nt_") for h in header[1:]):
            raise ValueError("expected header 'env,nt_1,...'")
        arr = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
        return cls(arr[:, 1:], arr[:, 0].astype(int))


@dataclass
class MixingEstimate:
    """Loadings ``values[r, j]`` of component ``j`` on observed node ``row_ids[r]``."""

    values: np.ndarray
    row_ids: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.row_ids = tuple(int(v) for v in self.row_ids)
        if self.values.shape[0] != len(self.row_ids):
            raise ValueError("one row per observed node required")

    def dumps(self) -> str:
        lines = ["# " + " ".join(f"x_{v}" for v in self.row_ids)]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.values]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MixingEstimate":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError("missing '# x_<id> ...' header")
        ids = [int(tok[2:]) for tok in lines[0][1:].split()]
        rows = [[float(x) for x in ln.split()] for ln in lines[1:] if ln.strip()]
        return cls(np.array(rows).reshape(len(ids), -1), ids)


@dataclass(frozen=True)
class IcaOptions:
    n_restarts: int = 3
    max_iter: int = 500
    tol: float = 1e-8
    seed: object = 0


def whiten(X: np.ndarray, rank_tol: float = 1e-10):
    """Center and whiten the columns of ``X``. Returns ``(Z, K, mean)`` with
    ``Z = (X - mean) @ K.T`` having identity covariance."""
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / len(Xc)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= rank_tol * max(vals.max(), 1e-300):
        raise RecoveryError("covariance is rank deficient; cannot whiten")
    K = (vecs / np.sqrt(vals)).T
    return Xc @ K.T, K, mean


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, 1e-300, None)
    return (u / np.sqrt(s)) @ u.T @ W


def _logcosh_negentropy(y: np.ndarray) -> np.ndarray:
    # E[G(y)] - E[G(nu)] for G = log cosh and standard normal nu
    g_gauss = 0.3745672075
    g = np.logaddexp(y, -y) - np.log(2.0)
    return (g.mean(axis=0) - g_gauss) ** 2


def fastica_unmixing(Z: np.ndarray, k: int, opts: IcaOptions = IcaOptions()) -> np.ndarray:
    """Symmetric fixed-point FastICA with the log-cosh contrast on whitened ``Z``.

    Returns a ``(k, p)`` matrix with orthonormal rows. Each restart starts
    from a random orthonormal matrix; the converged run with the largest
    total negentropy is kept.
    """
    n, p = Z.shape
    if not 1 <= k <= p:
        raise ValueError(f"k must lie in [1, {p}]")
    rng = as_rng(opts.seed)
    best, best_score = None, -np.inf
    for _ in range(opts.n_restarts):
        W = _sym_decorrelate(rng.standard_normal((k, p)))
        converged = False
        for _ in range(opts.max_iter):
            Y = Z @ W.T
            gy = np.tanh(Y)
            g_prime = 1.0 - gy ** 2
            W_new = _sym_decorrelate(gy.T @ Z / n - g_prime.mean(axis=0)[:, None] * W)
            lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
            W = W_new
            if lim < opts.tol:
                converged = True
                break
        if not converged:
            log.info("FastICA restart did not reach tol %.1e", opts.tol)
            continue
        score = float(_logcosh_negentropy(Z @ W.T).sum())
        if score > best_score:
            best, best_score = W, score
    if best is None:
        raise RecoveryError(f"FastICA did not converge in {opts.n_restarts} restarts")
    return best


def _fix_signs(S: np.ndarray, A: np.ndarray):
    idx = np.argmax(np.abs(A), axis=0)
    signs = np.sign(A[idx, np.arange(A.shape[1])])
    signs[signs == 0] = 1.0
    return S * signs, A * signs


def fastica_recover(data: MultiEnvDataset, k: int, opts: IcaOptions = IcaOptions()):
    """Recover ``k`` components from the pooled observed data.

    Components have unit variance and are uncorrelated on the pooled
    sample; each column of the mixing estimate has a positive
    largest-magnitude loading.

    Returns
    -------
    (RecoveredNoises, MixingEstimate)
    """
    X = data.X
    if k > X.shape[1]:
        raise ValueError("cannot recover more components than observed variables")
    Z, K, mean = whiten(X)
    W = fastica_unmixing(Z, k, opts)
    S = Z @ W.T
    # loadings are Cov(X, S); with Z white this is K^-1 @ W.T
    A = np.linalg.solve(K, W.T)
    S, A = _fix_signs(S, A)
    return RecoveredNoises(S, data.env.copy()), MixingEstimate(A, data.observed_ids)


def mixing_from_components(data: MultiEnvDataset, noises: RecoveredNoises) -> MixingEstimate:
    """Least-squares loadings of the standardized components on the observed
    columns; invariant to rescaling any component."""
    S = noises.samples - noises.samples.mean(axis=0)
    S = S / S.std(axis=0)
    Xc = data.X - data.X.mean(axis=0)
    coef, *_ = np.linalg.lstsq(S, Xc, rcond=None)
    return MixingEstimate(coef.T, data.observed_ids)


def indicator_from_mixing(m: MixingEstimate, prune: float = 0.2) -> IndicatorSets:
    """``I_i = {j : |m[i, j]| >= prune}``."""
    sets = {v: set(np.flatnonzero(np.abs(m.values[r]) >= prune).tolist()) for r, v in enumerate(m.row_ids)}
    return IndicatorSets(sets, k=m.values.shape[1])


def env_correlations(data: MultiEnvDataset, noises: RecoveredNoises) -> np.ndarray:
    """Per-environment Pearson correlations, shape ``(D, n_observed, k)``."""
    if noises.samples.shape[0] != data.X.shape[0] or not np.array_equal(noises.env, data.env):
        raise ValueError("noises are not aligned with the dataset")
    out = []
    for d in range(data.n_envs):
        sel = data.env == d
        X = data.X[sel] - data.X[sel].mean(axis=0)
        N = noises.samples[sel] - noises.samples[sel].mean(axis=0)
        sx, sn = np.sqrt((X ** 2).sum(axis=0)), np.sqrt((N ** 2).sum(axis=0))
        if (sx == 0).any() or (sn == 0).any():
            raise RecoveryError(f"zero-variance column in environment {d}")
        out.append((X.T @ N) / np.outer(sx, sn))
    return np.array(out)


def indicator_from_correlation(data: MultiEnvDataset, noises: RecoveredNoises, thresh: float = 0.2):
    """``I_i = {j : |sum_d corr_d(X_i, N_j)| >= thresh}``.

    Returns ``(IndicatorSets, n_tests)`` where ``n_tests`` counts one
    dependence check per (variable, component) pair.
    """
    rho = env_correlations(data, noises).sum(axis=0)
    sets = {v: set(np.flatnonzero(np.abs(rho[r]) >= thresh).tolist()) for r, v in enumerate(data.observed_ids)}
    return IndicatorSets(sets, k=noises.k), int(rho.size)


def estimate_k(data: MultiEnvDataset, alpha: float = 0.01, opts: IcaOptions = IcaOptions()) -> int:
    """Count whitened ICA directions whose excess kurtosis is significant.

    Uses the normal-theory standard error ``sqrt(24 / n)`` with a Bonferroni
    correction over the observed dimension.
    """
    Z, _, _ = whiten(data.X)
    p = Z.shape[1]
    W = fastica_unmixing(Z, p, opts)
    kurt = stats.kurtosis(Z @ W.T, axis=0)
    se = np.sqrt(24.0 / len(Z))
    crit = stats.norm.isf(alpha / (2 * p))
    return int((np.abs(kurt) / se > crit).sum())


def match_components(recovered: np.ndarray, truth: np.ndarray, method: str = "pearson"):
    """Evaluation helper: Hungarian assignment on the absolute correlation matrix.

    Returns ``(assignment, scores)`` where ``assignment[i]`` is the recovered
    column matched to true column ``i`` and ``scores[i]`` is the matched
    absolute correlation.
    """
    R, Tt = np.asarray(recovered, float), np.asarray(truth, float)
    if method == "spearman":
        R = np.apply_along_axis(stats.rankdata, 0, R)
        Tt = np.apply_along_axis(stats.rankdata, 0, Tt)
    elif method != "pearson":
        raise ValueError(f"unknown method {method}")
    R = (R - R.mean(0)) / R.std(0)
    Tt = (Tt - Tt.mean(0)) / Tt.std(0)
    C = np.abs(Tt.T @ R) / len(R)
    rows, cols = linear_sum_assignment(-C)
    assignment = np.full(Tt.shape[1], -1)
    assignment[rows] = cols
    scores = np.zeros(Tt.shape[1])
    scores[rows] = C[rows, cols]
    return assignment, scores


# -- contrastive feature learning -------------------------------------------

@dataclass(frozen=True)
class ContrastiveConfig:
    """Feature extractor and training settings for nonlinear recovery."""

    hidden: int = 64
    n_layers: int = 4
    feature_dim: int | None = None  # defaults to k
    optimizer: str = "sgd"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    leaky_slope: float = 0.2


def contrastive_features(data: MultiEnvDataset, k: int, cfg: ContrastiveConfig = ContrastiveConfig(),
                         seed=0) -> np.ndarray:
    """Train ``r(X, U) = h(X)^T v(U) + a(X) + b(U)`` to separate real pairs
    from pairs with a permuted environment label; return ``h(X)``."""
    import torch
    from torch import nn

    D = data.n_envs
    if k > min(D - 1, data.X.shape[1]):
        raise ValueError(f"k={k} exceeds min(D - 1, n_observed) = {min(D - 1, data.X.shape[1])}")
    width = cfg.feature_dim or k
    if k > width:
        raise ValueError("k exceeds the feature width")
    seed_int = int(np.random.SeedSequence(seed if isinstance(seed, int) else 0).generate_state(1)[0])
    torch.manual_seed(seed_int)
    gen = torch.Generator().manual_seed(seed_int)

    X = torch.as_tensor((data.X - data.X.mean(0)) / data.X.std(0), dtype=torch.float32)
    U = torch.as_tensor(data.env, dtype=torch.long)

    layers, d_in = [], X.shape[1]
    for _ in range(cfg.n_layers - 1):
        layers += [nn.Linear(d_in, cfg.hidden), nn.LeakyReLU(cfg.leaky_slope)]
        d_in = cfg.hidden
    layers.append(nn.Linear(d_in, width))
    h = nn.Sequential(*layers)
    a = nn.Linear(X.shape[1], 1)
    v = nn.Embedding(D, width)
    b = nn.Embedding(D, 1)
    params = [*h.parameters(), *a.parameters(), *v.parameters(), *b.parameters()]
    if cfg.optimizer == "sgd":
        opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum)
    elif cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.lr)
    else:
        raise ValueError(f"unknown optimizer {cfg.optimizer}")
    loss_fn = nn.BCEWithLogitsLoss()

    def logits(x, u):
        return (h(x) * v(u)).sum(1) + a(x).squeeze(1) + b(u).squeeze(1)

    best, stale = np.inf, 0
    n = len(X)
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        shuffled = U[torch.randperm(n, generator=gen)]
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x, u, u_neg = X[idx], U[idx], shuffled[idx]
            out = torch.cat([logits(x, u), logits(x, u_neg)])
            target = torch.cat([torch.ones(len(idx)), torch.zeros(len(idx))])
            loss = loss_fn(out, target)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        total /= n
        if not np.isfinite(total):
            raise RecoveryError("contrastive training diverged")
        if total < best - 1e-4:
            best, stale = total, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("contrastive training stopped at epoch %d", epoch)
                break
    with torch.no_grad():
        return h(X).numpy().astype(float)


def contrastive_recover(data: MultiEnvDataset, k: int, cfg: ContrastiveConfig = ContrastiveConfig(),
                        seed=0, opts: IcaOptions | None = None) -> RecoveredNoises:
    """Contrastive feature learning followed by FastICA on the features."""
    F = contrastive_features(data, k, cfg, seed)
    feats = MultiEnvDataset(F, data.env, range(F.shape[1]))
    noises, _ = fastica_recover(feats, k, opts or IcaOptions(seed=seed))
    return noises
