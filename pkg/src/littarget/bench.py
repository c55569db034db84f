"""Experiment harness: random instances, end-to-end runs and aggregate metrics."""

from __future__ import annotations

import csv
import io
import json
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from .ci import GraphOracle, PartialCorrelationTest
from .graph import build_augmented_graph, oracle_indicator_sets
from .matching import Mode, lit_fast, lit_match
from .recovery import (
    ContrastiveConfig,
    IcaOptions,
    contrastive_recover,
    fastica_recover,
    indicator_from_correlation,
    indicator_from_mixing,
)
from .simulate import (
    generate,
    make_environment_plan,
    random_dag,
    random_linear_spec,
    random_mlp_spec,
    sample_targets,
)

METRIC_FIELDS = ("precision", "recall", "f1")


@dataclass
class ExperimentConfig:
    setting: int = 1
    n_list: list = field(default_factory=lambda: [5, 6, 7, 8])
    D: int = 16
    trials: int = 20
    samples_per_env: int | None = None  # 5000 linear, 3000 nonlinear
    prune: float = 0.2
    corr: float = 0.2
    alpha: float = 0.15
    ci_backend: str = "pcorr"
    seed: int = 0
    algorithm: str = "fast"
    edge_factor: float = 1.5
    contrastive: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.setting not in (1, 2, 3):
            raise ValueError("setting must be 1, 2 or 3")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        for name in ("prune", "corr", "alpha"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.ci_backend not in ("oracle", "pcorr"):
            raise ValueError("ci_backend must be 'oracle' or 'pcorr'")
        if self.algorithm not in ("fast", "reference"):
            raise ValueError("algorithm must be 'fast' or 'reference'")
        self.n_list = [int(n) for n in self.n_list]
        if self.samples_per_env is None:
            self.samples_per_env = 3000 if self.setting == 2 else 5000

    @property
    def mode(self) -> Mode:
        return Mode.LATENT if self.setting == 3 else Mode.SUFFICIENT

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def compute_metrics(K, T_O) -> dict:
    """Precision, recall and F1 of ``K`` against the observed targets.

    Precision of an empty ``K`` is 1.0 and flagged with ``empty_k``.
    """
    K = frozenset(getattr(K, "members", K))
    T_O = frozenset(T_O)
    hit = len(K & T_O)
    empty = not K
    precision = 1.0 if empty else hit / len(K)
    recall = 1.0 if not T_O else hit / len(T_O)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1, "empty_k": empty}


def trial_seed(cfg: ExperimentConfig, n: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, cfg.setting, n, cfg.D, trial])


def make_instance(cfg: ExperimentConfig, n: int, rng):
    latent = n // 2 if cfg.setting == 3 else 0
    g = random_dag(n, cfg.edge_factor / (n - 1), latent, rng)
    T = sample_targets(g, cfg.setting, rng)
    return g, T


def run_trial(cfg: ExperimentConfig, n: int, trial: int) -> dict:
    """One end-to-end run. Errors are caught and recorded in ``error``."""
    rng = np.random.default_rng(trial_seed(cfg, n, trial))
    rec = {"setting": cfg.setting, "n": n, "D": cfg.D, "trial": trial}
    t0 = time.perf_counter()
    try:
        g, T = make_instance(cfg, n, rng)
        aug = build_augmented_graph(g, T)
        T_O = aug.observed_targets
        n_indicator = 0
        if cfg.ci_backend == "oracle":
            I = oracle_indicator_sets(aug)
            ci = GraphOracle(aug)
        else:
            if cfg.setting == 2:
                spec = random_mlp_spec(g, rng)
            else:
                spec = random_linear_spec(g, rng)
            plan = make_environment_plan(T, len(g.nodes), cfg.D, rng)
            data = generate(spec, plan, cfg.samples_per_env, rng)
            k = len(T)
            if cfg.setting == 2:
                ccfg = ContrastiveConfig(**cfg.contrastive)
                ica_seed = int(rng.integers(2 ** 31))
                noises = contrastive_recover(data, k, ccfg, seed=ica_seed)
                I, n_indicator = indicator_from_correlation(data, noises, cfg.corr)
            else:
                noises, mixing = fastica_recover(data, k, IcaOptions(seed=rng))
                I = indicator_from_mixing(mixing, cfg.prune)
            ci = PartialCorrelationTest(data, noises, alpha=cfg.alpha)
        match = lit_fast if cfg.algorithm == "fast" else lit_match
        K, stats = match(I, ci, cfg.mode)
        stats.ci_tests_indicator = n_indicator
        rec.update(compute_metrics(K, T_O))
        rec.update(
            K=sorted(K.members),
            T=sorted(T),
            T_O=sorted(T_O),
            ci_tests_phase3=stats.ci_tests_phase3,
            ci_tests_indicator=stats.ci_tests_indicator,
            ci_tests_total=stats.total,
            backend_calls=ci.calls,
            error="",
        )
    except Exception as exc:  # recorded; the sweep continues
        rec.update(error=f"{type(exc).__name__}: {exc}", traceback=traceback.format_exc())
    rec["seconds"] = time.perf_counter() - t0
    return rec


def aggregate(records: list) -> list:
    """Per (setting, n, D): mean and 25/75% percentiles of each metric."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r["setting"], r["n"], r["D"]), []).append(r)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        ok = [r for r in recs if not r["error"]]
        row = {"setting": key[0], "n": key[1], "D": key[2], "trials": len(recs), "failed": len(recs) - len(ok)}
        for m in METRIC_FIELDS:
            vals = np.array([r[m] for r in ok], dtype=float)
            if len(vals):
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_p25"] = float(np.percentile(vals, 25))
                row[f"{m}_p75"] = float(np.percentile(vals, 75))
            else:
                row[f"{m}_mean"] = row[f"{m}_p25"] = row[f"{m}_p75"] = float("nan")
        for c in ("ci_tests_phase3", "ci_tests_indicator", "ci_tests_total"):
            row[f"{c}_mean"] = float(np.mean([r[c] for r in ok])) if ok else float("nan")
        row["empty_k"] = sum(bool(r.get("empty_k")) for r in ok)
        row["seconds_mean"] = float(np.mean([r["seconds"] for r in recs]))
        rows.append(row)
    return rows


@dataclass
class MetricsReport:
    config: ExperimentConfig
    records: list
    summary: list

    # timing is excluded so that reruns with the same seed match byte for byte
    CSV_FIELDS = ("setting", "n", "D", "trials", "failed",
                  "precision_mean", "precision_p25", "precision_p75",
                  "recall_mean", "recall_p25", "recall_p75",
                  "f1_mean", "f1_p25", "f1_p75",
                  "ci_tests_phase3_mean", "ci_tests_indicator_mean", "ci_tests_total_mean", "empty_k")
    TRIAL_FIELDS = ("setting", "n", "D", "trial", "K", "T_O", "precision", "recall", "f1",
                    "empty_k", "ci_tests_phase3", "ci_tests_indicator", "ci_tests_total", "error")

    def summary_csv(self) -> str:
        return _to_csv(self.summary, self.CSV_FIELDS)

    def trials_csv(self) -> str:
        return _to_csv(self.records, self.TRIAL_FIELDS)

    def to_json(self) -> str:
        recs = [{k: v for k, v in r.items() if k != "traceback"} for r in self.records]
        return json.dumps({"config": asdict(self.config), "summary": self.summary, "trials": recs},
                          indent=2, sort_keys=True, default=_json_default)

    def table(self, reference: dict | None = None) -> str:
        cols = ["n", "D", "precision", "recall", "f1", "ci_p3", "ci_total", "failed"]
        if reference:
            cols.append("ref_ci_tests")
        rows = []
        for s in self.summary:
            row = [str(s["n"]), str(s["D"])]
            row += [f"{s[f'{m}_mean']:.3f} [{s[f'{m}_p25']:.2f},{s[f'{m}_p75']:.2f}]" for m in METRIC_FIELDS]
            row += [f"{s['ci_tests_phase3_mean']:.2f}", f"{s['ci_tests_total_mean']:.2f}", str(s["failed"])]
            if reference:
                ref = reference.get((s["setting"], s["D"], s["n"]))
                row.append("-" if ref is None else f"{ref:.2f}")
            rows.append(row)
        widths = [max(len(c), *(len(r[i]) for r in rows)) if rows else len(c) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12))
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def _to_csv(rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(type(o).__name__)


def run_sweep(cfg: ExperimentConfig, progress=None) -> MetricsReport:
    """Run every (n, trial) cell sequentially; aggregation is ordered by trial."""
    records = []
    for n in cfg.n_list:
        for t in range(cfg.trials):
            rec = run_trial(cfg, n, t)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return MetricsReport(cfg, records, aggregate(records))


def published_ci_tests() -> dict:
    """Published average CI-test counts keyed by ``(setting, D, n)``."""
    text = resources.files("littarget").joinpath("data/published_ci_tests.csv").read_text()
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))
    out = {}
    for row in csv.DictReader(io.StringIO(body)):
        out[(int(row["setting"]), int(row["D"]), int(row["n"]))] = float(row["ci_tests"])
    return out
