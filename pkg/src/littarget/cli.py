"""Command-line interface: ``littarget {simulate,recover,match,oracle,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentConfig, make_instance, published_ci_tests, run_sweep
from .ci import GraphOracle, PartialCorrelationTest
from .graph import (
    build_augmented_graph,
    build_auxiliary_graph,
    dumps_graph,
    loads_graph,
    oracle_indicator_sets,
    theoretical_candidate_set,
)
from .matching import Mode, lit_fast, lit_match
from .recovery import (
    ContrastiveConfig,
    IcaOptions,
    MixingEstimate,
    RecoveredNoises,
    contrastive_recover,
    fastica_recover,
    indicator_from_correlation,
    indicator_from_mixing,
)
from .sets import IndicatorSets
from .simulate import (
    MultiEnvDataset,
    generate,
    make_environment_plan,
    random_linear_spec,
    random_mlp_spec,
)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def indicators_to_json(I: IndicatorSets, n_tests: int = 0) -> str:
    return json.dumps({"k": I.k, "sets": {str(v): sorted(I[v]) for v in I.variables},
                       "ci_tests_indicator": n_tests}, indent=2, sort_keys=True)


def indicators_from_json(text: str):
    raw = json.loads(text)
    I = IndicatorSets({int(v): s for v, s in raw["sets"].items()}, raw["k"])
    return I, int(raw.get("ci_tests_indicator", 0))


def match_report(K, stats, I: IndicatorSets) -> dict:
    return {
        "K": sorted(K.members),
        "verdicts": {str(v): K.verdicts[v] for v in sorted(K.verdicts)},
        "likely_latent_only": sorted(K.latent_only),
        "ci_tests_phase3": stats.ci_tests_phase3,
        "ci_tests_indicator": stats.ci_tests_indicator,
        "ci_tests_total": stats.total,
        "indicator_sets": {str(v): sorted(I[v]) for v in I.variables},
    }


def match_text(rep: dict) -> str:
    lines = ["K = {" + ", ".join(f"X{v}" for v in rep["K"]) + "}"]
    lines += [f"  X{v}: I={rep['indicator_sets'][v]} verdict={rep['verdicts'].get(v, '-')}"
              for v in rep["indicator_sets"]]
    if rep["likely_latent_only"]:
        lines.append(f"components in no indicator set: {rep['likely_latent_only']}")
    lines.append(f"CI tests: matching={rep['ci_tests_phase3']} indicator={rep['ci_tests_indicator']}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args):
    cfg = ExperimentConfig(setting=args.setting, n_list=[args.n], D=args.D, trials=1, seed=args.seed,
                           samples_per_env=args.samples)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, args.setting, args.n, args.D]))
    g, T = make_instance(cfg, args.n, rng)
    spec = random_mlp_spec(g, rng) if args.setting == 2 else random_linear_spec(g, rng)
    plan = make_environment_plan(T, len(g.nodes), args.D, rng)
    for w in plan.warnings:
        logging.warning(w)
    data = generate(spec, plan, cfg.samples_per_env, rng)
    out = Path(args.out)
    _write(out / "data.csv", data.to_csv())
    _write(out / "graph.txt", spec.dumps(T))
    truth = MultiEnvDataset(data.noise[:, sorted(T)], data.env, sorted(T))
    _write(out / "true_noises.csv", truth.to_csv())
    print(f"wrote {out}/data.csv ({data.X.shape[0]} rows, {data.n_envs} environments), graph.txt, true_noises.csv")
    return 0


def cmd_recover(args):
    data = MultiEnvDataset.from_csv(Path(args.data).read_text())
    out = Path(args.out)
    if args.method == "ica":
        noises, mixing = fastica_recover(data, args.k, IcaOptions(seed=args.seed))
        _write(out / "mixing.txt", mixing.dumps())
        I, n_tests = indicator_from_mixing(mixing, args.prune), 0
    else:
        noises = contrastive_recover(data, args.k, ContrastiveConfig(), seed=args.seed)
        I, n_tests = indicator_from_correlation(data, noises, args.corr_thresh)
    _write(out / "noises.csv", noises.to_csv())
    _write(out / "indicators.json", indicators_to_json(I, n_tests))
    print(f"wrote {out}/noises.csv, indicators.json" + (", mixing.txt" if args.method == "ica" else ""))
    return 0


def cmd_match(args):
    mode = Mode(args.mode)
    if args.ci == "oracle":
        if not args.graph:
            raise SystemExit("--ci oracle needs --graph with a targets line")
        g, T, _ = loads_graph(Path(args.graph).read_text())
        if T is None:
            raise SystemExit("graph file has no targets line")
        aug = build_augmented_graph(g, T)
        I, n_tests = oracle_indicator_sets(aug), 0
        ci = GraphOracle(aug)
    else:
        if not (args.data and args.noises):
            raise SystemExit("--ci pcorr needs --data and --noises")
        data = MultiEnvDataset.from_csv(Path(args.data).read_text())
        noises = RecoveredNoises.from_csv(Path(args.noises).read_text())
        if args.indicators:
            I, n_tests = indicators_from_json(Path(args.indicators).read_text())
        elif args.mixing:
            I, n_tests = indicator_from_mixing(MixingEstimate.loads(Path(args.mixing).read_text()), args.prune), 0
        else:
            I, n_tests = indicator_from_correlation(data, noises, args.corr_thresh)
        ci = PartialCorrelationTest(data, noises, alpha=args.alpha)
    K, stats = (lit_fast if args.algorithm == "fast" else lit_match)(I, ci, mode)
    stats.ci_tests_indicator = n_tests
    rep = match_report(K, stats, I)
    sys.stdout.write(match_text(rep))
    if args.out:
        _write(Path(args.out), json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_oracle(args):
    g, T, _ = loads_graph(Path(args.graph).read_text())
    if args.targets is not None:
        T = [int(t) for t in args.targets.split(",") if t]
    if T is None:
        raise SystemExit("no targets given (graph file or --targets)")
    aug = build_augmented_graph(g, T)
    aux = build_auxiliary_graph(aug)
    K = theoretical_candidate_set(aux)
    I = oracle_indicator_sets(aug)
    noise_names = {node: f"N{t}" for t, node in aug.noise_of.items()}
    order = sorted(aug.targets)
    rep = {
        "targets": sorted(aug.targets),
        "observed_targets": sorted(aug.observed_targets),
        "noise_nodes": {noise_names[node]: node for node in aug.noise_nodes},
        "indicator_sets": {str(v): [order[j] for j in sorted(I[v])] for v in I.variables},
        "aux_added": sorted(aux.added_edges),
        "aux_removed": sorted(aux.removed_edges),
        "K": sorted(K.members),
    }
    print("augmented graph:")
    sys.stdout.write(dumps_graph(aug))
    print("auxiliary graph: added " + str([(noise_names[a], b) for a, b in rep["aux_added"]])
          + " removed " + str([(noise_names[a], b) for a, b in rep["aux_removed"]]))
    for v, s in rep["indicator_sets"].items():
        print(f"  I_{v} = {{{', '.join(f'N{t}' for t in s)}}}")
    print("K = {" + ", ".join(f"X{v}" for v in rep["K"]) + "}")
    if args.out:
        _write(Path(args.out), json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_bench(args):
    cfg_raw = json.loads(Path(args.config).read_text()) if args.config else {}
    for flag, key in (("prune", "prune"), ("corr_thresh", "corr"), ("alpha", "alpha"), ("ci", "ci_backend"),
                      ("seed", "seed"), ("trials", "trials"), ("D", "D")):
        val = getattr(args, flag)
        if val is not None:
            cfg_raw[key] = val
    if args.n:
        cfg_raw["n_list"] = [int(x) for x in args.n.split(",")]
    if args.setting is not None:
        cfg_raw["setting"] = args.setting
    cfg = ExperimentConfig.from_json(json.dumps(cfg_raw))

    def progress(rec):
        if args.verbose:
            status = rec["error"] or f"f1={rec['f1']:.3f}"
            print(f"  n={rec['n']} trial={rec['trial']} {status}", file=sys.stderr)

    rep = run_sweep(cfg, progress)
    table = rep.table(published_ci_tests())
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        _write(out / "summary.csv", rep.summary_csv())
        _write(out / "trials.csv", rep.trials_csv())
        _write(out / "report.json", rep.to_json() + "\n")
        _write(out / "table.txt", table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="littarget", description="Locate soft-intervention targets.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a random SCM and multi-environment data")
    s.add_argument("--setting", type=int, choices=(1, 2, 3), default=1)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--D", type=int, default=16)
    s.add_argument("--samples", type=int, default=None, help="samples per environment")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("recover", help="recover changing noises and indicator sets")
    r.add_argument("--data", required=True)
    r.add_argument("--k", type=int, required=True, help="number of changing noises")
    r.add_argument("--method", choices=("ica", "contrastive"), default="ica")
    r.add_argument("--prune", type=float, default=0.2)
    r.add_argument("--corr-thresh", type=float, default=0.2)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_recover)

    m = sub.add_parser("match", help="run the matching phase")
    m.add_argument("--ci", choices=("oracle", "pcorr"), default="pcorr")
    m.add_argument("--mode", choices=[x.value for x in Mode], default="sufficient")
    m.add_argument("--algorithm", choices=("fast", "reference"), default="fast")
    m.add_argument("--graph", help="graph file (oracle backend)")
    m.add_argument("--data")
    m.add_argument("--noises")
    m.add_argument("--indicators")
    m.add_argument("--mixing")
    m.add_argument("--prune", type=float, default=0.2)
    m.add_argument("--corr-thresh", type=float, default=0.2)
    m.add_argument("--alpha", type=float, default=0.15)
    m.add_argument("--out", help="JSON report path")
    m.set_defaults(func=cmd_match)

    o = sub.add_parser("oracle", help="augmented graph, auxiliary graph and theoretical K")
    o.add_argument("--graph", required=True)
    o.add_argument("--targets", help="comma-separated target ids (overrides the file)")
    o.add_argument("--out", help="JSON report path")
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="run an experiment sweep")
    b.add_argument("--config", help="JSON file with ExperimentConfig fields")
    b.add_argument("--setting", type=int, choices=(1, 2, 3))
    b.add_argument("--n", help="comma-separated n values")
    b.add_argument("--D", type=int)
    b.add_argument("--trials", type=int)
    b.add_argument("--prune", type=float)
    b.add_argument("--corr-thresh", type=float)
    b.add_argument("--alpha", type=float)
    b.add_argument("--ci", choices=("oracle", "pcorr"))
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="output directory")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
