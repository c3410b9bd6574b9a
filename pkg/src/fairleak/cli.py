"""Command-line entry point: ``fairleak <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration error (bad flag or value), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import traceback
from contextlib import nullcontext
from pathlib import Path

from . import io as fio
from .attack import METRICS, run_attack, sample_pairs
from .gcn import Propagation, TrainConfig, train
from .graph import SbmParams, jaccard_similarity, save_dataset
from .influence import (diagnostics_json, influence_all, pearson, read_influences,
                        write_influences)
from .perturb import dp_perturb, pp_perturb, write_sidecar
from .pipeline import (METHODS, AttackConfig, ExperimentConfig, Runner, prepare_graph,
                       subseed)
from .qclp import QclpError, QclpProblem, solve, write_weights
from .studies import risk_model_check, synth_tradeoff_study

log = logging.getLogger("fairleak")

DP_FLAGS = {"edgerand": "edge_rand", "lapgraph": "lap_graph"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sbm(text: str) -> SbmParams:
    parts = text.split(",")
    if len(parts) not in (3, 4):
        raise argparse.ArgumentTypeError("expected n,p,q or n,p,q,c")
    try:
        n, p, q = int(parts[0]), float(parts[1]), float(parts[2])
        c = int(parts[3]) if len(parts) == 4 else 2
        return SbmParams(n, p, q, c)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _common(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", metavar="DIR", help="dataset directory")
    src.add_argument("--sbm", type=_sbm, metavar="n,p,q[,c]", help="synthetic SBM graph")
    p.add_argument("--method", choices=METHODS, default="vanilla")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, metavar="N",
                   help="run seeds seed..seed+N-1")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--lambda-fair", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--s", type=float, default=0.2)
    p.add_argument("--fine-tune-lr", type=float, default=None)
    p.add_argument("--eps", type=float, default=1.0)
    p.add_argument("--dp", choices=sorted(DP_FLAGS), default=None)
    p.add_argument("--max-edges", type=int, default=None)
    p.add_argument("--damping", type=float, default=0.01)
    p.add_argument("--out", metavar="DIR", default="out")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fairleak", description="GCN fairness / edge-privacy laboratory")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="train with a method and evaluate")
    _common(p)
    p = sub.add_parser("attack", help="link-stealing attack on saved predictions")
    _common(p)
    p.add_argument("--predictions", metavar="CSV",
                   help="predictions.csv to attack (default: train vanilla)")
    p = sub.add_parser("influence", help="per-node influences on utility, bias and risk")
    _common(p)
    p = sub.add_parser("reweight", help="solve the reweighting program")
    _common(p)
    p.add_argument("--influences", metavar="CSV", required=True)
    p = sub.add_parser("perturb", help="write a perturbed copy of a dataset")
    _common(p)
    p.add_argument("--mechanism", choices=["pp", "edgerand", "lapgraph"], default="pp")
    p.add_argument("--predictions", metavar="CSV",
                   help="predictions guiding pp (default: train vanilla)")
    p = sub.add_parser("synth", help="trade-off study on an SBM")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--c", type=int, default=2)
    p = sub.add_parser("riskmodel", help="closed-form vs empirical edge sensitivity")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--sigma", type=float, nargs="+", default=[0.0, 0.5, 0.1, 0.02])
    p.add_argument("--pairs", type=int, default=200)
    p = sub.add_parser("report", help="validate and summarize report.json files")
    p.add_argument("paths", nargs="+", metavar="REPORT_OR_DIR")
    return ap


# ---------------------------------------------------------------- helpers

def config_from_args(args) -> ExperimentConfig:
    if args.dataset is None and args.sbm is None:
        raise ConfigError("one of --dataset or --sbm is required")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    try:
        tc = TrainConfig(hidden=args.hidden, epochs=args.epochs, learning_rate=args.lr,
                         weight_decay=args.weight_decay)
        return ExperimentConfig(
            method=args.method, dataset=args.dataset, sbm=args.sbm, train=tc,
            lambda_fair=args.lambda_fair, s=args.s, fine_tune_lr=args.fine_tune_lr,
            alpha=args.alpha, beta=args.beta, gamma=args.gamma, eps=args.eps,
            dp_mechanism=DP_FLAGS[args.dp] if args.dp else "auto",
            attack=AttackConfig(max_edges=args.max_edges),
            seeds=list(range(args.seed, args.seed + args.seeds)), damping=args.damping)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sbm_from_flags(args) -> SbmParams:
    if args.sbm is not None:
        return args.sbm
    if None in (args.n, args.p, args.q):
        raise ConfigError("give --sbm n,p,q[,c] or all of --n --p --q")
    try:
        return SbmParams(args.n, args.p, args.q, getattr(args, "c", 2))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_seed_artifacts(run, directory: Path, g):
    directory.mkdir(parents=True, exist_ok=True)
    fio.save_model(run.result.model, directory / "model.bin")
    fio.write_history(directory / "history.csv", run.history)
    fio.write_predictions(directory / "predictions.csv", run.result.predictions)
    if run.qclp is not None:
        write_weights(directory / "weights.csv", g.train_mask, run.qclp.weights)
    if run.influences:
        write_influences(directory / "influences.csv", run.influences)
    if run.perturbation is not None:
        write_sidecar(run.perturbation, directory / "perturbation.json")


def _vanilla(cfg, g, seed):
    return train(g, dataclasses.replace(cfg.train, seed=seed, lambda_fair=0.0))


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = config_from_args(args)
    g = prepare_graph(cfg, cfg.seeds[0])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = Runner(g, cfg).run()
    single = len(cfg.seeds) == 1
    for run in report.runs:
        _write_seed_artifacts(run, out if single else out / f"seed_{run.seed}", g)
    obj = fio.write_json(out / "report.json", report.to_json(), validate=True)
    _print_summary(obj)
    return 0


def cmd_attack(args) -> int:
    cfg = config_from_args(args)
    g = prepare_graph(cfg, cfg.seeds[0])
    if args.predictions:
        y = fio.read_predictions(args.predictions)
        if y.shape[0] != g.num_nodes:
            raise ConfigError("predictions do not match the graph size")
    else:
        y = _vanilla(cfg, g, cfg.seeds[0]).predictions
    sample = sample_pairs(g, subseed(cfg.seeds[0], "pairs"), args.max_edges)
    rep = run_attack(sample, y, METRICS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_json(out / "attack.json", {**rep.to_json(), "exhausted": sample.exhausted})
    print(f"mean AUC {rep.mean_auc:.4f}  f_risk {rep.f_risk:.4g}")
    return 0


def cmd_influence(args) -> int:
    cfg = config_from_args(args)
    g = prepare_graph(cfg, cfg.seeds[0])
    seed = cfg.seeds[0]
    res = _vanilla(cfg, g, seed)
    prop = Propagation.of(g)
    sim = jaccard_similarity(g)
    sample = sample_pairs(g, subseed(seed, "pairs"), args.max_edges)
    kw = dict(damping=cfg.damping, tol=cfg.cg_tol)
    vecs = {"utility": influence_all(res.model, prop, g, "utility", **kw),
            "bias": influence_all(res.model, prop, g, "bias", similarity=sim, **kw),
            "risk": influence_all(res.model, prop, g, "risk", sample=sample, **kw)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_influences(out / "influences.csv", vecs)
    r = pearson(vecs["bias"].values, vecs["risk"].values)
    fio.write_json(out / "influence.json", {
        "pearson_bias_risk": r,
        "diagnostics": {t: diagnostics_json(v) for t, v in vecs.items()}})
    print(f"Pearson r(I_bias, I_risk) = {r:.4f}")
    return 0


def cmd_reweight(args) -> int:
    vecs = read_influences(args.influences)
    if "bias" not in vecs or "utility" not in vecs:
        raise ConfigError("influences file needs i_util and i_bias columns")
    try:
        prob = QclpProblem(vecs["bias"].values, vecs["utility"].values, args.alpha, args.beta,
                           vecs["bias"].node_ids)
    except QclpError as exc:
        raise ConfigError(str(exc)) from exc
    sol = solve(prob)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_weights(out / "weights.csv", prob.node_ids, sol.weights)
    print(f"objective {sol.objective:.6g}  iterations {sol.iterations}  "
          f"converged {sol.converged}")
    return 0


def cmd_perturb(args) -> int:
    cfg = config_from_args(args)
    g = prepare_graph(cfg, cfg.seeds[0])
    seed = cfg.seeds[0]
    if args.mechanism == "pp":
        if args.predictions:
            y = fio.read_predictions(args.predictions)
        else:
            y = _vanilla(cfg, g, seed).predictions
        pert = pp_perturb(g, y, cfg.gamma, subseed(seed, "pp"))
    else:
        pert = dp_perturb(g, DP_FLAGS[args.mechanism], cfg.eps, subseed(seed, "dp"))
    out = Path(args.out)
    save_dataset(pert.apply(g), out)
    write_sidecar(pert, out / "perturbation.json")
    print(json.dumps(pert.sidecar()))
    return 0


def cmd_synth(args) -> int:
    params = _sbm_from_flags(args)
    tc = TrainConfig(hidden=args.hidden, epochs=args.epochs, learning_rate=args.lr,
                     weight_decay=args.weight_decay)
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    study = synth_tradeoff_study(params, tc, args.lambda_fair, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    obj = fio.write_json(out / "synth.json", study.to_json())
    print(f"two-hop ratio {obj['empirical_ratio']:.4g} (closed form "
          f"{obj['theoretical_ratio']}), rel d0 {obj['mean_rel_d0']:.4f}, "
          f"rel d1 {obj['mean_rel_d1']:.4f}")
    return 0


def cmd_riskmodel(args) -> int:
    params = _sbm_from_flags(args)
    reports = [risk_model_check(params, args.seed, s, args.pairs) for s in args.sigma]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_json(out / "riskmodel.json", {"checks": [r.to_json() for r in reports]})
    for r in reports:
        print(f"sigma {r.sigma:g}: mean |dev| {r.mean_abs_deviation:.3e}")
    return 0


def cmd_report(args) -> int:
    rows = []
    for raw in args.paths:
        path = Path(raw)
        if path.is_dir():
            path = path / "report.json"
        obj = json.loads(path.read_text())
        fio.validate_report(obj)
        rows.append(obj)
    for obj in rows:
        _print_summary(obj)
    return 0


def _print_summary(obj):
    m = obj["mean"]
    line = (f"{obj['method']:8s} acc {m['accuracy']:.4f}  bias {m['bias']:.4g}  "
            f"AUC {m['mean_auc']:.4f}")
    if obj.get("delta"):
        d = obj["delta"]
        line += "".join(f"  {k} {_fmt(d[k])}"
                        for k in ("delta_acc", "delta_bias", "delta_risk", "delta"))
    print(line)


def _fmt(x):
    return "n/a" if x is None else f"{x:+.4f}"


COMMANDS = {"run": cmd_run, "attack": cmd_attack, "influence": cmd_influence,
            "reweight": cmd_reweight, "perturb": cmd_perturb, "synth": cmd_synth,
            "riskmodel": cmd_riskmodel, "report": cmd_report}


def _thread_limit():
    raw = os.environ.get("FAIRLEAK_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError as exc:
        raise ConfigError(f"FAIRLEAK_THREADS must be a positive integer, got {raw!r}") from exc
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"fairleak: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level failure boundary
        log.debug("%s", traceback.format_exc())
        print(f"fairleak: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
