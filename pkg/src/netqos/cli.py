"""Command-line driver: ``netqos <command> ...``.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
Every command writes a ``manifest.json`` next to its output (``<file>.manifest.json``
for single-file outputs) recording config hashes, seeds, input digests and
output digests, with no absolute paths and no thread counts.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, analysis, dataset, netsim, policy, telemetry
from .config import apply_flat, coerce, config_hash, read_config
from .errors import ConfigInvalid, NetQosError
from .learn import KINDS, TrainConfig, evaluate, fit, load_model, save_model, write_history
from .learn.model import BASELINE_DEFAULTS, Metrics
from .telemetry import fmt_real

log = logging.getLogger("netqos")

THETAS = (0.3, 0.5, 0.7)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- manifests

def digest(path: Path) -> str:
    """sha256 of a file, or of a directory's files (sorted relative names + contents)."""
    h = hashlib.sha256()
    path = Path(path)
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file() and q.name != "manifest.json"):
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(target: Path, command: str, params: dict, inputs: dict, outputs, configs: dict = None,
                   seeds: dict = None) -> Path:
    target = Path(target)
    base = target if target.is_dir() else target.parent
    out = {}
    for p in outputs:
        p = Path(p)
        out[p.relative_to(base).as_posix() if p != base else "."] = digest(p)
    manifest = {
        "tool": "netqos",
        "version": __version__,
        "command": command,
        "params": params,
        "config_hashes": configs or {},
        "seeds": seeds or {},
        "inputs": {k: {"name": Path(v).name, "sha256": digest(v)} for k, v in sorted(inputs.items())},
        "outputs": out,
    }
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- config loading

def load_train_config(path, algo: str, seed: int):
    """cnn -> TrainConfig; baselines -> hyper dict.  Keys may sit in any section."""
    flat = {}
    if path:
        for kv in read_config(path).values():
            for k, v in kv.items():
                if k in flat:
                    raise ConfigInvalid(f"key {k!r} given twice in {path}")
                flat[k] = v
    if algo == "cnn":
        flat.pop("seed", None)
        return apply_flat(TrainConfig, flat, TrainConfig(seed=seed))
    defaults = BASELINE_DEFAULTS[algo]
    hyper = {}
    for k, v in flat.items():
        if k == "kpis":
            hyper[k] = tuple(s.strip() for s in v.split(",") if s.strip())
        elif k in defaults:
            hyper[k] = None if v.lower() == "none" else coerce(v, defaults[k])
        else:
            hyper[k] = v  # rejected by baseline_train with BadHyper
    if algo == "svm":
        hyper["seed"] = seed
    return hyper


def metrics_csv(rows) -> str:
    lines = ["algo,split,n,accuracy,tn,fp,fn,tp,precision_improvement,recall_improvement,"
             "precision_deterioration,recall_deterioration"]
    for algo, split_name, m in rows:
        (tn, fp), (fn, tp) = m.confusion
        lines.append(",".join([algo, split_name, str(m.n), fmt_real(m.accuracy), str(tn), str(fp), str(fn), str(tp),
                               fmt_real(m.precision[0]), fmt_real(m.recall[0]),
                               fmt_real(m.precision[1]), fmt_real(m.recall[1])]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- commands

def cmd_simulate(a):
    cfg = replace(netsim.load_sim_config(a.config), seed=a.seed)
    out = Path(a.out)
    trace, gt = netsim.generate_trace(cfg, threads=a.threads)
    telemetry.write_trace(trace, out)
    netsim.write_ground_truth(gt, out / "gt.csv")
    write_manifest(out, "simulate", {}, {"config": a.config}, [out], {"sim": config_hash(cfg)}, {"sim": a.seed})
    log.info("wrote trace of %d cells x %d steps to %s", len(trace.topology), cfg.n_steps, out)


def cmd_analyze_corr(a):
    trace = telemetry.read_trace(a.trace)
    m = analysis.correlation_matrix(trace, "all" if a.cell is None else a.cell)
    out = Path(a.out)
    analysis.export_heatmap(m, out)
    if m.flagged:
        log.warning("constant KPI series (zero rows): %s", ", ".join(m.flagged))
    write_manifest(out, "analyze corr", {"cell": a.cell if a.cell is not None else "all"}, {"trace": a.trace}, [out])


def cmd_analyze_cluster(a):
    trace = telemetry.read_trace(a.trace)
    cl = analysis.kmeans(analysis.traffic_profiles(trace), a.k, a.seed)
    out = Path(a.out)
    analysis.write_clustering(cl, trace, out)
    labels = [trace.topology.cell(c).region_type for c in cl.cell_ids]
    log.info("k=%d inertia=%.4f purity=%.3f iterations=%d", a.k, cl.inertia,
             analysis.purity(cl.assignments, labels), cl.iterations)
    write_manifest(out, "analyze cluster", {"k": a.k}, {"trace": a.trace}, [out], seeds={"kmeans": a.seed})


def cmd_dataset_build(a):
    trace = telemetry.read_trace(a.trace)
    cfg = dataset.load_dataset_config(a.config)
    ds = dataset.build_dataset(trace, cfg, provenance=digest(Path(a.trace))[:16])
    out = Path(a.out)
    dataset.save_dataset(ds, out)
    write_manifest(out, "dataset build", {}, {"trace": a.trace, "config": a.config}, [out],
                   {"dataset": config_hash(cfg)}, {"split": cfg.split_seed})
    log.info("examples: train=%d test=%d validation=%d (deterioration %.3f)", len(ds.train), len(ds.test),
             len(ds.validation), ds.train.class_balance)


def cmd_train(a):
    ds = dataset.load_dataset(a.data)
    tc = load_train_config(a.train_config, a.algo, a.seed)
    if a.algo == "cnn":
        model, history = fit("cnn", ds, a.seed, train_config=tc)
    else:
        model, history = fit(a.algo, ds, a.seed, hyper=tc)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    outputs = [out]
    if a.algo == "cnn":
        hist = out.with_name("history.csv")
        write_history(history, hist)
        outputs.append(hist)
    inputs = {"data": a.data}
    if a.train_config:
        inputs["train_config"] = a.train_config
    write_manifest(out, "train", {"algo": a.algo}, inputs, outputs,
                   {"train": config_hash(a.algo, tc if not isinstance(tc, dict) else sorted(tc.items()))},
                   {"train": a.seed})
    log.info("trained %s model -> %s", a.algo, out)


def cmd_eval(a):
    model = load_model(a.model)
    ds = dataset.load_dataset(a.data)
    m = evaluate(model, ds.part(a.split))
    out = Path(a.out)
    out.write_text(metrics_csv([(model.kind, a.split, m)]))
    write_manifest(out, "eval", {"split": a.split}, {"model": a.model, "data": a.data}, [out])
    print(f"{model.kind} {a.split} accuracy {m.accuracy:.4f} (n={m.n})")


def _write_replay(report, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    policy.write_report(report, out / "report.csv")
    policy.emit_delay_comparison(report, out / "comparison.svg")
    policy.emit_delay_comparison(report, out / "comparison.csv")


def cmd_replay(a):
    cfg = netsim.load_sim_config(a.sim_config)
    model = load_model(a.model)
    pc = policy.PolicyConfig(theta=a.theta)
    report = policy.replay(cfg, model, pc, seed=a.seed)
    out = Path(a.out)
    _write_replay(report, out)
    write_manifest(out, "replay", {"theta": a.theta}, {"sim_config": a.sim_config, "model": a.model}, [out],
                   {"sim": config_hash(replace(cfg, seed=a.seed))}, {"sim": a.seed})
    b, p = report.variants["baseline"], report.variants["policy"]
    print(f"baseline mean delay {b.mean_delay_ms:.2f} ms, policy {p.mean_delay_ms:.2f} ms, "
          f"rejected low {p.rejected_low}, high {p.rejected_high}")


# ---------------------------------------------------------------- bench

def bench_settings(quick: bool):
    """(sim config, congested sim config, dataset config, cnn train config, hyper overrides)."""
    if quick:
        sim = netsim.benchmark_config(n_cells=24, days=3)
        return (sim, replace(sim, events=netsim.congestion_events(sim)), dataset.DatasetConfig(),
                TrainConfig(epochs=4, seed=42, class_weights=TrainConfig().class_weights),
                {"gbm": {"stages": 20}, "svm": {"epochs": 5}})
    sim = netsim.benchmark_config()
    return sim, netsim.benchmark_config(congested=True), dataset.DatasetConfig(), TrainConfig(seed=42), {}


def _ds_config_text(c: dataset.DatasetConfig) -> str:
    return "\n".join([
        "[dataset]", f"window = {c.window}", f"neighbors = {c.neighbors}", f"horizon = {c.horizon}",
        f"deadband = {c.deadband!r}", "split_ratios = " + ",".join(repr(r) for r in c.split_ratios),
        f"split_seed = {c.split_seed}", f"chronological = {str(c.chronological).lower()}",
        f"tdr_channels = {str(c.tdr_channels).lower()}"]) + "\n"


def run_bench(out: Path, quick: bool = False, threads: int = 1, stream=None) -> dict:
    """simulate -> analyze -> dataset -> train all kinds -> eval -> replay; returns the summary dict."""
    stream = stream or sys.stdout
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sim, congested, dcfg, tcfg, overrides = bench_settings(quick)
    (out / "sim.cfg").write_text(netsim.format_sim_config(sim))
    (out / "sim_congested.cfg").write_text(netsim.format_sim_config(congested))
    (out / "dataset.cfg").write_text(_ds_config_text(dcfg))

    t0 = time.time()
    trace, gt = netsim.generate_trace(sim, threads=threads)
    telemetry.write_trace(trace, out / "trace")
    netsim.write_ground_truth(gt, out / "trace" / "gt.csv")
    log.info("simulated %.1fs", time.time() - t0)

    corr = analysis.correlation_matrix(trace)
    (out / "analysis").mkdir(exist_ok=True)
    analysis.export_heatmap(corr, out / "analysis" / "heatmap.csv")
    analysis.export_heatmap(corr, out / "analysis" / "heatmap.svg")
    cl = analysis.kmeans(analysis.traffic_profiles(trace), 3, 42)
    analysis.write_clustering(cl, trace, out / "analysis" / "clusters.csv")
    regions = [trace.topology.cell(c).region_type for c in cl.cell_ids]

    ds = dataset.build_dataset(trace, dcfg, provenance="bench")
    dataset.save_dataset(ds, out / "dataset")
    bayes = netsim.oracle_bayes_accuracy(gt, dcfg, ds.test, sim)

    (out / "models").mkdir(exist_ok=True)
    rows, models = [], {}
    for kind in KINDS:
        t1 = time.time()
        if kind == "cnn":
            model, history = fit("cnn", ds, 42, train_config=tcfg)
            write_history(history, out / "models" / "history.csv")
        else:
            model, _ = fit(kind, ds, 42, hyper=overrides.get(kind))
        save_model(model, out / "models" / f"{kind}.nqm")
        models[kind] = model
        rows.append((kind, "test", evaluate(model, ds.test)))
        log.info("%s trained+evaluated %.1fs", kind, time.time() - t1)
    (out / "metrics.csv").write_text(metrics_csv(rows))

    replays = {}
    scorers = [(f"theta_{fmt_real(t)}", models["cnn"], t) for t in THETAS + (1.0,)]
    scorers.append(("oracle_theta_0.5", policy.OracleScorer(netsim.generate_trace(congested, threads)[1]), 0.5))
    for name, scorer, theta in scorers:
        t1 = time.time()
        rep = policy.replay(congested, scorer, policy.PolicyConfig(theta))
        _write_replay(rep, out / "replay" / name)
        replays[name] = rep
        log.info("replay %s %.1fs", name, time.time() - t1)

    acc = {k: m.accuracy for k, _, m in rows}
    summary = {"bayes": bayes, "accuracy": acc, "purity": analysis.purity(cl.assignments, regions),
               "replay": {n: {v: asdict(s) for v, s in r.variants.items()} for n, r in replays.items()}}
    lines = ["section,name,value", f"oracle,bayes_accuracy,{fmt_real(bayes)}",
             f"analysis,kmeans_purity,{fmt_real(summary['purity'])}"]
    lines += [f"accuracy,{k},{fmt_real(v)}" for k, v in acc.items()]
    for n, r in replays.items():
        b, p = r.variants["baseline"], r.variants["policy"]
        lines += [f"replay,{n}.baseline_mean_delay_ms,{fmt_real(b.mean_delay_ms)}",
                  f"replay,{n}.policy_mean_delay_ms,{fmt_real(p.mean_delay_ms)}",
                  f"replay,{n}.delay_ratio,{fmt_real(p.mean_delay_ms / b.mean_delay_ms)}",
                  f"replay,{n}.rejected_low,{p.rejected_low}", f"replay,{n}.rejected_high,{p.rejected_high}"]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    write_manifest(out, "bench", {"quick": quick}, {}, sorted(p for p in out.iterdir() if p.name != "manifest.json"),
                   {"sim": config_hash(sim), "sim_congested": config_hash(congested), "dataset": config_hash(dcfg),
                    "cnn_train": config_hash(tcfg)}, {"sim": sim.seed, "split": dcfg.split_seed, "train": 42})

    w = max(len(k) for k in acc)
    print(f"Bayes (oracle) accuracy: {bayes:.4f}", file=stream)
    print(f"k-means purity (k=3): {summary['purity']:.3f}", file=stream)
    print(f"{'algo':<{w}}  test accuracy", file=stream)
    for k, v in acc.items():
        print(f"{k:<{w}}  {v:.4f}", file=stream)
    print(f"{'replay':<18} {'baseline ms':>12} {'policy ms':>10} {'ratio':>6} {'rej low':>8} {'rej high':>8}",
          file=stream)
    for n, r in replays.items():
        b, p = r.variants["baseline"], r.variants["policy"]
        print(f"{n:<18} {b.mean_delay_ms:>12.2f} {p.mean_delay_ms:>10.2f} {p.mean_delay_ms / b.mean_delay_ms:>6.3f} "
              f"{p.rejected_low:>8d} {p.rejected_high:>8d}", file=stream)
    return summary


def cmd_bench(a):
    run_bench(Path(a.out), a.quick, a.threads)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netqos", description="Cellular QoS cognition pipeline.")
    p.add_argument("--version", action="version", version=f"netqos {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="generate a synthetic trace and ground truth")
    s.add_argument("--config", required=True, help="simulator config file")
    s.add_argument("--seed", required=True, type=int, help="random seed (overrides the config)")
    s.add_argument("--out", required=True, help="output trace directory")
    s.add_argument("--threads", type=int, default=1, help="worker threads (output is identical for any value)")
    s.set_defaults(func=cmd_simulate)

    an = sub.add_parser("analyze", help="correlation heatmap or traffic-profile clustering")
    asub = an.add_subparsers(dest="analysis", metavar="analysis", parser_class=_Parser)
    asub.required = True
    c = asub.add_parser("corr", help="|Pearson| matrix of KPI series")
    c.add_argument("--trace", required=True, help="trace directory")
    c.add_argument("--cell", type=int, default=None, help="restrict to one cell (default: all cells)")
    c.add_argument("--out", required=True, help="output .csv or .svg")
    c.set_defaults(func=cmd_analyze_corr)
    k = asub.add_parser("cluster", help="k-means over weekday/weekend hourly load profiles")
    k.add_argument("--trace", required=True, help="trace directory")
    k.add_argument("--k", required=True, type=int, help="number of clusters")
    k.add_argument("--seed", required=True, type=int, help="seeding RNG seed")
    k.add_argument("--out", required=True, help="output .csv")
    k.set_defaults(func=cmd_analyze_cluster)

    d = sub.add_parser("dataset", help="labeled example sets")
    dsub = d.add_subparsers(dest="dataset_cmd", metavar="action", parser_class=_Parser)
    dsub.required = True
    b = dsub.add_parser("build", help="build and split examples from a trace")
    b.add_argument("--trace", required=True, help="trace directory")
    b.add_argument("--config", required=True, help="dataset config file")
    b.add_argument("--out", required=True, help="output dataset directory")
    b.set_defaults(func=cmd_dataset_build)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--algo", required=True, choices=KINDS, help="model kind")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--train-config", default=None, help="training config file (cnn: TrainConfig keys; "
                                                        "baselines: hyperparameters)")
    t.add_argument("--seed", required=True, type=int, help="training seed")
    t.add_argument("--out", required=True, help="output model file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on a split")
    e.add_argument("--model", required=True, help="model file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", required=True, choices=("test", "validation"), help="which split")
    e.add_argument("--out", required=True, help="output metrics .csv")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replay", help="closed-loop admission-control replay against a no-policy baseline")
    r.add_argument("--sim-config", required=True, help="simulator config file")
    r.add_argument("--model", required=True, help="model file")
    r.add_argument("--theta", required=True, type=float, help="rejection threshold in [0, 1]")
    r.add_argument("--seed", required=True, type=int, help="simulation seed")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_replay)

    be = sub.add_parser("bench", help="run the standard end-to-end benchmark")
    be.add_argument("--out", required=True, help="results directory")
    be.add_argument("--quick", action="store_true", help="small, fast variant for smoke testing")
    be.add_argument("--threads", type=int, default=1, help="worker threads (results are identical for any value)")
    be.set_defaults(func=cmd_bench)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("netqos: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (NetQosError, OSError, ValueError, KeyError) as e:
        print(f"netqos: error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
