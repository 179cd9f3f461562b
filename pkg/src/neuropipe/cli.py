"""Command-line entry point: ``neuropipe <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
failure (including a failed leakage audit).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, conformal as _conformal, ingest, pcq, report, synth
from .cv_engine import (DecisionLog, FoldResult, LEAK_STAGES, ModelReport, Trace, conformal_experiment,
                        leakage_audit, run_experiment)
from .errors import DataError, InvariantError
from .flag_topology import DEFAULT_MAX_DIM, topology_block
from .graph_features import graph_block

log = logging.getLogger("neuropipe")

MANIFEST = "manifest.json"
DEFAULT_DENSITY = 0.2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


# ----------------------------------------------------------------- manifest


def _sha256_bytes(chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c)
    return h.hexdigest()


def cohort_hash(directory) -> str:
    """Hash of the relative paths and bytes of every cohort data file."""
    d = Path(directory)
    files = [d / "subjects.csv"]
    for sub in ("blocks", "connectivity"):
        if (d / sub).is_dir():
            files += sorted(p for p in (d / sub).iterdir() if p.suffix in (".csv", ".tsv"))
    chunks = []
    for f in files:
        if f.exists():
            chunks += [f.relative_to(d).as_posix().encode(), b"\0", f.read_bytes(), b"\0"]
    return _sha256_bytes(chunks)


def spec_hash(spec) -> str:
    return _sha256_bytes([ingest.dump_experiment_spec(spec).encode()])


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, started, outputs, **fields):
    out = Path(out_dir)
    manifest = {"tool": "neuropipe", "version": __version__, "command": command,
                "started": started, "finished": _now(),
                "outputs": sorted(Path(p).name for p in outputs), **fields}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    started = _now()
    spec = synth.load_synth_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    seed = spec.seed
    result = synth.generate(spec)
    out = _out_dir(args.out)
    ingest.write_cohort(result.cohort, out)
    truth = {"spec": spec.to_dict(), "planted": list(result.planted),
             "planted_names": list(result.planted_names)}
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    write_manifest(out, "synth", started, ["subjects.csv", "ground_truth.json"], seed=seed,
                   cohort_hash=cohort_hash(out))
    print(f"wrote {len(result.cohort.subjects)} subjects to {out}")
    return 0


def _threshold_args(args):
    if args.threshold is None and args.density is None:
        return None, DEFAULT_DENSITY
    return args.threshold, args.density


def _load_matrices(path, directed):
    """Matrices keyed by file stem, from one file or a directory of files."""
    p = Path(path)
    kind = "directed" if directed else None
    if p.is_file():
        return {p.stem: ingest.load_connectivity(p, kind)}
    if not p.is_dir():
        raise DataError(f"{p}: connectivity input not found")
    files = sorted(f for f in p.iterdir() if f.suffix in (".csv", ".tsv"))
    if not files:
        raise DataError(f"{p}: no connectivity matrices found")
    return {f.stem: ingest.load_connectivity(f, kind) for f in files}


def cmd_features(args):
    if args.cohort:
        matrices = ingest.load_cohort(args.cohort).connectivity
    else:
        if not args.out:
            raise UsageError("--out is required with --in")
        matrices = _load_matrices(args.inp, args.directed)
    threshold, density = _threshold_args(args)
    if args.kind == "graph":
        block = graph_block(matrices, threshold, density)
    else:
        block = topology_block(matrices, threshold, density, args.max_dim)
    target = Path(args.out) if args.out else Path(args.cohort) / "blocks" / f"{args.kind}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    ingest.write_feature_table(block, target)
    print(f"wrote {block.values.shape[0]} x {block.values.shape[1]} {args.kind} block to {target}")
    return 0


def _load_spec(args):
    spec = ingest.load_experiment_spec(args.spec)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def cmd_run(args):
    started = _now()
    spec = _load_spec(args)
    cohort = ingest.load_cohort(args.cohort)
    result = run_experiment(spec, cohort, jobs=args.jobs, debug_leak=args.debug_leak,
                            traced=not args.no_trace)
    out = _out_dir(args.out)
    paths = [out / "decision_log.csv", out / "model_report.json", out / "trace.json"]
    result.log.to_csv(paths[0])
    paths[1].write_text(json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    paths[2].write_text(json.dumps(result.trace.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")
    write_manifest(out, "run", started, paths, seed=spec.cv.seed, spec_hash=spec_hash(spec),
                   cohort_hash=cohort_hash(args.cohort), debug_leak=args.debug_leak)
    r = result.report
    print(f"{spec.name}: accuracy={r.accuracy:.4f} sensitivity={r.sensitivity:.4f} "
          f"specificity={r.specificity:.4f} leakage_violations={len(r.violations)}")
    return 0


def _find_logs(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: log directory not found")
    files = sorted(d.rglob("decision_log*.csv"))
    if not files:
        raise DataError(f"{d}: no decision_log*.csv files found")
    return [DecisionLog.from_csv(f) for f in files]


def cmd_pcq(args):
    logs = _find_logs(args.logs)
    cohort = ingest.load_cohort(args.cohort) if args.cohort else None
    table = pcq.build_pcq(logs, cohort)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(args.out)
    for mle in table.experiments:
        try:
            tp, fp = pcq.tp_rate(table, mle), pcq.fp_rate(table, mle)
            print(f"{mle}: TP rate={tp:.4f} FP rate={fp:.4f}")
        except DataError as exc:
            print(f"{mle}: {exc}")
    print(f"note: {pcq.RATE_NOTE}")
    return 0


def _parse_fpr(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--fpr expects comma-separated percentages, got {text!r}") from None
    return [v / 100.0 for v in vals]


def _model_report_from_json(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    folds = [FoldResult(**f) for f in d.get("folds", [])]
    return ModelReport(d["mle"], d["n_subjects"], d["n_features"], d["accuracy"], d["sensitivity"],
                       d["specificity"], d["balanced_accuracy"], folds)


def cmd_report(args):
    started = _now()
    grid = _parse_fpr(args.fpr)
    dlog = DecisionLog.from_csv(args.log)
    mr = None
    sibling = Path(args.log).with_name("model_report.json")
    if args.model_report:
        mr = _model_report_from_json(args.model_report)
    elif sibling.exists():
        mr = _model_report_from_json(sibling)
    paths = report.render(dlog, args.out, grid, model_report=mr)
    write_manifest(args.out, "report", started, paths)
    for row in report.operating_table(dlog, grid).rows:
        print(f"FPR target {row.target_fpr:.2f}: achieved {row.achieved_fpr:.4f}, TPR {row.tpr:.4f}")
    return 0


def cmd_conformal(args):
    started = _now()
    spec = _load_spec(args)
    cohort = ingest.load_cohort(args.cohort)
    if not 0 < args.epsilon < 1:
        raise DataError(f"--epsilon must be in (0, 1), got {args.epsilon}")
    rows = conformal_experiment(spec, cohort, args.epsilon, args.calib_fraction, args.jobs)
    out = _out_dir(args.out)
    path = out / "conformal.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "fold", "true_status", "p0", "p1", "prediction_set", "cell"])
        for r in rows:
            w.writerow([r["subject_id"], r["fold"], r["true_status"], ingest.format_number(r["p0"]),
                        ingest.format_number(r["p1"]), " ".join(map(str, r["prediction_set"])), r["cell"]])
    covered = sum(r["true_status"] in r["prediction_set"] for r in rows) / len(rows)
    write_manifest(out, "conformal", started, [path], seed=spec.cv.seed, spec_hash=spec_hash(spec),
                   cohort_hash=cohort_hash(args.cohort), epsilon=args.epsilon)
    print(f"{spec.name}: coverage={covered:.4f} at epsilon={args.epsilon}")
    return 0


def cmd_audit(args):
    try:
        trace = Trace.from_dict(json.loads(Path(args.trace).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{args.trace}: cannot read trace: {exc}") from exc
    violations = leakage_audit(trace)
    for v in violations:
        print(f"LEAK repeat={v.repeat} fold={v.fold} inner={v.inner} cell={v.cell} stage={v.stage} "
              f"ids={','.join(v.leaked_ids)}")
    print(f"{len(trace.entries)} fit calls audited, {len(violations)} violations")
    return 3 if violations else 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="neuropipe", description="Nested-CV neuroimaging classification pipeline.")
    p.add_argument("--version", action="version", version=f"neuropipe {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("features", help="derive feature blocks from connectivity")
    fsub = f.add_subparsers(dest="kind", parser_class=_Parser, required=True)
    for kind in ("graph", "topology"):
        k = fsub.add_parser(kind)
        src = k.add_mutually_exclusive_group(required=True)
        src.add_argument("--cohort", help="cohort directory (reads its connectivity/)")
        src.add_argument("--in", dest="inp", help="connectivity matrix file or directory of files")
        k.add_argument("--directed", action="store_true",
                       help="read matrices without a pragma as directed")
        k.add_argument("--out", help=f"output table (default <cohort>/blocks/{kind}.csv)")
        g = k.add_mutually_exclusive_group()
        g.add_argument("--threshold", type=float)
        g.add_argument("--density", type=float)
        if kind == "topology":
            k.add_argument("--max-dim", type=int, default=DEFAULT_MAX_DIM)
        k.set_defaults(func=cmd_features)

    def experiment_args(parser):
        parser.add_argument("--spec", required=True)
        parser.add_argument("--cohort", required=True)
        parser.add_argument("--out", required=True)
        parser.add_argument("--seed", type=int)
        parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    r = sub.add_parser("run", help="run a nested-CV experiment")
    experiment_args(r)
    r.add_argument("--debug-leak", choices=LEAK_STAGES,
                   help="negative control: fit this stage on all rows (leaks on purpose)")
    r.add_argument("--no-trace", action="store_true", help="skip the leakage trace")
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("pcq", help="build the PCQ table from decision logs")
    q.add_argument("--logs", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--cohort")
    q.set_defaults(func=cmd_pcq)

    o = sub.add_parser("report", help="operating table, summary and ROC plot")
    o.add_argument("--log", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--fpr", default="10,15,20,30", help="comma-separated target FPRs in percent")
    o.add_argument("--model-report")
    o.set_defaults(func=cmd_report)

    c = sub.add_parser("conformal", help="split-conformal p-values and prediction sets")
    experiment_args(c)
    c.add_argument("--epsilon", type=float, default=_conformal.DEFAULT_EPSILON)
    c.add_argument("--calib-fraction", type=float, default=0.3)
    c.set_defaults(func=cmd_conformal)

    a = sub.add_parser("audit", help="check a run trace for leakage")
    a.add_argument("--trace", required=True)
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("neuropipe: error: --jobs must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"neuropipe: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"neuropipe: data error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"neuropipe: invariant failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"neuropipe: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
