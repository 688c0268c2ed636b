"""``ltrkit`` command line: one executable, one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation error (bad data/config), 2 internal error.
Human-readable progress goes to stderr; ``--log-jsonl`` writes structured
events.  Every artifact carries the resolved configuration and a SHA-256
digest of each input, inline for JSON artifacts and as ``<out>.meta.json``
for manifests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ClassStats,
    LabelMap,
    LongTailPartition,
    ValidationError,
    class_stats,
    read_manifest,
    write_manifest,
)

log = logging.getLogger("ltrkit")
events = logging.getLogger("ltrkit.events")

SUBCOMMANDS = ("ingest", "balance", "split", "partition", "reduced-bias", "train", "eval", "report",
               "collapse", "gradcheck", "bench-synthetic")


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


class _JsonLineFormatter(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        payload.update(getattr(record, "event", {}))
        return json.dumps(payload, sort_keys=True)


def _setup_logging(args) -> None:
    root = logging.getLogger("ltrkit")
    root.handlers.clear()
    root.setLevel(logging.DEBUG)
    root.propagate = False
    err = logging.StreamHandler(sys.stderr)
    err.setLevel(logging.WARNING if args.quiet else logging.INFO)
    err.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(err)
    if args.log_jsonl:
        fh = logging.FileHandler(args.log_jsonl, mode="a", encoding="utf-8")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(_JsonLineFormatter())
        root.addHandler(fh)


def emit_event(kind: str, **fields) -> None:
    """Structured event; only the JSONL handler renders the payload."""
    events.debug(kind, extra={"event": {"event": kind, **fields}})


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# flags that never change an artifact's content
_NON_CONFIG = frozenset({"func", "command", "quiet", "log_jsonl", "threads", "config", "experiment"})


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_CONFIG and not k.startswith("_")}
    if getattr(args, "experiment", None) is not None:
        cfg["experiment"] = args.experiment.to_dict()
    return cfg


def provenance(args, inputs, **extra) -> dict:
    prov = {
        "tool": f"ltrkit {__version__}",
        "command": args.command,
        "config": resolved_config(args),
        "inputs": {str(p): file_digest(p) for p in inputs if p is not None},
    }
    prov.update(extra)
    return prov


def write_meta(out_path, prov: dict) -> None:
    Path(str(out_path) + ".meta.json").write_text(json.dumps(prov, indent=1, sort_keys=True) + "\n",
                                                   encoding="utf-8")


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"{what}: file not found: {p}")
    return p


def _csv_list(s: str) -> list[str]:
    return [t.strip() for t in s.split(",") if t.strip()]


def _floats(s: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in _csv_list(s))
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {s!r}") from None


def _load_json(path, what):
    _require(path, what)
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{what} {path}: invalid JSON at line {e.lineno}: {e.msg}") from None


# Subcommands


def cmd_ingest(args) -> int:
    from .ingest import merge, parse_detection_shards, read_metadata, write_rejects

    for p in args.detections:
        _require(p, "--detections")
    labels = LabelMap.load(_require(args.labels, "--labels"))
    dets = parse_detection_shards(args.detections, threads=args.threads)
    meta = read_metadata(_require(args.metadata, "--metadata"))
    res = merge(dets, meta, labels, drop_labels=set(_csv_list(args.drop)), min_conf=args.min_conf)
    write_manifest(res.records, args.out)
    rejects_path = str(args.out) + ".rejects.jsonl"
    write_rejects(res.rejects, rejects_path)
    write_meta(args.out, provenance(args, [*args.detections, args.metadata, args.labels]))
    for line in res.summary_lines():
        log.info(line)
    emit_event("ingest", records=len(res.records), excluded=res.excluded, rejects=len(res.rejects))
    ratio = res.reject_ratio()
    if ratio > args.reject_threshold:
        log.error("reject ratio %.4f exceeds threshold %.4f (see %s)", ratio, args.reject_threshold, rejects_path)
        return 1
    return 0


def cmd_balance(args) -> int:
    from .sampler import cap_classes

    records = read_manifest(_require(args.manifest, "--manifest"))
    kept = cap_classes(records, cap=args.cap, seed=args.seed)
    write_manifest(kept, args.out)
    write_meta(args.out, provenance(args, [args.manifest]))
    log.info("balance: %d -> %d records (cap %d)", len(records), len(kept), args.cap)
    emit_event("balance", before=len(records), after=len(kept), cap=args.cap, seed=args.seed)
    return 0


def cmd_split(args) -> int:
    from .sampler import SplitSpec, apply_split_assignments, stratified_split

    records = read_manifest(_require(args.manifest, "--manifest"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.assignments:
        parts = apply_split_assignments(records, _load_json(args.assignments, "--assignments"))
    else:
        spec = SplitSpec(_floats(args.fractions), args.seed)
        parts = stratified_split(records, spec)
    inputs = [args.manifest] + ([args.assignments] if args.assignments else [])
    for name, part in zip(("train", "val", "test"), parts):
        path = out / f"{name}.jsonl"
        write_manifest(part, path)
        write_meta(path, provenance(args, inputs))
        log.info("split %s: %d records", name, len(part))
    emit_event("split", sizes=[len(p) for p in parts])
    return 0


def _labels_or_default(path, n: int) -> LabelMap:
    if path:
        return LabelMap.load(_require(path, "--labels"))
    return LabelMap(tuple(f"class_{i}" for i in range(n)))


def cmd_partition(args) -> int:
    from .sampler import partition_long_tail

    if args.stats:
        stats = ClassStats.from_dict(_load_json(args.stats, "--stats"))
        labels = _labels_or_default(args.labels, stats.num_classes)
        inputs = [args.stats]
    elif args.manifest:
        if not args.labels:
            raise ValidationError("partition --manifest needs --labels")
        labels = LabelMap.load(_require(args.labels, "--labels"))
        stats = class_stats(read_manifest(_require(args.manifest, "--manifest")), labels)
        inputs = [args.manifest, args.labels]
    else:
        raise ValidationError("partition needs --manifest or --stats")
    if len(labels) != stats.num_classes:
        raise ValidationError(f"label map has {len(labels)} classes but stats have {stats.num_classes}")
    part = partition_long_tail(stats, args.head_share, args.fewshot)
    doc = part.to_dict(labels)
    doc["counts"] = list(stats.counts)
    doc["total"] = stats.total
    doc["provenance"] = provenance(args, inputs)
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    log.info("partition: head %d, tail %d, few-shot %d (total %d)", len(part.head), len(part.tail),
             len(part.few_shot), stats.total)
    if args.figure:
        from .figures import plot_class_distribution

        plot_class_distribution(stats.counts, labels.classes, part, args.figure)
    return 0


def cmd_reduced_bias(args) -> int:
    from .sampler import ReducedBiasSpec, build_reduced_bias

    spec = ReducedBiasSpec(frozenset(_csv_list(args.shared)), tuple(_csv_list(args.overlap_keys)), args.dt)
    res = build_reduced_bias(
        read_manifest(_require(args.source, "--source")),
        LabelMap.load(_require(args.source_labels, "--source-labels")),
        read_manifest(_require(args.external, "--external")),
        LabelMap.load(_require(args.external_labels, "--external-labels")),
        spec,
    )
    write_manifest(res.records, args.out)
    write_meta(args.out, provenance(args, [args.source, args.source_labels, args.external, args.external_labels],
                                    prevalence=res.prevalence, missing_classes=res.missing_classes))
    log.info("reduced-bias: %d records (%d overlap removed, %d outside shared classes)",
             len(res.records), res.removed_overlap, res.removed_unshared)
    return 0


def _train_config_from_args(args):
    from .losses import LossSpec
    from .model import TrainConfig
    from .optim import EarlyStopConfig, OptimConfig, PlateauConfig

    base = args.experiment.train if args.experiment is not None else TrainConfig()
    loss_kw = base.loss.__dict__.copy()
    for arg, key in (("loss", "kind"), ("gamma", "gamma"), ("weight_scheme", "weight_scheme"), ("beta", "beta"),
                     ("c_max", "c_max"), ("scale", "scale"), ("drw_defer", "drw_defer_epoch")):
        v = getattr(args, arg)
        if v is not None:
            loss_kw[key] = v
    opt_kw = base.optim.__dict__.copy()
    if args.optim is not None and args.optim != opt_kw["kind"]:
        opt_kw["kind"] = args.optim
        opt_kw["weight_decay"] = None
    if args.lr is not None:
        opt_kw["lr"] = args.lr
    if args.weight_decay is not None:
        opt_kw["weight_decay"] = args.weight_decay
    scheduler = base.scheduler
    if args.scheduler is not None:
        scheduler = (scheduler or PlateauConfig()) if args.scheduler else None
    early = base.early_stop
    if args.early_stop_patience is not None:
        early = EarlyStopConfig(patience=args.early_stop_patience) if args.early_stop_patience > 0 else None
    kw = {}
    for arg, key in (("epochs", "max_epochs"), ("batch_size", "batch_size"), ("seed", "seed"), ("hidden", "hidden_dim")):
        v = getattr(args, arg)
        kw[key] = getattr(base, key) if v is None else v
    return TrainConfig(loss=LossSpec(**loss_kw), optim=OptimConfig(**opt_kw), scheduler=scheduler,
                       early_stop=early, init_scale=base.init_scale, preprocess=base.preprocess, **kw)


def _featurize_kw(args, cfg=None) -> dict:
    kw = {"mode": args.mode}
    if args.mode == "tiny-image":
        kw["image_root"] = args.image_root
        if cfg is not None:
            kw["preprocess"] = cfg.preprocess
    return kw


def cmd_train(args) -> int:
    from .model import history_lines, records_to_arrays, train

    cfg = _train_config_from_args(args)
    labels = LabelMap.load(_require(args.labels, "--labels"))
    tr = read_manifest(_require(args.train, "--train"))
    va = read_manifest(_require(args.val, "--val"))
    fkw = _featurize_kw(args, cfg)
    xtr, ytr = records_to_arrays(tr, **fkw)
    xva, yva = records_to_arrays(va, **fkw)

    def progress(row):
        log.info("epoch %3d  lr %.2e  train loss %.4f acc %.4f  val loss %.4f acc %.4f recall %.4f  %s",
                 row["epoch"], row["lr"], row["train_loss"], row["train_acc"], row["val_loss"], row["val_acc"],
                 row["val_macro_recall"], " ".join(row["events"]))
        emit_event("epoch", **row)
        for ev in row["events"]:
            emit_event(ev.split(":")[0], epoch=row["epoch"], lr=row["lr"], monitor=row["monitor"])

    ckpt, history = train(xtr, ytr, xva, yva, cfg, num_classes=len(labels), classes=labels.classes,
                          on_epoch=progress)
    ckpt.provenance = provenance(args, [args.train, args.val, args.labels], train_config=cfg.to_dict())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.json")
    (out / "history.jsonl").write_text(history_lines(history), encoding="utf-8")
    log.info("best epoch %d (%s = %.6f); %d epochs run", ckpt.epoch, ckpt.metric_name, ckpt.metric, len(history))
    if args.figures:
        from .figures import plot_training_curves

        plot_training_curves(history, Path(args.figures) / "training_curves.png", best_epoch=ckpt.epoch)
    return 0


def _load_partition(path):
    if not path:
        return None
    return LongTailPartition.from_dict(_load_json(path, "--partition"))


def cmd_eval(args) -> int:
    from .model import Checkpoint
    from .report import emit_report, evaluate

    ckpt = Checkpoint.load(_require(args.checkpoint, "--checkpoint"))
    records = read_manifest(_require(args.manifest, "--manifest"))
    labels = LabelMap.load(_require(args.labels, "--labels")) if args.labels else LabelMap(ckpt.classes)
    mapping = _load_json(args.label_map, "--label-map") if args.label_map else None
    part = _load_partition(args.partition)
    rep = evaluate(ckpt, records, labels, part, mapping, **_featurize_kw(args, ckpt.config))
    inputs = [args.checkpoint, args.manifest] + [p for p in (args.labels, args.partition, args.label_map) if p]
    rep.meta["provenance"] = provenance(args, inputs)
    emit_report(rep, "json", args.out)
    tail = rep.group_acc.get("tail", {})
    log.info("overall %.4f  tail micro %s  tail macro %s  (%d samples)", rep.overall_top1,
             tail.get("micro"), tail.get("macro"), rep.num_samples)
    return 0


def cmd_report(args) -> int:
    from .report import EvalReport, emit_report, improvement_chart

    rep = EvalReport.load(_require(args.report, "--report"))
    figs = Path(args.figures) if args.figures else None
    if args.baseline:
        base = EvalReport.load(_require(args.baseline, "--baseline"))
        chart = improvement_chart(base, rep)
        text = chart.to_csv()
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        log.info("overall delta %+.2f pts; %d improved, %d regressed, %d unchanged", chart.overall_delta,
                 chart.improved, chart.regressed, chart.unchanged)
        if figs is not None:
            from .figures import plot_improvement

            plot_improvement(chart, figs / "improvement.png")
        return 0
    text = emit_report(rep, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    if figs is not None:
        from .figures import plot_per_class_accuracy

        plot_per_class_accuracy(rep, figs / "per_class_accuracy.png")
    return 0


def cmd_collapse(args) -> int:
    from .report import EvalReport, distribution_table

    rep = EvalReport.load(_require(args.report, "--report"))
    if args.class_name not in rep.classes:
        raise ValidationError(f"--class: unknown class {args.class_name!r}")
    cid = rep.classes.index(args.class_name)
    text = distribution_table(rep, cid)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.figure:
        from .figures import plot_prediction_distribution

        plot_prediction_distribution(rep, cid, args.figure)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import GRADCHECK_TOLERANCE, run_gradcheck

    results = run_gradcheck(seed=args.seed, instances=args.instances)
    ok = True
    for name, err in results.items():
        passed = err < GRADCHECK_TOLERANCE
        ok &= passed
        print(f"{name:<38} max rel err {err:.3e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .bench import BenchSpec, run_benchmark

    kw = {}
    if args.seeds is not None:
        kw["seeds"] = tuple(int(s) for s in _csv_list(args.seeds))
    if args.epochs is not None:
        kw["max_epochs"] = args.epochs
    if args.lr is not None:
        kw["lr"] = args.lr
    spec = BenchSpec(**kw)

    def progress(r):
        log.info("seed %d  %-14s sched=%-5s overall %.4f  tail macro %.4f  epochs %d", r["seed"], r["config"],
                 r["scheduler"], r["overall"], r["tail_macro"], r["epochs"])

    res = run_benchmark(spec, progress=progress)
    print(res.table(), end="")
    checks = res.checks()
    for name, passed in checks.items():
        print(f"{name:<40} {'PASS' if passed else 'FAIL'}")
    print(f"runtime {res.seconds:.1f} s")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (out / "bench.md").write_text(res.table(), encoding="utf-8")
        from .figures import plot_benchmark

        plot_benchmark(res.summary, out / "benchmark.png")
    return 0 if all(checks.values()) else 1


# Parser


def build_parser() -> ArgumentParser:
    p = ArgumentParser(prog="ltrkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ltrkit {__version__}")
    p.add_argument("--config", help="ExperimentConfig JSON; its sections provide defaults for flags")
    p.add_argument("--log-jsonl", help="append structured JSONL events to this file")
    p.add_argument("--threads", type=int, default=int(os.environ.get("LTRKIT_THREADS", os.cpu_count() or 1)),
                   help="worker threads (default: $LTRKIT_THREADS or CPU count)")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    s = sub.add_parser("ingest", help="merge detector JSON with species metadata into a manifest")
    s.add_argument("--detections", nargs="+", required=True, help="one or more detection JSON shards")
    s.add_argument("--metadata", required=True, help="metadata JSONL or CSV")
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--drop", default="empty,vehicle")
    s.add_argument("--reject-threshold", type=float, default=0.05)
    s.add_argument("--min-conf", type=float, default=0.0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("balance", help="cap every class at N records")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cap", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_balance)

    s = sub.add_parser("split", help="stratified train/val/test split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--fractions", default="0.8,0.1,0.1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--assignments", help="JSON image_ref -> train|val|test, overrides the seeded split")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("partition", help="Head / Tail / Few-shot class partition")
    s.add_argument("--manifest")
    s.add_argument("--stats", help='JSON {"counts": [...]} instead of a manifest')
    s.add_argument("--labels")
    s.add_argument("--head-share", type=float, default=0.5)
    s.add_argument("--fewshot", type=int, default=20)
    s.add_argument("--out")
    s.add_argument("--figure", help="write the class-distribution plot here")
    s.set_defaults(func=cmd_partition)

    s = sub.add_parser("reduced-bias", help="cross-domain test set with overlap removed")
    s.add_argument("--source", required=True)
    s.add_argument("--source-labels", required=True)
    s.add_argument("--external", required=True)
    s.add_argument("--external-labels", required=True)
    s.add_argument("--shared", required=True, help="comma-separated shared class names")
    s.add_argument("--dt", type=float, default=3600.0, help="overlap window in seconds")
    s.add_argument("--overlap-keys", default="site,timestamp")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reduced_bias)

    s = sub.add_parser("train", help="train the desk-scale classifier")
    s.add_argument("--train", required=True)
    s.add_argument("--val", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--mode", choices=("vectors", "tiny-image"), default="vectors")
    s.add_argument("--image-root")
    s.add_argument("--loss", choices=("ce", "wce", "focal", "ldam"))
    s.add_argument("--gamma", type=float)
    s.add_argument("--weight-scheme", choices=("uniform", "inverse_freq", "effective_number"))
    s.add_argument("--beta", type=float)
    s.add_argument("--c-max", type=float)
    s.add_argument("--scale", type=float)
    s.add_argument("--drw-defer", type=int)
    s.add_argument("--optim", choices=("adam", "adamw"))
    s.add_argument("--lr", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--scheduler", dest="scheduler", action="store_true", default=None)
    s.add_argument("--no-scheduler", dest="scheduler", action="store_false")
    s.add_argument("--early-stop-patience", type=int, help="0 disables early stopping")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--hidden", type=int)
    s.add_argument("--figures", help="directory for training-curve plots")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--partition")
    s.add_argument("--labels", help="manifest label map (default: the checkpoint's)")
    s.add_argument("--label-map", help="JSON manifest name -> checkpoint name")
    s.add_argument("--mode", choices=("vectors", "tiny-image"), default="vectors")
    s.add_argument("--image-root")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="render an evaluation report")
    s.add_argument("--report", required=True)
    s.add_argument("--format", choices=("md", "markdown-table", "csv", "json", "latex"), default="md")
    s.add_argument("--baseline", help="baseline report; emits per-class deltas as CSV instead")
    s.add_argument("--out")
    s.add_argument("--figures", help="directory for report figures")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("collapse", help="prediction distribution for one class")
    s.add_argument("--report", required=True)
    s.add_argument("--class", dest="class_name", required=True)
    s.add_argument("--out")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_collapse)

    s = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--instances", type=int, default=100)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench-synthetic", help="synthetic long-tail benchmark, losses x scheduler")
    s.add_argument("--seeds")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_bench)
    return p


def _subparser(parser, command):
    return parser._subparsers._group_actions[0].choices[command]


def _defer_required(parser) -> None:
    """Required flags may also come from ``--config``; check after merging."""
    for name, sub in parser._subparsers._group_actions[0].choices.items():
        req = []
        for a in sub._actions:
            if a.required and a.option_strings:
                a.required = False
                req.append((a.dest, a.option_strings[0]))
        sub.set_defaults(_required=tuple(req))


def _config_defaults(sub, exp) -> dict:
    dests = {a.dest for a in sub._actions}
    out = {k: v for k, v in exp.paths.items() if k in dests}
    if "fractions" in dests:
        out["fractions"] = ",".join(repr(f) for f in exp.split.fractions)
        out["seed"] = exp.split.seed
    if "head_share" in dests:
        out["head_share"] = exp.head_share
        out["fewshot"] = exp.few_shot_threshold
    if "format" in dests:
        out["format"] = exp.report_formats[0]
    return out


def parse_args(argv):
    from .config import ExperimentConfig

    parser = build_parser()
    _defer_required(parser)
    args = parser.parse_args(argv)
    exp = None
    if args.config:
        exp = ExperimentConfig.load(args.config)
        sub = _subparser(parser, args.command)
        sub.set_defaults(**_config_defaults(sub, exp))
        args = parser.parse_args(argv)
    args.experiment = exp
    missing = [flag for dest, flag in args._required if getattr(args, dest) in (None, [])]
    if missing:
        raise ValidationError(f"{args.command}: missing required flag(s) {', '.join(missing)}")
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        _setup_logging(args)
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
