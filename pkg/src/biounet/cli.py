"""Command-line entry point: ``biounet <command> ...``.

Exit codes: 0 success, 2 I/O failure, 3 invalid configuration or
arguments, 4 numeric divergence. Every command that writes files also
writes a JSON manifest listing them (paths relative to the output
directory).
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from biounet import __version__, cam, imageio
from biounet import checkpoint as ckpt_io
from biounet import data as data_mod
from biounet import pipeline
from biounet.errors import BioUNetError, ConfigError, ContractError, IngestionError, StateError

logger = logging.getLogger("biounet")

EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4
MANIFEST_NAME = "run_manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("BIOUNET_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"BIOUNET_SEED must be an integer, got {env!r}", key_path="env.BIOUNET_SEED") from exc


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _makedirs(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise IngestionError(f"{path} is not writable")


class Manifest:
    """A run manifest, rewritten after every artifact so it is never stale."""

    def __init__(self, out_dir, command, **fields):
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, MANIFEST_NAME)
        self.doc = {"command": command, "version": __version__, "status": "started", "files": [], **fields}
        self.save()

    def add(self, *paths):
        for p in paths:
            rel = os.path.relpath(p, self.out_dir)
            if rel not in self.doc["files"]:
                self.doc["files"].append(rel)
        self.save()

    def save(self):
        _write_json(self.path, self.doc)


def _rates(text):
    try:
        rates = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("rates must be five comma-separated numbers") from exc
    if len(rates) != len(data_mod.ATTRIBUTES):
        raise argparse.ArgumentTypeError("rates must be five comma-separated numbers")
    return rates


# -- gen-data ------------------------------------------------------------------------

def presence_table(ds):
    counts = ds.presence.sum(axis=0)
    lines = [f"{'attribute':<18}{'nonempty':>10}{'empty':>8}"]
    for name, k in zip(data_mod.ATTRIBUTES, counts):
        lines.append(f"{name:<18}{int(k):>10}{len(ds) - int(k):>8}")
    return "\n".join(lines)


def cmd_gen_data(args):
    seed = _seed(args.seed)
    _makedirs(args.out)
    ds = data_mod.gen_synthetic(args.n, args.size, seed, args.rates, labeled=not args.unlabeled)
    if not args.unlabeled:
        ds.stats = data_mod.compute_stats(ds)
    data_mod.export_dataset(ds, args.out)
    if not args.unlabeled:
        print(presence_table(ds))
        print(f"melanoma (diagnosis = 1): {int(ds.labels.sum())} of {len(ds)}")
    else:
        print(f"wrote {len(ds)} unlabeled images to {args.out}")
    return 0


# -- train ---------------------------------------------------------------------------

def _split_hash(ds):
    h = hashlib.sha256()
    for sid, sp in zip(ds.ids, ds.split if ds.split is not None else [""] * len(ds)):
        h.update(f"{sid}:{sp}\n".encode())
    return h.hexdigest()


def _load_config(args):
    overrides = {
        "seed": _seed(args.seed),
        "repeat_K": args.repeat_k,
        "multitask_mode": args.mode,
        "epochs": args.epochs,
        "cam_method": args.cam_method,
    }
    if args.no_clr:
        overrides["use_clr"] = False
    if args.no_seg:
        overrides["use_seg"] = False
    if args.config:
        try:
            return pipeline.RunConfig.load(args.config, **overrides)
        except OSError as exc:
            raise IngestionError(f"cannot read config {args.config}: {exc}") from exc
    return pipeline.RunConfig.from_dict({}, **overrides)


def _attributes(text):
    if text == "all":
        return list(range(len(data_mod.ATTRIBUTES)))
    try:
        j = int(text)
    except ValueError:
        if text in data_mod.ATTRIBUTES:
            return [data_mod.ATTRIBUTES.index(text)]
        raise ConfigError(f"unknown attribute {text!r}", key_path="args.attribute") from None
    if j not in range(len(data_mod.ATTRIBUTES)):
        raise ConfigError("attribute must be in 0..4 or 'all'", key_path="args.attribute")
    return [j]


def checkpoint_name(j):
    return f"attr{j}_{data_mod.ATTRIBUTES[j]}.ckpt"


def cmd_train(args):
    config = _load_config(args)
    attrs = _attributes(args.attribute)
    data_a = data_mod.import_dataset(args.data)
    data_b = data_mod.import_dataset(args.unlabeled) if args.unlabeled else None
    if data_a.stats is None:
        data_a.stats = data_mod.compute_stats(data_a)
    _makedirs(os.path.join(args.out, "checkpoints"))
    man = Manifest(args.out, "train", config=config.to_dict(), attributes=attrs,
                   seeds={"run": config.seed},
                   data={"labeled": {"n": len(data_a), "split_sha256": _split_hash(data_a)},
                         "unlabeled": None if data_b is None else {"n": len(data_b)}},
                   normalization=data_a.stats, runs={})
    history = []
    checkpoints = []
    for j in attrs:
        cfg = config.replace(attribute=j)
        try:
            res = pipeline.train_attribute(cfg, data_a, data_b)
        except pipeline.DivergenceError as exc:
            if exc.checkpoint is not None:
                path = os.path.join(args.out, "checkpoints", checkpoint_name(j) + ".last_good")
                ckpt_io.save(exc.checkpoint, path)
                man.add(path)
            man.doc["status"] = "diverged"
            man.doc["error"] = str(exc)
            man.save()
            raise
        path = os.path.join(args.out, "checkpoints", checkpoint_name(j))
        ckpt_io.save(res.best, path)
        checkpoints.append(res.best)
        history.extend(res.metrics.records)
        man.doc["runs"][data_mod.ATTRIBUTES[j]] = {
            "checkpoint": os.path.relpath(path, args.out),
            "checkpoint_sha256": res.best.digest(),
            "selected_epoch": res.best.meta["epoch"],
            "selection_metric": res.best.meta["selection_metric"],
            "selection_definition": res.best.meta["selection_definition"],
            "epochs": res.metrics.records,
            "stopped_early": res.stopped_early,
            "steps": _step_counts(res.steps),
        }
        man.add(path)
        _write_history(args.out, history, man)
        print(f"{data_mod.ATTRIBUTES[j]}: best epoch {res.best.meta['epoch']} "
              f"val AUC {_fmt(res.best.meta['selection_metric'])}")
    if len(attrs) == len(data_mod.ATTRIBUTES) and config.multitask_mode != "diagnosis":
        fusion = pipeline.fuse_and_diagnose(checkpoints, data_a)
        path = os.path.join(args.out, "fusion.json")
        _write_json(path, _fusion_doc(fusion))
        man.doc["fusion"] = {"test_accuracy": fusion.test.accuracy, "test_auc": fusion.test.auc,
                             "l2": fusion.l2}
        man.add(path)
        print(f"fused diagnosis: accuracy {fusion.test.accuracy:.4f} AUC {_fmt(fusion.test.auc)}")
    man.doc["status"] = "complete"
    man.save()
    return 0


def _step_counts(steps):
    counts = {}
    for s in steps:
        counts[s.kind] = counts.get(s.kind, 0) + 1
    return counts


def _write_history(out_dir, history, man):
    log = pipeline.losses.MetricLog()
    for rec in history:
        log.append(**rec)
    csv_path = os.path.join(out_dir, "metrics.csv")
    json_path = os.path.join(out_dir, "metrics.json")
    log.to_csv(csv_path)
    log.to_json(json_path)
    man.add(csv_path, json_path)


def _fusion_doc(fusion):
    return {
        "l2": fusion.l2,
        "val_auc": fusion.val_auc,
        "test_accuracy": fusion.test.accuracy,
        "test_auc": fusion.test.auc,
        "single_encoder_test_auc": fusion.single_auc,
        "weights": fusion.model.weights,
        "bias": fusion.model.bias,
        "feature_mean": fusion.model.mean,
        "feature_std": fusion.model.std,
    }


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


# -- explain -------------------------------------------------------------------------

def cmd_explain(args):
    j = _attributes(str(args.attribute))[0]
    if args.method not in cam.METHODS:
        raise ConfigError(f"method must be one of {list(cam.METHODS)}", key_path="args.method")
    ck = ckpt_io.load(args.checkpoint)
    model, cfg = pipeline.model_from_checkpoint(ck)
    raw = imageio.read_ppm(args.image).astype(np.float64).transpose(2, 0, 1) / 255.0
    x = data_mod.apply_stats(raw[None], ck.meta["stats"])
    explainer = pipeline.Explainer(ck, cfg)
    stack = explainer.stacks(x, pipeline.active_column(cfg.multitask_mode, j), args.method)
    mask = model.segment(stack.tensor(), training=False).data[0, 0]
    _makedirs(args.out)
    sid = os.path.splitext(os.path.basename(args.image))[0]
    stack.target = j
    man = Manifest(args.out, "explain", checkpoint_sha256=ck.digest(), attribute=j, method=args.method,
                   degenerate_blocks=[k + 1 for k in np.flatnonzero(stack.degenerate[0])])
    man.add(*cam.export_stack(stack, [sid], args.out))
    seg_path = os.path.join(args.out, f"{sid}_attr{j}_seg.pgm")
    imageio.write_pgm(seg_path, mask)
    man.add(seg_path)
    if args.montage:
        tiles = [imageio.to_uint8(raw.transpose(1, 2, 0)),
                 imageio.overlay(raw, stack.final[0]),
                 imageio.overlay(raw, mask)]
        path = os.path.join(args.out, f"{sid}_attr{j}_montage.ppm")
        imageio.write_ppm(path, imageio.montage(tiles))
        man.add(path)
    man.doc["status"] = "complete"
    man.save()
    print(f"wrote {len(man.doc['files'])} files to {args.out}")
    return 0


# -- eval / fuse ---------------------------------------------------------------------

def load_checkpoint_dir(path):
    """``{attribute: Checkpoint}`` for every checkpoint file in ``path`` (or a run directory)."""
    folder = os.path.join(path, "checkpoints") if os.path.isdir(os.path.join(path, "checkpoints")) else path
    if not os.path.isdir(folder):
        raise IngestionError(f"checkpoint directory {path} does not exist")
    out = {}
    for name in sorted(os.listdir(folder)):
        if name.endswith(".ckpt"):
            ck = ckpt_io.load(os.path.join(folder, name))
            out[int(ck.meta["attribute"])] = ck
    if not out:
        raise IngestionError(f"no checkpoints found in {folder}")
    return out


def cmd_eval(args):
    ckpts = load_checkpoint_dir(args.checkpoints)
    baseline = load_checkpoint_dir(args.baseline_checkpoints) if args.baseline_checkpoints else ckpts
    ds = data_mod.import_dataset(args.dataset)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in pipeline.LOCALIZATION_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {list(pipeline.LOCALIZATION_METHODS)}",
                              key_path="args.methods")
    scale = 100.0 if args.percent else 1.0
    rows, skipped = [], []
    for m in methods:
        source = ckpts if m == "bio_unet" else baseline
        row = {"method": m}
        for j, name in enumerate(data_mod.ATTRIBUTES):
            if j not in source:
                row[name] = None
                continue
            try:
                res = pipeline.evaluate_localization(source[j], ds, j, m, split=args.split)
            except StateError as exc:
                skipped.append({"method": m, "attribute": name, "reason": str(exc)})
                row[name] = None
                continue
            if res.empty:
                skipped.append({"method": m, "attribute": name, "reason": f"no nonempty {args.split} masks"})
            row[name] = None if res.empty else res.mean_cdc * scale
        rows.append(row)
    doc = {"split": args.split, "percent": bool(args.percent), "localization_cdc": rows, "skipped": skipped}
    if len(ckpts) == len(data_mod.ATTRIBUTES):
        fusion = pipeline.fuse_and_diagnose([ckpts[j] for j in range(len(data_mod.ATTRIBUTES))], ds)
        doc["diagnosis"] = {"accuracy": fusion.test.accuracy, "auc": fusion.test.auc}
    _makedirs(args.out)
    man = Manifest(args.out, "eval", methods=methods)
    csv_path = os.path.join(args.out, "localization.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", *data_mod.ATTRIBUTES], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                             for k, v in row.items()})
    json_path = os.path.join(args.out, "evaluation.json")
    _write_json(json_path, doc)
    man.add(csv_path, json_path)
    man.doc["status"] = "complete"
    man.save()
    print(_table(rows))
    if "diagnosis" in doc:
        d = doc["diagnosis"]
        print(f"diagnosis: accuracy {d['accuracy']:.4f} AUC {_fmt(d['auc'])}")
    return 0


def _table(rows):
    head = f"{'method':<12}" + "".join(f"{n[:10]:>12}" for n in data_mod.ATTRIBUTES)
    lines = [head]
    for row in rows:
        cells = "".join(f"{'-':>12}" if row[n] is None else f"{row[n]:>12.4f}" for n in data_mod.ATTRIBUTES)
        lines.append(f"{row['method']:<12}{cells}")
    return "\n".join(lines)


def cmd_fuse(args):
    ckpts = load_checkpoint_dir(args.checkpoints)
    missing = [j for j in range(len(data_mod.ATTRIBUTES)) if j not in ckpts]
    if missing:
        raise ContractError(f"fusion needs all five attribute checkpoints; missing {missing}")
    ds = data_mod.import_dataset(args.dataset)
    fusion = pipeline.fuse_and_diagnose([ckpts[j] for j in range(len(data_mod.ATTRIBUTES))], ds)
    _makedirs(args.out)
    man = Manifest(args.out, "fuse")
    path = os.path.join(args.out, "fusion.json")
    _write_json(path, _fusion_doc(fusion))
    man.add(path)
    man.doc["status"] = "complete"
    man.save()
    print(f"fused diagnosis: accuracy {fusion.test.accuracy:.4f} AUC {_fmt(fusion.test.auc)}")
    return 0


# -- report --------------------------------------------------------------------------

def cmd_report(args):
    path = os.path.join(args.run, MANIFEST_NAME)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    print(f"command: {doc.get('command')}  status: {doc.get('status')}")
    for name, run in sorted(doc.get("runs", {}).items()):
        print(f"{name:<18} best epoch {run['selected_epoch']:>3}  val AUC {_fmt(run['selection_metric'])}  "
              f"steps {run['steps']}")
    if "fusion" in doc:
        f = doc["fusion"]
        print(f"fusion: test accuracy {f['test_accuracy']:.4f}  test AUC {_fmt(f['test_auc'])}")
    print(f"{len(doc.get('files', []))} files listed")
    return 0


# -- entry point ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="biounet", description="Explainable melanoma indicator localization.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a seeded synthetic dataset")
    g.add_argument("--n", type=int, default=800)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int)
    g.add_argument("--rates", type=_rates, default=list(data_mod.DEFAULT_RATES))
    g.add_argument("--unlabeled", action="store_true", help="image-only dataset for the contrastive branch")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train attribute models (and fuse them for 'all')")
    t.add_argument("--config")
    t.add_argument("--attribute", default="all")
    t.add_argument("--data", required=True, help="labeled dataset directory")
    t.add_argument("--unlabeled", help="unlabeled dataset directory")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--repeat-k", type=int)
    t.add_argument("--mode", choices=sorted(pipeline.HEAD_WIDTH))
    t.add_argument("--cam-method", choices=cam.METHODS)
    t.add_argument("--no-clr", action="store_true")
    t.add_argument("--no-seg", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="heatmaps and mask for one image")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--image", required=True)
    e.add_argument("--attribute", type=int, required=True)
    e.add_argument("--method", default="gradcam")
    e.add_argument("--out", required=True)
    e.add_argument("--montage", action="store_true")
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("eval", help="localization and diagnosis metrics")
    v.add_argument("--checkpoints", required=True)
    v.add_argument("--baseline-checkpoints", help="classifier checkpoints for the CAM rows")
    v.add_argument("--dataset", required=True)
    v.add_argument("--methods", default="bio_unet,gradcam,gradcampp,layercam")
    v.add_argument("--split", default="test", choices=("train", "val", "test"))
    v.add_argument("--percent", action="store_true")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_eval)

    f = sub.add_parser("fuse", help="logistic-regression fusion of five encoders")
    f.add_argument("--checkpoints", required=True)
    f.add_argument("--dataset", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    r = sub.add_parser("report", help="summarize a training run directory")
    r.add_argument("--run", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except pipeline.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BioUNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC) else EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
