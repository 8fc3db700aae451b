"""Command line entry point: ``infer``, ``train``, ``eval``, ``experiment``, ``synth``.

Every subcommand accepts ``--config FILE`` with flat ``key=value`` lines;
flags given on the command line override the file. On failure a single
``error: <ErrorClass>: <message>`` line goes to stderr and the exit code is
nonzero.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import affinity, dataio, evaluate, experiments, hashfn, pursuit
from .experiments import ExperimentSpec

_TYPES = {"int": int, "float": float, "str": str, "bool": str}


def _add_config(p):
    p.add_argument("--config", help="flat key=value config file; flags override it")


def _resolve(args, defaults):
    """Merge defaults < config file < explicit flags."""
    values = dict(defaults)
    if getattr(args, "config", None):
        values.update(experiments.read_config(args.config))
    for k, v in vars(args).items():
        if k in ("config", "command", "func") or v is None:
            continue
        values[k] = v
    return values


def _bool(v):
    return experiments._coerce(v, bool) if isinstance(v, str) else bool(v)


def _load_dataset(features, labels, fmt):
    return dataio.load(features, labels or None, fmt)


def _item_rows(kind, ds, items):
    """Row of ``items`` assigned to each instance of ``ds``."""
    if kind == "class":
        row_of = {c: i for i, c in enumerate(items)}
        key = ds.class_ids()
    elif kind == "multilabel":
        row_of = {tuple(c): i for i, c in enumerate(items)}
        key = [tuple(sorted(s)) for s in ds.labels]
    else:
        if len(items) != ds.n:
            raise dataio.DataFormatError(
                f"codes cover {len(items)} items but the dataset has {ds.n} rows")
        return np.arange(ds.n)
    try:
        return np.array([row_of[k] for k in key], dtype=np.int64)
    except KeyError as exc:
        raise dataio.DataFormatError(f"instance label {exc.args[0]} has no target code") from None


def cmd_infer(args):
    """Affinity from a dataset, then pursuit; writes codes and the per-step trace."""
    v = _resolve(args, {"affinity": "class", "bits": 16, "mode": "regress",
                        "improve": "false", "fmt": "text", "labels": "",
                        "seed": 0, "out_dir": "."})
    ds = _load_dataset(v["features"], v["labels"], v["fmt"])
    bits = int(v["bits"])
    mode = affinity.parse_mode(v["mode"], bits)
    kind = v["affinity"]
    if kind == "class":
        am = affinity.from_classes(ds.class_ids(), mode)
    elif kind == "multilabel":
        am = affinity.from_multilabel(ds.labels, mode)[0]
    elif kind == "percentile":
        am = affinity.from_percentiles(ds.features, mode=mode)
    elif kind == "metric":
        am = affinity.from_metric(ds.features, mode)
    else:
        raise ValueError(f"affinity must be one of {experiments.AFFINITIES}")
    cfg = pursuit.PursuitConfig(bits=bits, mode=v["mode"], improve=_bool(v["improve"]),
                                seed=int(v["seed"]))
    codes, state = pursuit.run(am, cfg)
    os.makedirs(v["out_dir"], exist_ok=True)
    dataio.save_codes(codes, am.items, os.path.join(v["out_dir"], "codes.csv"))
    pursuit.write_trace(state, os.path.join(v["out_dir"], "trace.csv"))
    print(f"items={am.n} bits={codes.bits} stop={state.stop_reason} "
          f"rel_residual={state.relative_residual():.6g}")


def cmd_train(args):
    """Fit a hash function to the target codes assigned to each training row."""
    d = {f.name: f.default for f in dataclasses.fields(hashfn.TrainConfig)}
    d.update({"affinity": "class", "arch": "linear", "hidden": 256, "fmt": "text",
              "labels": "", "out": "model.bin"})
    v = _resolve(args, d)
    ds = _load_dataset(v["features"], v["labels"], v["fmt"])
    codes, items = dataio.load_codes(v["codes"])
    assignment = hashfn.TargetAssignment(codes, _item_rows(v["affinity"], ds, items))
    cfg = hashfn.TrainConfig(int(v["epochs"]), int(v["batch_size"]),
                             float(v["learning_rate"]), float(v["momentum"]),
                             int(v["seed"]), float(v["l2"]))
    model, curve = hashfn.train(ds.features, assignment, cfg, v["arch"], int(v["hidden"]))
    hashfn.save_model(model, v["out"], dataclasses.asdict(cfg), curve[-1] if curve else None)
    ratio = hashfn.mismatch_ratio(model, ds.features, assignment)
    final = f"{curve[-1]:.6g}" if curve else "nan"
    print(f"final_loss={final} mismatch_ratio={ratio:.6g}")


def cmd_eval(args):
    """Encode query and database rows with a model and report retrieval metrics."""
    v = _resolve(args, {"metric": "map", "cutoff": 0, "ap_norm": "min", "gain": "linear",
                        "fmt": "text", "codes": "", "out": "metrics.csv"})
    model = hashfn.load_model(v["model"])
    q = _load_dataset(v["query_features"], v["query_labels"], v["fmt"])
    db = _load_dataset(v["db_features"], v["db_labels"], v["fmt"])
    if v["metric"] == "map":
        rel = evaluate.class_relevance(q.class_ids(), db.class_ids())
    else:
        rel = evaluate.shared_label_counts(q.labels, db.labels)
    alpha = dataio.load_codes(v["codes"])[0].alpha if v["codes"] else None
    cutoff = int(v["cutoff"]) or None
    task = evaluate.RankingTask(hashfn.encode(model, q.features),
                                hashfn.encode(model, db.features), rel, alpha, cutoff)
    if v["metric"] == "map":
        res = evaluate.mean_average_precision(task, v["ap_norm"])
    elif v["metric"] == "ndcg":
        res = evaluate.ndcg(task, v["gain"])
    else:
        raise ValueError("metric must be map or ndcg")
    evaluate.write_metrics([res], v["out"])
    print(f"{res.metric}={res.value:.6f} queries={res.n_queries} skipped={res.n_skipped}")


def cmd_experiment(args):
    values = _resolve(args, {})
    values["scenario"] = args.scenario
    spec = ExperimentSpec.from_mapping(values)
    out = experiments.run(spec)
    for k, val in out["summary"].items():
        print(f"{k}={experiments._fmt(val)}")


def cmd_synth(args):
    v = _resolve(args, {"kind": "multiclass", "n_classes": 10, "per_class": 100,
                        "n": 1000, "n_labels": 8, "dim": 32, "sep": 4.0, "fmt": "text"})
    if v["kind"] == "multiclass":
        ds = dataio.synth_multiclass(int(v["n_classes"]), int(v["per_class"]),
                                     int(v["dim"]), float(v["sep"]), int(v["seed"]))
    else:
        ds = dataio.synth_multilabel(int(v["n"]), int(v["n_labels"]), int(v["dim"]),
                                     sep=float(v["sep"]), seed=int(v["seed"]))
    dataio.save(ds, v["features"], v["labels"], v["fmt"])
    print(f"wrote {ds.n} rows of dim {ds.dim}")


def build_parser():
    parser = argparse.ArgumentParser(prog="bmphash", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="infer target codes from an affinity")
    _add_config(p)
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--fmt", choices=dataio.FORMATS)
    p.add_argument("--affinity", choices=experiments.AFFINITIES)
    p.add_argument("--bits", type=int)
    p.add_argument("--mode", choices=pursuit.MODES)
    p.add_argument("--improve", choices=("true", "false"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train a hash function on target codes")
    _add_config(p)
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--fmt", choices=dataio.FORMATS)
    p.add_argument("--codes")
    p.add_argument("--affinity", choices=experiments.AFFINITIES)
    p.add_argument("--arch", choices=hashfn.ARCHS)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model by Hamming ranking")
    _add_config(p)
    p.add_argument("--model")
    p.add_argument("--query-features", dest="query_features")
    p.add_argument("--query-labels", dest="query_labels")
    p.add_argument("--db-features", dest="db_features")
    p.add_argument("--db-labels", dest="db_labels")
    p.add_argument("--fmt", choices=dataio.FORMATS)
    p.add_argument("--codes", help="codes file whose alpha row weights the distance")
    p.add_argument("--metric", choices=("map", "ndcg"))
    p.add_argument("--cutoff", type=int)
    p.add_argument("--ap-norm", dest="ap_norm", choices=evaluate.AP_NORMS)
    p.add_argument("--gain", choices=evaluate.GAINS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a reproducible scenario")
    p.add_argument("scenario", choices=experiments.SCENARIOS)
    _add_config(p)
    for f in dataclasses.fields(ExperimentSpec):
        if f.name == "scenario":
            continue
        flag = "--" + f.name.replace("_", "-")
        typ = _TYPES.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
        p.add_argument(flag, dest=f.name, type=typ, required=f.name == "seed",
                       help=f"default {f.default!r}")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_config(p)
    p.add_argument("--kind", choices=("multiclass", "multilabel"))
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--n-labels", dest="n_labels", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--sep", type=float)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--fmt", choices=dataio.FORMATS)
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.set_defaults(func=cmd_synth)
    return parser


_REQUIRED = {
    "infer": ("features",),
    "train": ("features", "codes"),
    "eval": ("model", "query_features", "query_labels", "db_features", "db_labels"),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        for name in _REQUIRED.get(args.command, ()):
            if getattr(args, name) is None and not (
                args.config and name in experiments.read_config(args.config)
            ):
                raise ValueError(f"missing required setting {name!r}")
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - single error line is the contract
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
