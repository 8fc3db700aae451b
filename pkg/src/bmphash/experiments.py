"""Desk-scale experiment scenarios and their CSV reports.

Three scenarios are available:

``class_vs_instance``
    Codes inferred on the k x k class affinity versus the expanded instance
    affinity: residual, mAP and inference time against code length.
``constant_vs_regress``
    Residual curves of the two step-size schemes on the same target.
``pipeline``
    affinity -> inference -> hash function training -> retrieval metrics.

Every CSV is a deterministic function of the settings and seed. Wall-clock
measurements go to ``timing.log`` instead, which is not reproducible.
"""

import csv
import dataclasses
import os
from dataclasses import dataclass, fields

import numpy as np

from . import affinity, dataio, evaluate, hashfn, pursuit
from .affinity import Mode

SCENARIOS = ("class_vs_instance", "constant_vs_regress", "pipeline")
AFFINITIES = ("class", "multilabel", "percentile", "metric")
DATASETS = ("multiclass", "multilabel", "files")


@dataclass
class ExperimentSpec:
    scenario: str = "pipeline"
    seed: int = 0
    out_dir: str = "out"
    # dataset source
    dataset: str = "multiclass"
    n_classes: int = 10
    per_class: int = 100
    dim: int = 32
    sep: float = 4.0
    n_instances: int = 1000
    n_labels: int = 8
    max_labels: int = 3
    features: str = ""
    labels: str = ""
    fmt: str = "text"
    # splits
    train_per_class: int = 50
    query_per_class: int = 10
    n_train: int = 300
    n_query: int = 100
    # inference
    affinity: str = "class"
    bits: int = 16
    bit_grid: str = ""
    mode: str = "regress"
    improve: bool = False
    selection: str = "auto"
    eig_tol: float = 1e-10
    ridge: float = 1e-10
    stop_tol: float = 1e-8
    n_items: int = 10
    # hash function
    arch: str = "linear"
    hidden: int = 256
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2: float = 1e-4
    # evaluation
    cutoff: int = 0
    ap_norm: str = "min"
    gain: str = "linear"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.affinity not in AFFINITIES:
            raise ValueError(f"affinity must be one of {AFFINITIES}")
        if self.dataset == "files" and not os.path.exists(self.features):
            raise FileNotFoundError(f"features file {self.features!r} not found")
        if self.labels and not os.path.exists(self.labels):
            raise FileNotFoundError(f"labels file {self.labels!r} not found")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")

    @classmethod
    def from_mapping(cls, values):
        """Build from string or typed values, coercing each to its field type."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, known[key].type)
        return cls(**kwargs)

    def as_items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def pursuit_config(self, bits=None, mode=None):
        return pursuit.PursuitConfig(
            bits=bits or self.bits, mode=mode or self.mode, improve=self.improve,
            eig_tol=self.eig_tol, ridge=self.ridge, stop_tol=self.stop_tol,
            seed=self.seed, selection=self.selection)

    def train_config(self):
        return hashfn.TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                                  self.momentum, self.seed, self.l2)

    def grid(self):
        if self.bit_grid:
            return sorted({int(b) for b in self.bit_grid.split(",") if b.strip()})
        return list(range(1, self.bits + 1))


def _coerce(raw, typ):
    if not isinstance(raw, str):
        return raw
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw


def read_config(path):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_timing(path, header, rows):
    """Wall-clock table, tab separated; kept apart from the reproducible CSVs."""
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def write_summary(path, spec, results):
    lines = ["# resolved configuration"]
    lines += [f"{k}={v}" for k, v in spec.as_items()]
    lines.append("# results")
    lines += [f"{k}={_fmt(v)}" for k, v in results.items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def make_dataset(spec):
    if spec.dataset == "multiclass":
        return dataio.synth_multiclass(spec.n_classes, spec.per_class, spec.dim,
                                       spec.sep, spec.seed)
    if spec.dataset == "multilabel":
        return dataio.synth_multilabel(spec.n_instances, spec.n_labels, spec.dim,
                                       spec.max_labels, spec.sep, spec.seed)
    return dataio.load(spec.features, spec.labels or None, spec.fmt)


def affinity_mode(spec, mode=None, bits=None):
    mode = mode or spec.mode
    return Mode.regress() if mode == "regress" else Mode.constant(bits or spec.bits)


def codes_at(codes, state, bits):
    """Codes and weights as they stood after ``bits`` iterations of one run."""
    t = min(bits, len(state.trace))
    if t == 0:
        return codes
    return codes.truncate(t, state.trace[t - 1].alpha)


def _alpha_for(codes, mode):
    return codes.alpha if mode == "regress" else None


def run_class_vs_instance(spec):
    """Class-level versus instance-level inference on a multi-class dataset."""
    ds = make_dataset(spec)
    ds = dataio.split(ds, 0, spec.query_per_class, spec.seed)
    y = ds.class_ids()
    mode = affinity_mode(spec)
    base = affinity.from_classes(y, mode)
    row_of = {c: i for i, c in enumerate(base.items)}
    assign = np.array([row_of[c] for c in y])
    inst = affinity.from_instances(base, assign)

    cfg = spec.pursuit_config()
    class_codes, class_state = pursuit.run(base, cfg)
    inst_codes, inst_state = pursuit.run(inst, cfg)

    q, db = ds.split["query"], ds.split["db"]
    rel = evaluate.class_relevance(y[q], y[db])
    rows_map, rows_time = [], []
    for b in spec.grid():
        cc = codes_at(class_codes, class_state, b)
        ic = codes_at(inst_codes, inst_state, b)
        per_inst = cc.v[assign]
        m_class = evaluate.mean_average_precision(evaluate.RankingTask(
            per_inst[q], per_inst[db], rel, _alpha_for(cc, spec.mode)), spec.ap_norm)
        m_inst = evaluate.mean_average_precision(evaluate.RankingTask(
            ic.v[q], ic.v[db], rel, _alpha_for(ic, spec.mode)), spec.ap_norm)
        rows_map.append((b, m_class.value, m_inst.value))
        rows_time.append((b, _elapsed_at(class_state, b), _elapsed_at(inst_state, b)))

    rows_res = []
    for t in range(1, spec.bits + 1):
        rows_res.append((t, _rel_residual_at(class_state, t),
                         _rel_residual_at(inst_state, t)))

    os.makedirs(spec.out_dir, exist_ok=True)
    write_csv(os.path.join(spec.out_dir, "residual.csv"),
              ["t", "class_rel_residual", "instance_rel_residual"], rows_res)
    write_csv(os.path.join(spec.out_dir, "map.csv"),
              ["bits", "class_map", "instance_map"], rows_map)
    write_timing(os.path.join(spec.out_dir, "timing.log"),
                 ["bits", "class_ms", "instance_ms"], rows_time)
    results = {
        "class_items": base.n,
        "instance_items": inst.n,
        "class_bits_used": len(class_state.trace),
        "instance_bits_used": len(inst_state.trace),
        "class_stop": class_state.stop_reason,
        "instance_stop": inst_state.stop_reason,
        "class_final_rel_residual": class_state.relative_residual(),
        "instance_final_rel_residual": inst_state.relative_residual(),
    }
    for b, mc, mi in rows_map:
        results[f"map_gap@{b}"] = mc - mi
    write_summary(os.path.join(spec.out_dir, "summary.txt"), spec, results)
    return {"residual": rows_res, "map": rows_map, "timing": rows_time,
            "summary": results}


def _rel_residual_at(state, t):
    if state.r_norm == 0.0:
        return 0.0
    if not state.trace:
        return 1.0
    rec = state.trace[min(t, len(state.trace)) - 1]
    return rec.residual_fro / state.r_norm


def _elapsed_at(state, bits):
    if not state.trace:
        return 0.0
    return state.trace[min(bits, len(state.trace)) - 1].elapsed_ms


def sample_items(spec, ds, rng):
    """Regress-mode affinity over ``spec.n_items`` items drawn from the dataset."""
    if spec.affinity == "class":
        classes = sorted(set(ds.class_ids().tolist()))
        k = min(spec.n_items, len(classes))
        pick = sorted(rng.choice(classes, size=k, replace=False).tolist())
        return affinity.from_classes(pick)
    if spec.affinity == "multilabel":
        combos = sorted({tuple(sorted(s)) for s in ds.labels if s})
        k = min(spec.n_items, len(combos))
        pick = [combos[i] for i in sorted(rng.choice(len(combos), size=k, replace=False))]
        return affinity.from_multilabel(pick)[0]
    idx = np.sort(rng.choice(ds.n, size=min(spec.n_items, ds.n), replace=False))
    if spec.affinity == "percentile":
        return affinity.from_percentiles(ds.features[idx])
    return affinity.from_metric(ds.features[idx])


def run_constant_vs_regress(spec):
    """Residual-norm curves of constant and regressed step sizes on one target.

    The constant run fits ``b * R`` (``b = spec.bits``); the regress run fits
    ``R``. Curves are reported both absolute and relative to the target norm;
    the constant off-diagonal columns drop the diagonal, which constant codes
    can never fit.
    """
    ds = make_dataset(spec)
    rng = np.random.default_rng(spec.seed)
    base = sample_items(spec, ds, rng)
    r_reg = base.r
    r_con = base.r * spec.bits
    _, st_con = pursuit.run(r_con, spec.pursuit_config(mode="constant"))
    _, st_reg = pursuit.run(r_reg, spec.pursuit_config(mode="regress"))

    def curve(state, r, t, offdiag):
        key = "residual_fro_offdiag" if offdiag else "residual_fro"
        ref = pursuit.offdiag_norm(r) if offdiag else float(np.linalg.norm(r))
        if not state.trace:
            val = ref
        else:
            val = getattr(state.trace[min(t, len(state.trace)) - 1], key)
        return val, (val / ref if ref else 0.0)

    rows = []
    for t in range(1, spec.bits + 1):
        c, c_rel = curve(st_con, r_con, t, False)
        co, co_rel = curve(st_con, r_con, t, True)
        g, g_rel = curve(st_reg, r_reg, t, False)
        go, go_rel = curve(st_reg, r_reg, t, True)
        rows.append((t, c, co, g, go, c_rel, co_rel, g_rel, go_rel))

    os.makedirs(spec.out_dir, exist_ok=True)
    write_csv(os.path.join(spec.out_dir, "residual.csv"),
              ["t", "constant_fro", "constant_fro_offdiag", "regress_fro",
               "regress_fro_offdiag", "constant_rel", "constant_rel_offdiag",
               "regress_rel", "regress_rel_offdiag"], rows)
    results = {
        "items": base.n,
        "constant_final_rel_offdiag": rows[-1][6],
        "regress_final_rel": rows[-1][7],
        "regress_bits_used": len(st_reg.trace),
        "regress_stop": st_reg.stop_reason,
    }
    write_summary(os.path.join(spec.out_dir, "summary.txt"), spec, results)
    return {"residual": rows, "summary": results}


def _pipeline_split(spec, ds):
    if spec.affinity == "class":
        return dataio.split(ds, spec.train_per_class, spec.query_per_class, spec.seed)
    return dataio.split_random(ds, spec.n_train, spec.n_query, spec.seed)


def build_targets(spec, ds):
    """Item-level affinity for the training split and each instance's item row."""
    train = ds.split["train"]
    mode = affinity_mode(spec)
    if spec.affinity == "class":
        y = ds.class_ids(train)
        am = affinity.from_classes(y, mode)
        row_of = {c: i for i, c in enumerate(am.items)}
        return am, np.array([row_of[c] for c in y])
    if spec.affinity == "multilabel":
        sets = [ds.labels[i] for i in train]
        am, index = affinity.from_multilabel(sets, mode)
        return am, np.array([index[tuple(sorted(s))] for s in sets])
    x = ds.features[train]
    if spec.affinity == "percentile":
        am = affinity.from_percentiles(x, mode=mode)
    else:
        am = affinity.from_metric(x, mode)
    return am, np.arange(train.size)


def pipeline_relevance(spec, ds, am):
    q, db = ds.split["query"], ds.split["db"]
    if spec.affinity == "class":
        y = ds.class_ids()
        return evaluate.class_relevance(y[q], y[db]), "map"
    if spec.affinity == "multilabel":
        qs = [ds.labels[i] for i in q]
        ds_ = [ds.labels[i] for i in db]
        return evaluate.shared_label_counts(qs, ds_), "ndcg"
    d = affinity.cdist_l2(ds.features[q], ds.features[db])
    if spec.affinity == "percentile":
        return affinity.level_of(d, am.thresholds).astype(np.float64), "ndcg"
    # metric neighborhoods: items within the 2nd distance percentile are relevant
    thr = affinity.percentile_thresholds(ds.features[ds.split["train"]], ((2.0, 1),))
    return affinity.level_of(d, thr).astype(np.float64), "map"


def _metrics(spec, task, kind):
    out = []
    if kind == "map" or spec.affinity == "multilabel":
        binary = dataclasses.replace(task, relevance=(task.relevance > 0).astype(float))
        out.append(evaluate.mean_average_precision(binary, spec.ap_norm))
    if kind == "ndcg":
        out.append(evaluate.ndcg(task, spec.gain))
    return out


def run_pipeline(spec):
    """End-to-end: affinity, inference, target assignment, training, evaluation."""
    ds = _pipeline_split(spec, make_dataset(spec))
    am, rows = build_targets(spec, ds)
    codes, state = pursuit.run(am, spec.pursuit_config())
    assignment = hashfn.TargetAssignment(codes, rows)
    x_train = ds.features[ds.split["train"]]
    model, curve = hashfn.train(x_train, assignment, spec.train_config(),
                                spec.arch, spec.hidden)
    mismatch = hashfn.mismatch_ratio(model, x_train, assignment)

    rel, kind = pipeline_relevance(spec, ds, am)
    q_codes = hashfn.encode(model, ds.features[ds.split["query"]])
    db_codes = hashfn.encode(model, ds.features[ds.split["db"]])
    cutoff = spec.cutoff or None
    task = evaluate.RankingTask(q_codes, db_codes, rel, _alpha_for(codes, spec.mode), cutoff)
    results = _metrics(spec, task, kind)

    perm = np.random.default_rng(spec.seed).permutation(rel.shape[1])
    base_task = dataclasses.replace(task, relevance=rel[:, perm])
    baseline = _metrics(spec, base_task, kind)
    for r in baseline:
        r.metric += "_permuted_baseline"

    out = spec.out_dir
    os.makedirs(out, exist_ok=True)
    dataio.save_codes(codes, am.items, os.path.join(out, "codes.csv"))
    hashfn.save_model(model, os.path.join(out, "model.bin"),
                      dataclasses.asdict(spec.train_config()),
                      curve[-1] if curve else None)
    evaluate.write_metrics(results + baseline, os.path.join(out, "metrics.csv"))
    write_csv(os.path.join(out, "loss.csv"), ["epoch", "mean_loss"],
              [(e + 1, v) for e, v in enumerate(curve)])
    summary = {
        "items": am.n,
        "train_instances": int(ds.split["train"].size),
        "bits_used": codes.bits,
        "stop_reason": state.stop_reason,
        "final_rel_residual": state.relative_residual(),
        "train_mismatch_ratio": mismatch,
    }
    for r in results + baseline:
        summary[r.metric] = r.value
    write_summary(os.path.join(out, "summary.txt"), spec, summary)
    return {"metrics": results, "baseline": baseline, "summary": summary,
            "codes": codes, "model": model, "loss": curve}


RUNNERS = {
    "class_vs_instance": run_class_vs_instance,
    "constant_vs_regress": run_constant_vs_regress,
    "pipeline": run_pipeline,
}


def run(spec):
    return RUNNERS[spec.scenario](spec)
