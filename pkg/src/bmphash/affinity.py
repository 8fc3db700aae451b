"""Target affinity matrices built from a neighborhood definition.

Every builder returns an :class:`AffinityMatrix` whose entries lie in
``[-1, 1]`` (``regress`` mode) or ``[-b, b]`` (``constant`` mode with ``b``
bits). Constant mode is the regress matrix scaled by ``b``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import AssignmentError, DegenerateNeighborhoodError, InvalidItemError

DEFAULT_PERCENTILE_LEVELS = ((2.0, 4), (5.0, 3), (10.0, 2), (20.0, 1))


@dataclass(frozen=True)
class Mode:
    """Either ``regress`` (weighted Hamming) or ``constant`` with ``b`` bits."""

    kind: str = "regress"
    b: int = 1

    def __post_init__(self):
        if self.kind not in ("regress", "constant"):
            raise ValueError(f"unknown mode {self.kind!r}")
        if self.kind == "constant" and self.b < 1:
            raise ValueError("constant mode needs b >= 1")

    @classmethod
    def regress(cls):
        return cls("regress", 1)

    @classmethod
    def constant(cls, b):
        return cls("constant", int(b))

    @property
    def scale(self):
        return float(self.b) if self.kind == "constant" else 1.0

    def __str__(self):
        return "regress" if self.kind == "regress" else f"constant(b={self.b})"


def parse_mode(kind, bits=None):
    if kind == "regress":
        return Mode.regress()
    if kind == "constant":
        if bits is None:
            raise ValueError("constant mode needs the number of bits")
        return Mode.constant(bits)
    raise ValueError(f"unknown mode {kind!r}")


@dataclass
class AffinityMatrix:
    r: np.ndarray
    mode: Mode
    d_max: float
    kind: str = "metric"
    # row keys: class ids, label tuples, or instance indices
    items: list = field(default_factory=list)
    # (distance, level) pairs, percentile kind only
    thresholds: list | None = None

    @property
    def n(self):
        return self.r.shape[0]


def _finish(r, mode):
    r = 0.5 * (r + r.T)
    return r * mode.scale


def pairwise_l2(points):
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidItemError("points must form a 2-D array (n, dim)")
    if not np.all(np.isfinite(x)):
        raise InvalidItemError("points contain non-finite values")
    return squareform(pdist(x, metric="euclidean"))


def cdist_l2(a, b):
    """L2 distances between the rows of ``a`` and the rows of ``b``."""
    return cdist(np.atleast_2d(a).astype(np.float64), np.atleast_2d(b).astype(np.float64))


def from_metric(points, mode=Mode.regress(), metric="l2"):
    """Affinity ``1 - 2 d(x_i, x_j) / d_max`` from L2 distances."""
    if metric != "l2":
        raise ValueError(f"unsupported metric {metric!r}")
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidItemError("need at least two points")
    d = pairwise_l2(x)
    d_max = float(d.max())
    if d_max == 0.0:
        raise DegenerateNeighborhoodError("all points coincide (d_max = 0)")
    r = 1.0 - 2.0 * d / d_max
    np.fill_diagonal(r, 1.0)
    return AffinityMatrix(_finish(r, mode), mode, d_max, "metric", list(range(x.shape[0])))


def from_classes(class_ids, mode=Mode.regress()):
    """Class affinity over the distinct classes: +1 on the diagonal, -1 elsewhere.

    Rows follow the sorted distinct class ids, kept in ``items``.
    """
    classes = sorted(set(int(c) for c in class_ids))
    k = len(classes)
    if k < 2:
        raise DegenerateNeighborhoodError("need at least two distinct classes")
    r = 2.0 * np.eye(k) - np.ones((k, k))
    return AffinityMatrix(_finish(r, mode), mode, 1.0, "class", classes)


def from_multilabel(label_sets, mode=Mode.regress()):
    """Affinity over distinct label combinations from shared-label counts.

    Returns the matrix and a dict mapping each distinct label combination
    (a sorted tuple) to its row.
    """
    combos = []
    index = {}
    for labels in label_sets:
        key = tuple(sorted(set(int(v) for v in labels)))
        if not key:
            raise InvalidItemError("empty label set")
        if key not in index:
            index[key] = len(combos)
            combos.append(key)
    if len(combos) < 1:
        raise InvalidItemError("no label sets given")
    universe = sorted(set(v for key in combos for v in key))
    col = {v: j for j, v in enumerate(universe)}
    onehot = np.zeros((len(combos), len(universe)))
    for i, key in enumerate(combos):
        onehot[i, [col[v] for v in key]] = 1.0
    shared = onehot @ onehot.T
    a_max = float(max(len(key) for key in combos))
    r = 2.0 * shared / a_max - 1.0
    return AffinityMatrix(_finish(r, mode), mode, a_max, "multilabel", combos), index


def nearest_rank_percentile(values, p):
    """Smallest value with at least ``p`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = int(np.ceil(p / 100.0 * v.size))
    return float(v[max(rank, 1) - 1])


def check_levels(levels):
    levels = [(float(p), int(lv)) for p, lv in levels]
    if not levels:
        raise ValueError("need at least one percentile level")
    for p, lv in levels:
        if not 0.0 < p < 100.0:
            raise ValueError(f"percentile {p} outside (0, 100)")
        if lv < 0:
            raise ValueError("affinity levels must be non-negative")
    for (p0, l0), (p1, l1) in zip(levels, levels[1:]):
        if not (p1 > p0 and l1 < l0):
            raise ValueError(
                "levels must increase in percentile and decrease in affinity level"
            )
    return levels


def percentile_thresholds(points, levels=DEFAULT_PERCENTILE_LEVELS):
    """Distance thresholds (one per level) over the off-diagonal pairs."""
    levels = check_levels(levels)
    d = pairwise_l2(points)
    iu = np.triu_indices(d.shape[0], k=1)
    pair_d = d[iu]
    if np.unique(pair_d).size < 2:
        raise DegenerateNeighborhoodError("fewer than two distinct pairwise distances")
    return [(nearest_rank_percentile(pair_d, p), lv) for p, lv in levels]


def level_of(distances, thresholds):
    """Raw affinity level for each distance; 0 beyond the last threshold."""
    distances = np.asarray(distances, dtype=np.float64)
    out = np.zeros(distances.shape, dtype=np.int64)
    # walk from the widest bin inward so the closest bin wins at ties
    for thr, lv in reversed(thresholds):
        out[distances <= thr] = lv
    return out


def from_percentiles(points, levels=DEFAULT_PERCENTILE_LEVELS, mode=Mode.regress()):
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidItemError("need at least two points")
    thresholds = percentile_thresholds(x, levels)
    lmax = float(max(lv for _, lv in thresholds))
    raw = level_of(pairwise_l2(x), thresholds)
    r = 2.0 * raw / lmax - 1.0
    np.fill_diagonal(r, 1.0)
    return AffinityMatrix(
        _finish(r, mode), mode, lmax, "percentile", list(range(x.shape[0])), thresholds
    )


def from_instances(base, assignment):
    """Expand an item-level affinity to instances.

    ``assignment[p]`` is the row of ``base`` that instance ``p`` belongs to.
    """
    idx = np.asarray(assignment)
    if idx.ndim != 1 or idx.size == 0:
        raise AssignmentError("assignment must be a non-empty 1-D sequence of rows")
    if not np.issubdtype(idx.dtype, np.integer):
        raise AssignmentError("assignment entries must be integer row indices")
    if idx.min() < 0 or idx.max() >= base.n:
        raise AssignmentError(f"assignment refers to rows outside [0, {base.n})")
    r = base.r[np.ix_(idx, idx)]
    return AffinityMatrix(r, base.mode, base.d_max, base.kind, list(range(idx.size)))
