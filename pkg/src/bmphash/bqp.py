"""Single-flip local search for ``max v^T Q v`` over ``v in {-1, +1}^n``."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ImproveConfig:
    """``max_passes`` caps the number of flips; ``None`` means ``4 n``."""

    max_passes: int | None = None
    strategy: str = "greedy_flip"

    def __post_init__(self):
        if self.max_passes is not None and self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if self.strategy != "greedy_flip":
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class ImproveResult:
    v: np.ndarray
    objective: float
    flips: int
    truncated: bool


def flip_gains(q, v, qv=None):
    """Objective change from flipping each coordinate: ``-4 v_i (Qv)_i + 4 Q_ii``."""
    if qv is None:
        qv = q @ v
    return -4.0 * v * qv + 4.0 * np.diag(q)


def local_search(q, v0, cfg=ImproveConfig()):
    """Best-improvement single-bit-flip ascent.

    Each step flips the coordinate with the largest strictly positive gain
    (lowest index on ties) and updates ``Qv`` in O(n). Stops when no flip
    improves the objective or after ``cfg.max_passes`` flips.
    """
    q = np.asarray(q, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    if not np.all(np.abs(v0) == 1.0):
        raise ValueError("v0 entries must be exactly -1 or +1")
    n = v0.size
    cap = cfg.max_passes if cfg.max_passes is not None else 4 * n
    diag = np.diag(q).copy()

    v = v0.copy()
    qv = q @ v
    start_obj = float(v @ qv)
    flips = 0
    truncated = False
    while True:
        gains = -4.0 * v * qv + 4.0 * diag
        i = int(np.argmax(gains))
        if not gains[i] > 0.0:
            break
        if flips == cap:
            truncated = True
            break
        # v_i -> -v_i changes Qv by -2 v_i Q[:, i]
        qv -= 2.0 * v[i] * q[:, i]
        v[i] = -v[i]
        flips += 1

    obj = float(v @ (q @ v))
    if obj < start_obj:
        # only reachable through rounding on near-zero gains
        return ImproveResult(v0.copy(), start_obj, 0, truncated)
    return ImproveResult(v, obj, flips, truncated)
