"""Binary code inference by greedy rank-one binary matrix pursuit.

The target ``R`` is approximated by ``U = sum_k alpha_k v_k v_k^T`` with
``v_k in {-1, +1}^n``. Each iteration picks the binary direction most
correlated with the residual ``Q = R - U`` (sign of the dominant eigenvector,
optionally polished by local search), then either fixes its weight at 1
(``constant``: ordinary Hamming distance) or re-fits all weights by least
squares (``regress``: weighted Hamming distance).
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import bqp, linalg
from .affinity import AffinityMatrix
from .errors import IterationLimitError, SingularMatrixError

MODES = ("constant", "regress")
SELECTIONS = ("auto", "algebraic", "magnitude")


@dataclass
class CodeMatrix:
    """Binary codes ``v`` (n x b, entries +-1) with one weight per bit."""

    v: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.int8)
        if self.v.ndim != 2:
            raise ValueError("codes must be a 2-D array (items x bits)")
        self.alpha = np.asarray(self.alpha, dtype=np.float64).ravel()
        if not np.all(np.abs(self.v) == 1):
            raise ValueError("code entries must be -1 or +1")
        if self.alpha.size != self.v.shape[1]:
            raise ValueError(
                f"{self.alpha.size} weights for {self.v.shape[1]} code columns"
            )

    @property
    def n(self):
        return self.v.shape[0]

    @property
    def bits(self):
        return self.v.shape[1]

    def truncate(self, bits, alpha=None):
        """First ``bits`` columns, optionally with replacement weights."""
        a = self.alpha[:bits] if alpha is None else alpha
        return CodeMatrix(self.v[:, :bits].copy(), np.array(a, dtype=np.float64))


@dataclass(frozen=True)
class PursuitConfig:
    bits: int
    mode: str = "regress"
    improve: bool = False
    eig_tol: float = linalg.DEFAULT_EIG_TOL
    eig_max_iter: int = linalg.DEFAULT_MAX_ITER
    ridge: float = 1e-10
    stop_tol: float = 1e-8
    seed: int = 0
    improve_passes: int | None = None
    # keep the last power-iteration iterate instead of raising
    accept_unconverged: bool = True
    # "auto": magnitude for regress, algebraic for constant
    selection: str = "auto"

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eig_tol <= 0 or self.stop_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")

    @property
    def resolved_selection(self):
        if self.selection != "auto":
            return self.selection
        return "magnitude" if self.mode == "regress" else "algebraic"


@dataclass
class TraceRecord:
    t: int
    residual_fro: float
    residual_fro_offdiag: float
    objective: float
    alpha: np.ndarray
    elapsed_ms: float
    duplicate: bool = False
    eig_converged: bool = True
    improve_flips: int = 0


@dataclass
class PursuitState:
    u: np.ndarray
    residual: np.ndarray
    trace: list = field(default_factory=list)
    r_norm: float = 0.0
    stop_reason: str = "completed"

    def residual_curve(self, offdiag=False):
        key = "residual_fro_offdiag" if offdiag else "residual_fro"
        return np.array([getattr(rec, key) for rec in self.trace])

    def relative_residual(self):
        if self.r_norm == 0.0:
            return 0.0
        return float(np.linalg.norm(self.residual)) / self.r_norm


@dataclass
class Direction:
    v: np.ndarray
    objective: float
    relaxed_objective: float
    eig_converged: bool = True
    flips: int = 0


def sign_pm(x):
    """Elementwise sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def offdiag_norm(m):
    return float(np.sqrt(max(np.sum(m * m) - np.sum(np.diag(m) ** 2), 0.0)))


def select_direction(residual, improve=False, eig_tol=linalg.DEFAULT_EIG_TOL,
                     eig_max_iter=linalg.DEFAULT_MAX_ITER, improve_passes=None,
                     accept_unconverged=False, selection="algebraic"):
    """Binary direction for the next rank-one step.

    With ``selection="algebraic"`` the dominant (largest algebraic)
    eigenvector of ``residual`` is rounded to +-1, which targets
    ``max v^T Q v``. With ``"magnitude"`` the eigenvalue of largest absolute
    value is used instead, targeting ``max |v^T Q v|``; this only makes sense
    when the step weight may be negative. ``improve`` polishes the rounded
    vector by single-flip local search in the same direction. The returned
    objective is ``v^T residual v`` (signed).
    """
    q = np.asarray(residual, dtype=np.float64)
    if selection not in ("algebraic", "magnitude"):
        raise ValueError(f"unknown selection {selection!r}")
    converged = True
    sense = 1.0
    try:
        lam, x = linalg.dominant_eigenpair(q, eig_tol, eig_max_iter)
    except IterationLimitError as exc:
        if not accept_unconverged:
            raise
        lam, x, converged = exc.eigenvalue, exc.eigenvector, False
    if selection == "magnitude":
        try:
            lam_neg, x_neg = linalg.dominant_eigenpair(-q, eig_tol, eig_max_iter)
            conv_neg = True
        except IterationLimitError as exc:
            if not accept_unconverged:
                raise
            lam_neg, x_neg, conv_neg = exc.eigenvalue, exc.eigenvector, False
        if lam_neg > lam:
            x, converged, sense = x_neg, conv_neg, -1.0
    v = sign_pm(x)
    relaxed = obj = float(v @ q @ v)
    flips = 0
    if improve:
        res = bqp.local_search(sense * q, v, bqp.ImproveConfig(max_passes=improve_passes))
        v, flips = res.v, res.flips
        obj = float(v @ q @ v)
    return Direction(v, obj, relaxed, converged, flips)


def gram_system(directions, r):
    """Normal equations of the weight regression without forming vec(v v^T).

    ``G[k, l] = (v_k^T v_l)^2`` and ``rhs[k] = v_k^T R v_k``.
    """
    vm = np.asarray(directions, dtype=np.float64)
    if vm.ndim == 1:
        vm = vm[None, :]
    inner = vm @ vm.T
    gram = inner * inner
    rhs = np.einsum("ki,ij,kj->k", vm, r, vm)
    return gram, rhs


def refine_weights(directions, r, ridge=1e-10):
    """Least-squares bit weights minimizing ``||sum_k a_k v_k v_k^T - R||_F``.

    ``directions`` is a sequence of +-1 vectors (or a k x n array). The Gram
    matrix is factored with ``ridge`` added to its diagonal; if that fails
    (duplicate directions at large ``n``) the ridge is retried relative to
    the Gram diagonal ``n^2``.
    """
    vm = np.asarray(directions, dtype=np.float64)
    if vm.ndim == 1:
        vm = vm[None, :]
    if vm.shape[0] < 1:
        raise ValueError("need at least one direction")
    r = np.asarray(r, dtype=np.float64)
    n = vm.shape[1]
    if r.shape != (n, n):
        raise ValueError(f"directions of length {n} do not match R of shape {r.shape}")
    gram, rhs = gram_system(vm, r)
    try:
        return linalg.solve_spd(gram, rhs, ridge)
    except SingularMatrixError as exc:
        if ridge > 0:
            try:
                return linalg.solve_spd(gram, rhs, ridge * n * n)
            except SingularMatrixError:
                pass
        dups = duplicate_pairs(vm)
        raise SingularMatrixError(
            f"{exc}; duplicate directions (up to sign): {dups or 'none found'}"
        ) from exc


def duplicate_pairs(vm):
    vm = np.asarray(vm, dtype=np.float64)
    n = vm.shape[1]
    inner = np.abs(vm @ vm.T)
    k = vm.shape[0]
    return [(a, b) for a in range(k) for b in range(a + 1, k) if inner[a, b] == n]


def reconstruct(codes):
    """``sum_k alpha_k v_k v_k^T`` as a symmetric matrix."""
    v = codes.v.astype(np.float64)
    u = (v * codes.alpha) @ v.T
    return 0.5 * (u + u.T)


def weighted_affinity(codes, i, j):
    """``(alpha * u_i)^T u_j``."""
    return float(np.sum(codes.alpha * codes.v[i] * codes.v[j]))


def weighted_hamming(codes, i, j):
    """``sum_k alpha_k [u_ik != u_jk]``; equals ordinary Hamming for unit weights."""
    return float(np.sum(codes.alpha * (codes.v[i] != codes.v[j])))


def _target(r):
    if isinstance(r, AffinityMatrix):
        r = r.r
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("R must be square")
    if not np.all(np.isfinite(r)):
        raise ValueError("R has non-finite entries")
    return 0.5 * (r + r.T)


def _gain(d, selection):
    return abs(d.objective) if selection == "magnitude" else d.objective


def run(r, cfg, selector=None):
    """Infer ``cfg.bits`` weighted binary codes fitting ``r``.

    ``selector``, when given, replaces the spectral direction choice: it maps
    the residual to a +-1 vector.

    Returns ``(CodeMatrix, PursuitState)``. Fewer than ``cfg.bits`` columns
    come back when the relative residual drops to ``cfg.stop_tol`` or, in
    regress mode, when the selected direction is orthogonal to the residual
    (no descent possible); the reason is kept in ``state.stop_reason``.
    """
    r = _target(r)
    n = r.shape[0]
    r_norm = float(np.linalg.norm(r))
    u = np.zeros_like(r)
    q = r.copy()
    state = PursuitState(u, q, [], r_norm)
    columns = []
    alpha = np.zeros(0)
    # v_k^T Q v_k for fitted columns is zero up to rounding of order eps * n * |R|
    obj_floor = 1e-12 * n * r_norm
    selection = cfg.resolved_selection
    start = time.perf_counter()

    for t in range(1, cfg.bits + 1):
        if r_norm == 0.0 or np.linalg.norm(q) <= cfg.stop_tol * r_norm:
            state.stop_reason = "converged"
            break
        if selector is None:
            d = select_direction(q, cfg.improve, cfg.eig_tol, cfg.eig_max_iter,
                                 cfg.improve_passes, cfg.accept_unconverged,
                                 selection)
        else:
            v = sign_pm(selector(q))
            d = Direction(v, float(v @ q @ v), float(v @ q @ v))
        if cfg.mode == "regress":
            # fitted columns keep v^T Q v = ridge * alpha_k; anything at that
            # level is not a descent direction
            floor = obj_floor
            if columns:
                vm = np.array(columns).T
                floor += 2.0 * float(np.abs(np.sum((q @ vm) * vm, axis=0)).max())
            if _gain(d, selection) <= floor and selector is None and not cfg.improve:
                # rounding can land on a fitted column; local search may escape
                d = select_direction(q, True, cfg.eig_tol, cfg.eig_max_iter,
                                     cfg.improve_passes, cfg.accept_unconverged,
                                     selection)
            if _gain(d, selection) <= floor:
                state.stop_reason = "no_descent_direction"
                break

        v = d.v
        duplicate = any(abs(float(c @ v)) == n for c in columns)
        columns.append(v)
        if cfg.mode == "constant":
            alpha = np.ones(len(columns))
        else:
            alpha = refine_weights(columns, r, cfg.ridge)
        u = reconstruct(CodeMatrix(np.array(columns).T, alpha))
        q = r - u

        state.trace.append(TraceRecord(
            t=t,
            residual_fro=float(np.linalg.norm(q)),
            residual_fro_offdiag=offdiag_norm(q),
            objective=d.objective,
            alpha=alpha.copy(),
            elapsed_ms=(time.perf_counter() - start) * 1e3,
            duplicate=duplicate,
            eig_converged=d.eig_converged,
            improve_flips=d.flips,
        ))

    state.u = u
    state.residual = q
    v = np.array(columns).T if columns else np.ones((n, 0))
    return CodeMatrix(v, alpha), state


def write_trace(state, path):
    """Trace as CSV: t, residual norms, objective, alpha_1..alpha_T, elapsed_ms."""
    width = max((rec.alpha.size for rec in state.trace), default=0)
    header = ["t", "residual_fro", "residual_fro_offdiag", "objective"]
    header += [f"alpha_{k}" for k in range(1, width + 1)] + ["elapsed_ms"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in state.trace:
            alphas = [repr(float(a)) for a in rec.alpha]
            alphas += [""] * (width - len(alphas))
            w.writerow([rec.t, repr(rec.residual_fro), repr(rec.residual_fro_offdiag),
                        repr(rec.objective), *alphas, f"{rec.elapsed_ms:.3f}"])
