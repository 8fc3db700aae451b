"""Dense symmetric kernels: dominant eigenpair and ridge-regularized solve."""

import numpy as np
import scipy.linalg

from .errors import IterationLimitError, SingularMatrixError

DEFAULT_EIG_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
_START_STEP = 1e-3
_START_SEED = 0x5EED


def sym_matrix(entries):
    """Validate ``entries`` as a finite, exactly symmetric square matrix.

    Returns a float64 copy. Raises ``ValueError`` on any violation.
    """
    m = np.array(entries, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if not np.array_equal(m, m.T):
        raise ValueError("matrix is not exactly symmetric")
    return m


def _fix_sign(x):
    nz = np.flatnonzero(x)
    if nz.size and x[nz[0]] < 0:
        return -x
    return x


def start_vector(n):
    """Deterministic start ``1 + eps*(i + u_i)`` with ``u_i`` from a fixed stream.

    The plain ramp ``1 + eps*i`` is exactly orthogonal to every balanced sign
    vector whose index sum is balanced too, e.g. ``(1, -1, -1, 1)``. Those are
    the eigenvectors of class affinities, so the ramp alone would miss them.
    """
    u = np.random.default_rng(_START_SEED).random(n)
    x = 1.0 + _START_STEP * (np.arange(n, dtype=np.float64) + u)
    return x / np.linalg.norm(x)


def dominant_eigenpair(m, tol=DEFAULT_EIG_TOL, max_iter=DEFAULT_MAX_ITER):
    """Largest algebraic eigenvalue of a symmetric matrix and a unit eigenvector.

    Power iteration runs on ``a = m + c*I`` with ``c = ||m||_F``. The shift
    makes every eigenvalue non-negative, so the largest algebraic eigenvalue
    is also the largest in magnitude. Iteration stops once
    ``||m x - lam x|| <= tol * ||m||_F``.

    After ``max(64, n)`` plain steps (the cost of one matrix product) the
    iterate is advanced by repeated squaring: ``x <- a^(2^j) x``. This visits
    the same power sequence at doubling exponents; ``max_iter`` counts the
    equivalent number of plain steps.

    The eigenvector is returned with its first nonzero component positive.

    Raises
    ------
    IterationLimitError
        After ``max_iter`` equivalent iterations without meeting the
        tolerance. The exception carries the last iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n < 1:
        raise ValueError("empty matrix")
    shift = float(np.linalg.norm(m))
    x = start_vector(n)
    if shift == 0.0:
        return 0.0, _fix_sign(x)

    threshold = tol * shift

    def check(x):
        mx = m @ x
        lam = float(x @ mx)
        return lam, float(np.linalg.norm(mx - lam * x)), mx

    warmup = min(max(64, n), max_iter)
    done = 0
    while True:
        lam, res, mx = check(x)
        if res <= threshold:
            return lam, _fix_sign(x)
        if done >= warmup:
            break
        y = mx + shift * x
        x = y / np.linalg.norm(y)
        done += 1

    # a^(2^j) / ||a^(2^j)||, renormalised each squaring
    power = (m + shift * np.eye(n)) / (2.0 * shift)
    step = 1
    while done < max_iter:
        y = power @ x
        x = y / np.linalg.norm(y)
        done += step
        lam, res, _ = check(x)
        if res <= threshold:
            return lam, _fix_sign(x)
        power = power @ power
        power = 0.5 * (power + power.T)
        power /= np.linalg.norm(power)
        step *= 2

    raise IterationLimitError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(residual {res:.3e} > {threshold:.3e})",
        eigenvalue=lam,
        eigenvector=_fix_sign(x),
        residual=res,
    )


def solve_spd(g, rhs, ridge=0.0):
    """Solve ``(g + ridge*I) x = rhs`` by Cholesky factorization.

    ``g`` is expected to be a positive semidefinite Gram matrix.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    g = np.asarray(g, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    a = g + ridge * np.eye(g.shape[0])
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(
            f"matrix is not positive definite with ridge={ridge:g}; "
            "retry with a larger ridge"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs)
