import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmphash import affinity, pursuit
from bmphash.errors import SingularMatrixError
from bmphash.pursuit import CodeMatrix, PursuitConfig

from conftest import all_sign_vectors, random_symmetric


def brute_force_selector(q):
    signs = all_sign_vectors(q.shape[0])
    vals = np.einsum("ki,ij,kj->k", signs, q, signs)
    return signs[int(np.argmax(np.abs(vals)))]


def naive_reconstruct(codes):
    n, b = codes.v.shape
    u = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k in range(b):
                u[i, j] += codes.alpha[k] * codes.v[i, k] * codes.v[j, k]
    return u


class TestCodeMatrix:
    def test_validation(self):
        with pytest.raises(ValueError):
            CodeMatrix(np.array([[1, 0]]), np.ones(2))
        with pytest.raises(ValueError):
            CodeMatrix(np.array([[1, -1]]), np.ones(3))

    def test_truncate(self):
        c = CodeMatrix(np.array([[1, -1, 1], [1, 1, -1]]), np.array([1.0, 2.0, 3.0]))
        t = c.truncate(2)
        assert t.bits == 2
        np.testing.assert_array_equal(t.alpha, [1, 2])
        np.testing.assert_array_equal(c.truncate(1, [5.0]).alpha, [5])


class TestSelectDirection:
    def test_two_by_two(self):
        q = np.array([[1.0, -1.0], [-1.0, 1.0]])
        d = pursuit.select_direction(q)
        best = max(v @ q @ v for v in all_sign_vectors(2))
        assert d.objective == best == 4.0
        assert d.v[0] == -d.v[1]

    def test_identity(self):
        assert pursuit.select_direction(np.eye(3)).objective == 3.0

    def test_class_matrix(self):
        q = 2 * np.eye(10) - np.ones((10, 10))
        d = pursuit.select_direction(q)
        best = max(v @ q @ v for v in all_sign_vectors(10))
        assert best == 20.0
        assert d.objective == 20.0
        assert d.v.sum() == 0

    def test_sign_zero_is_plus(self):
        np.testing.assert_array_equal(pursuit.sign_pm([0.0, -0.0, -1e-300, 2.0]), [1, 1, -1, 1])

    def test_improve_not_worse(self, rng):
        for _ in range(30):
            q = random_symmetric(rng, int(rng.integers(2, 25)))
            d = pursuit.select_direction(q, improve=True, eig_max_iter=200_000)
            assert d.objective >= d.relaxed_objective

    def test_magnitude_prefers_negative_side(self):
        q = 2 * np.eye(10) - np.ones((10, 10))
        d = pursuit.select_direction(q, selection="magnitude")
        assert d.objective == -80.0
        assert abs(d.v.sum()) == 10

    def test_rayleigh_sandwich(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 20))
            q = random_symmetric(rng, n)
            w = np.linalg.eigvalsh(q)
            for sel in ("algebraic", "magnitude"):
                d = pursuit.select_direction(q, selection=sel, eig_max_iter=200_000)
                assert n * w[0] - 1e-6 <= d.objective <= n * w[-1] + 1e-6


class TestRefineWeights:
    def test_single_direction(self):
        v = np.array([1.0, -1.0, 1.0])
        np.testing.assert_allclose(pursuit.refine_weights([v], 3 * np.outer(v, v)), [3.0])

    def test_two_directions(self):
        dirs = [np.array([1.0, 1.0]), np.array([1.0, -1.0])]
        r = np.array([[5.0, 1.0], [1.0, 5.0]])
        g, rhs = pursuit.gram_system(dirs, r)
        np.testing.assert_array_equal(g, [[4, 0], [0, 4]])
        np.testing.assert_array_equal(rhs, [12, 8])
        a = pursuit.refine_weights(dirs, r)
        np.testing.assert_allclose(a, [3.0, 2.0])
        u = pursuit.reconstruct(CodeMatrix(np.array(dirs).T, a))
        np.testing.assert_allclose(u, r)

    def test_duplicates_split_single_weight(self, rng):
        v = rng.choice([-1.0, 1.0], size=6)
        r = random_symmetric(rng, 6)
        single = pursuit.refine_weights([v], r)[0]
        pair = pursuit.refine_weights([v, v], r, ridge=1e-10)
        assert pair.sum() == pytest.approx(single, abs=1e-6)

    def test_singular_names_duplicates(self):
        v = np.array([1.0, -1.0, 1.0])
        with pytest.raises(SingularMatrixError, match=r"\(0, 1\)"):
            pursuit.refine_weights([v, -v], np.eye(3), ridge=0.0)

    def test_matches_vectorized_least_squares(self, rng):
        # independent route: materialize vec(v v^T) and call lstsq
        for _ in range(20):
            n, k = int(rng.integers(3, 12)), int(rng.integers(1, 5))
            dirs = rng.choice([-1.0, 1.0], size=(k, n))
            if np.linalg.matrix_rank(np.array([np.outer(d, d).ravel() for d in dirs])) < k:
                continue
            r = random_symmetric(rng, n)
            basis = np.array([np.outer(d, d).ravel() for d in dirs]).T
            ref = np.linalg.lstsq(basis, r.ravel(), rcond=None)[0]
            np.testing.assert_allclose(pursuit.refine_weights(dirs, r, ridge=0.0), ref,
                                       atol=1e-10)


class TestReconstruct:
    def test_zero_weight(self):
        np.testing.assert_array_equal(
            pursuit.reconstruct(CodeMatrix(np.ones((3, 1)), [0.0])), np.zeros((3, 3)))

    def test_constant_column(self):
        np.testing.assert_array_equal(
            pursuit.reconstruct(CodeMatrix(np.ones((2, 1)), [2.0])), [[2, 2], [2, 2]])

    def test_naive_oracle(self, rng):
        codes = CodeMatrix(rng.choice([-1, 1], size=(7, 5)), rng.standard_normal(5))
        np.testing.assert_allclose(pursuit.reconstruct(codes), naive_reconstruct(codes),
                                   atol=1e-12)


class TestWeightedHamming:
    def test_identical_and_opposite(self):
        codes = CodeMatrix(np.array([[1, -1, 1], [1, -1, 1], [-1, 1, -1]]),
                           np.array([0.5, 2.0, 1.0]))
        assert pursuit.weighted_hamming(codes, 0, 1) == 0.0
        assert pursuit.weighted_affinity(codes, 0, 1) == 3.5
        assert pursuit.weighted_hamming(codes, 0, 2) == 3.5

    def test_unit_weights_reduce_to_hamming(self, rng):
        v = rng.choice([-1, 1], size=(5, 9))
        codes = CodeMatrix(v, np.ones(9))
        for i in range(5):
            for j in range(5):
                assert pursuit.weighted_hamming(codes, i, j) == np.sum(v[i] != v[j])

    def test_affinity_distance_identity(self, rng):
        codes = CodeMatrix(rng.choice([-1, 1], size=(4, 6)), rng.standard_normal(6))
        total = codes.alpha.sum()
        for i in range(4):
            for j in range(4):
                assert pursuit.weighted_affinity(codes, i, j) == pytest.approx(
                    total - 2 * pursuit.weighted_hamming(codes, i, j))


class TestRun:
    def test_two_by_two_one_step(self):
        r = np.array([[1.0, -1.0], [-1.0, 1.0]])
        codes, state = pursuit.run(r, PursuitConfig(bits=1))
        v = codes.v[:, 0].astype(float)
        # normal-equation oracle: alpha = v^T R v / (v^T v)^2
        assert codes.alpha[0] == pytest.approx((v @ r @ v) / (v @ v) ** 2)
        # the default ridge biases alpha by ~1e-10; without it the fit is exact
        assert state.trace[-1].residual_fro <= 1e-9
        codes, state = pursuit.run(r, PursuitConfig(bits=1, ridge=0.0))
        assert codes.alpha[0] == 1.0
        assert state.trace[-1].residual_fro == 0.0

    def test_constant_never_fits_fractional_entry(self):
        r = np.array([[1.0, np.sqrt(2) - 1, -1.0],
                      [np.sqrt(2) - 1, 1.0, 1.0],
                      [-1.0, 1.0, 1.0]])
        _, state = pursuit.run(r, PursuitConfig(bits=50, mode="constant"))
        assert len(state.trace) == 50
        assert all(rec.residual_fro > 0 for rec in state.trace)
        assert np.all(state.trace[-1].alpha == 1.0)

    def test_class_matrix_fits(self):
        codes, state = pursuit.run(affinity.from_classes(range(10)), PursuitConfig(bits=40))
        assert state.relative_residual() <= 0.01

    def test_reconstruct_plus_residual(self, rng):
        for mode in ("regress", "constant"):
            r = random_symmetric(rng, 12)
            codes, state = pursuit.run(r, PursuitConfig(bits=10, mode=mode))
            np.testing.assert_allclose(pursuit.reconstruct(codes) + state.residual, r,
                                       atol=1e-9)

    def test_least_squares_orthogonality(self, rng):
        for _ in range(10):
            r = random_symmetric(rng, int(rng.integers(4, 20)))
            codes, state = pursuit.run(r, PursuitConfig(bits=12))
            v = codes.v.astype(float)
            proj = np.einsum("ik,ij,jk->k", v, state.residual, v)
            assert np.abs(proj).max() <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 2**31 - 1))
    def test_monotone_and_strict(self, n, seed):
        r = random_symmetric(np.random.default_rng(seed), n)
        _, state = pursuit.run(r, PursuitConfig(bits=16))
        prev = np.linalg.norm(r)
        for rec in state.trace:
            assert rec.residual_fro <= prev + 1e-9
            if abs(rec.objective) > 1e-8:
                assert rec.residual_fro < prev
            prev = rec.residual_fro

    def test_exact_on_representable_target(self, rng):
        for n in (2, 3, 4):
            for _ in range(5):
                m = int(rng.integers(1, 2 ** (n - 1) + 1))
                w = rng.choice([-1.0, 1.0], size=(m, n))
                r = sum(c * np.outer(x, x) for c, x in zip(rng.standard_normal(m), w))
                cfg = PursuitConfig(bits=2 ** (n - 1))
                _, state = pursuit.run(r, cfg, selector=brute_force_selector)
                assert np.linalg.norm(state.residual) <= 1e-8 * max(1.0, np.linalg.norm(r))

    def test_stops_when_converged(self):
        codes, state = pursuit.run(affinity.from_classes(range(4)), PursuitConfig(bits=30))
        assert state.stop_reason == "converged"
        assert codes.bits < 30

    def test_stops_without_descent_direction(self):
        cfg = PursuitConfig(bits=5, selection="algebraic")
        codes, state = pursuit.run(-np.eye(4), cfg)
        assert state.stop_reason == "no_descent_direction"
        assert codes.bits == 0

    def test_duplicate_flag(self):
        v = np.array([1.0, -1.0, 1.0, 1.0])
        _, state = pursuit.run(5 * np.outer(v, v), PursuitConfig(bits=3, mode="constant"))
        assert [rec.duplicate for rec in state.trace] == [False, True, True]

    def test_zero_target(self):
        codes, state = pursuit.run(np.zeros((3, 3)), PursuitConfig(bits=4))
        assert codes.bits == 0 and state.stop_reason == "converged"

    def test_deterministic(self, rng):
        r = random_symmetric(rng, 15)
        a, sa = pursuit.run(r, PursuitConfig(bits=8, improve=True))
        b, sb = pursuit.run(r, PursuitConfig(bits=8, improve=True))
        np.testing.assert_array_equal(a.v, b.v)
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PursuitConfig(bits=0)
        with pytest.raises(ValueError):
            PursuitConfig(bits=1, mode="other")
        with pytest.raises(ValueError):
            PursuitConfig(bits=1, eig_tol=0)

    def test_write_trace(self, tmp_path, rng):
        _, state = pursuit.run(random_symmetric(rng, 6), PursuitConfig(bits=3))
        path = tmp_path / "trace.csv"
        pursuit.write_trace(state, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ("t,residual_fro,residual_fro_offdiag,objective,"
                            "alpha_1,alpha_2,alpha_3,elapsed_ms")
        assert lines[1].split(",")[5:7] == ["", ""]
        assert len(lines) == 1 + len(state.trace)

    def test_offdiag_norm(self):
        m = np.array([[3.0, 1.0], [1.0, -4.0]])
        assert pursuit.offdiag_norm(m) == pytest.approx(np.sqrt(2))
