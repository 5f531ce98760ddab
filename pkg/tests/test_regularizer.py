import numpy as np
import pytest

from dcgpsr import regularizer as rg

from oracles import topk_norm_bruteforce


def test_top_k1_norm_examples():
    assert rg.top_k1_norm([3, -1, 2], 2) == 5
    x = np.array([0.5, -4.0, 2.5, 0.0])
    assert rg.top_k1_norm(x, 4) == pytest.approx(np.sum(np.abs(x)))
    assert rg.top_k1_norm(x, 0) == 0


@pytest.mark.parametrize("k", [-1, 4, 1.5])
def test_top_k1_norm_rejects_bad_k(k):
    with pytest.raises(ValueError):
        rg.top_k1_norm([1.0, 2.0, 3.0], k)


def test_top_k1_norm_matches_bruteforce(rng):
    for _ in range(60):
        n = int(rng.integers(1, 9))
        x = rng.standard_normal(n) * rng.integers(1, 5, n)
        k = int(rng.integers(0, n + 1))
        assert rg.top_k1_norm(x, k) == pytest.approx(topk_norm_bruteforce(x, k), rel=1e-12, abs=1e-12)


def test_dc_gap_examples():
    assert rg.dc_gap([1, 0, 0], 1) == 0
    assert rg.dc_gap([1, 1, 0], 1) == 1
    assert rg.dc_gap([3.0, -2.0], 0) == 5


def test_dc_gap_is_exactly_zero_for_sparse_vectors(rng):
    for _ in range(100):
        n = 20
        x = np.zeros(n)
        nnz = int(rng.integers(0, n + 1))
        x[rng.choice(n, nnz, replace=False)] = rng.standard_normal(nnz) * 10.0 ** rng.uniform(-8, 8, nnz)
        k = int(rng.integers(0, n + 1))
        assert (rg.dc_gap(x, k) == 0) == (np.count_nonzero(x) <= k)


def test_subgradient_examples():
    assert rg.subgradient_topk_signed([3, -1, 2], 2).tolist() == [1, 0, 1]
    assert rg.subgradient_topk_signed([-5], 1).tolist() == [-1]


def test_subgradient_attains_topk_norm(rng):
    for _ in range(50):
        x = rng.standard_normal(15)
        k = int(rng.integers(0, 16))
        w = rg.subgradient_topk_signed(x, k)
        assert x @ w == pytest.approx(rg.top_k1_norm(x, k), abs=1e-12)
        assert np.count_nonzero(w) == k


def test_subgradient_at_zeros_has_fewer_nonzeros():
    # sign(0) = 0, so padding picked up by the tie rule contributes nothing
    w = rg.subgradient_topk_signed([0.0, 2.0, 0.0], 2)
    assert w.tolist() == [0, 1, 0]


def test_indicator_examples():
    assert rg.indicator_topk_nonneg([5, 3, 1, 0], 2).tolist() == [1, 1, 0, 0]
    assert rg.indicator_topk_nonneg([0, 0, 0], 2).tolist() == [1, 1, 0]
    with pytest.raises(ValueError):
        rg.indicator_topk_nonneg([1.0, -0.1], 1)


def test_indicator_identity(rng):
    for _ in range(50):
        z = np.abs(rng.standard_normal(12))
        k = int(rng.integers(0, 13))
        m = rg.indicator_topk_nonneg(z, k)
        assert m.sum() == k
        assert z @ m == pytest.approx(rg.top_k1_norm(z, k), rel=1e-14)


def test_penalty_threshold_examples():
    c = rg.penalty_threshold(np.eye(2), [1.0, 2.0], 2.0)
    assert c.rho_star == pytest.approx(5.0)
    assert c.rho_star == c.per_index_terms.max()
    assert rg.penalty_threshold(np.eye(4), np.zeros(4), 1.0).rho_star == pytest.approx(1.5)
    with pytest.raises(ValueError):
        rg.penalty_threshold(np.eye(2), [1.0, 1.0], 0.0)


def test_default_q_bounds_minimiser_norm(rng):
    phi = rng.standard_normal((8, 5))
    y = rng.standard_normal(8)
    q = rg.default_q(phi, y)
    # least squares is the largest-norm candidate any penalised minimiser can beat
    x_ls = np.linalg.lstsq(phi, y, rcond=None)[0]
    assert np.linalg.norm(x_ls) <= q
    # wide, full row rank: a heuristic scale, still finite
    assert 0 < rg.default_q(rng.standard_normal((3, 6)), rng.standard_normal(3)) < np.inf
    a = rng.standard_normal((5, 2))
    with pytest.raises(ValueError):
        rg.default_q(np.hstack([a, a[:, :1]]), rng.standard_normal(5))


def test_lipschitz_examples(rng):
    assert rg.lipschitz_constant(np.eye(5)) == pytest.approx(1.0, rel=1e-12)
    assert rg.lipschitz_constant(2 * np.eye(5)) == pytest.approx(4.0, rel=1e-12)
    assert rg.lipschitz_constant(np.zeros((3, 4))) == 0.0
    phi = rng.standard_normal((40, 80))
    ref = np.linalg.eigvalsh(phi.T @ phi)[-1]
    assert rg.lipschitz_constant(phi) == pytest.approx(ref, rel=1e-8)


def test_objective_examples(rng):
    phi = rng.standard_normal((6, 10))
    x = np.zeros(10)
    x[[1, 7]] = [2.0, -1.0]
    y = phi @ x
    assert rg.objective_f(x, phi, y, 0.7, 2) == 0
    assert rg.objective_f(np.zeros(10), phi, y, 0.7, 2) == pytest.approx(0.5 * y @ y)
    xr = rng.standard_normal(10)
    r = y - phi @ xr
    a = np.sort(np.abs(xr))
    assert rg.objective_f(xr, phi, y, 0.7, 3) == pytest.approx(0.5 * r @ r + 0.7 * a[:7].sum(), rel=1e-13)
