import math
import struct

import numpy as np
import pytest

from sanmix import cavi, gibbs
from sanmix.kernels import make_rng
from sanmix.simulate import GroupedDataset, univariate_benchmark

LOG2 = math.log(2.0)


@pytest.fixture(scope="module")
def small():
    data, truth = univariate_benchmark(15, make_rng(0))
    return data, truth


def test_init_chain_reproducible_and_in_range(small):
    data, _ = small
    cfg = cavi.FisanConfig(T=6, L=5)
    a = gibbs.init_chain(data, cfg, make_rng(1))
    b = gibbs.init_chain(data, cfg, make_rng(1))
    assert np.array_equal(a.S, b.S) and np.array_equal(a.M, b.M) and np.array_equal(a.mu, b.mu)
    assert a.S.max() < 6 and a.M.max() < 5 and a.M.min() >= 0
    one = gibbs.init_chain(data, cavi.FsanConfig(K=1, L=5), make_rng(2))
    assert np.all(one.S == 0)


def test_omega_conjugacy():
    b, n = 0.3, np.array([7, 2])
    data = GroupedDataset(np.zeros((9, 1)), np.zeros(9, dtype=int))
    cfg = cavi.FsanConfig(K=1, L=2, b=b)
    st = gibbs.init_chain(data, cfg, make_rng(3))
    st.S = np.zeros(1, dtype=np.int64)
    st.M = np.repeat([0, 1], n)
    rng = make_rng(4)
    draws = []
    for _ in range(20_000):
        gibbs.update_obs_weights(st, data, cfg, rng)
        draws.append(math.exp(st.log_omega[0, 0]))
    draws = np.array(draws)
    target = (b + n[0]) / (2 * b + n.sum())
    assert abs(draws.mean() - target) < 3 * draws.std() / math.sqrt(draws.size)


def test_empty_component_atoms_follow_base_measure():
    kp = cavi.KernelPrior.from_nig(0.0, 1.0, 3.0, 2.0)
    data = GroupedDataset(np.array([[1.0], [2.0], [1.5]]), np.zeros(3, dtype=int))
    cfg = cavi.FsanConfig(K=1, L=2, kernel=kp)
    st = gibbs.init_chain(data, cfg, make_rng(5))
    st.M = np.zeros(3, dtype=np.int64)
    rng = make_rng(6)
    mu, prec = [], []
    for _ in range(20_000):
        gibbs.update_atoms(st, data, cfg, rng)
        mu.append(st.mu[1, 0])
        prec.append(st.prec[1, 0, 0])
    mu, prec = np.array(mu), np.array(prec)
    # precision ~ Gamma(3, rate 2): mean 1.5, var 0.75
    assert abs(prec.mean() - 1.5) < 4 * math.sqrt(0.75 / prec.size)
    assert abs(mu.mean()) < 4 * mu.std() / math.sqrt(mu.size)


def test_slice_forces_first_component(small):
    data, _ = small
    cfg = cavi.FisanConfig(T=4, L=5)
    st = gibbs.init_chain(data, cfg, make_rng(7))
    st.log_pi = np.log(np.array([0.4, 0.3, 0.2, 0.1]))
    st.log_u = np.full(data.J, math.log(0.3))  # above xi_2 = 0.25
    gibbs.update_dist_labels(st, data, cfg, make_rng(8))
    assert np.all(st.S == 0)


def test_slice_threshold_invariant(small):
    data, _ = small
    cfg = cavi.FisanConfig(L=5)
    rng = make_rng(9)
    st = gibbs.init_chain(data, cfg, rng)
    for _ in range(300):
        gibbs.sweep(st, data, cfg, rng)
        assert -st.K_star * LOG2 < st.log_u.min()
        assert st.S.max() < st.K_star
        assert st.log_pi.shape == (st.K_star,)
        assert np.all(np.isfinite(st.log_pi[st.S]))


def test_slice_overflow(small):
    data, _ = small
    st = gibbs.init_chain(data, cavi.FisanConfig(L=5), make_rng(10))
    st.S[:] = 1100
    with pytest.raises(gibbs.SliceOverflowError):
        gibbs.update_dist_weights(st, cavi.FisanConfig(L=5), make_rng(11))


def test_flat_likelihood_reduces_to_prior():
    data = GroupedDataset(np.zeros((4, 1)), np.array([0, 1, 2, 3]))
    cfg = cavi.FsanConfig(K=3, L=2)
    st = gibbs.init_chain(data, cfg, make_rng(12))
    pi = np.array([0.6, 0.3, 0.1])
    st.log_pi = np.log(pi)
    st.log_omega = np.tile(np.log([0.5, 0.5]), (3, 1))
    rng = make_rng(13)
    counts = np.zeros(3)
    reps = 5000
    for _ in range(reps):
        gibbs.update_dist_labels(st, data, cfg, rng)
        counts += np.bincount(st.S, minlength=3)
    freq = counts / (4 * reps)
    se = np.sqrt(pi * (1 - pi) / (4 * reps))
    assert np.all(np.abs(freq - pi) < 3.5 * se)


def test_zero_weight_categorical_errors(small):
    data, _ = small
    cfg = cavi.FsanConfig(K=2, L=3)
    st = gibbs.init_chain(data, cfg, make_rng(14))
    st.log_omega[:] = -np.inf
    with pytest.raises(FloatingPointError):
        gibbs.update_obs_labels(st, data, cfg, make_rng(15))


def test_alpha_update_methods(small):
    data, _ = small
    cfg = cavi.FisanConfig(L=5)
    rng = make_rng(16)
    st = gibbs.init_chain(data, cfg, rng)
    gibbs.update_dist_weights(st, cfg, rng)
    for method in ("stick", "escobar_west"):
        gibbs.update_alpha(st, data, cfg, rng, method)
        assert st.alpha > 0
    with pytest.raises(ValueError):
        gibbs.update_alpha(st, data, cfg, rng, "bogus")


def test_posterior_kernel_params_match_direct_formula():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(6, 2))
    M = np.array([0, 0, 0, 1, 1, 0])
    kp = cavi.KernelPrior(np.array([0.5, -0.5]), 0.2, 4.0, np.eye(2) * 0.7)
    mean_n, kappa_n, dof_n, scale_n = gibbs.posterior_kernel_params(y, M, 3, kp)
    yk = y[M == 0]
    n = yk.shape[0]
    ybar = yk.mean(axis=0)
    S = (yk - ybar).T @ (yk - ybar)
    ref = np.linalg.inv(np.linalg.inv(kp.scale) + S + kp.kappa * n / (kp.kappa + n) * np.outer(ybar - kp.mean, ybar - kp.mean))
    assert np.allclose(scale_n[0], ref)
    assert np.allclose(mean_n[0], (kp.kappa * kp.mean + n * ybar) / (kp.kappa + n))
    assert kappa_n[0] == kp.kappa + n and dof_n[0] == kp.dof + n
    # component 2 is empty
    assert np.allclose(scale_n[2], kp.scale) and np.allclose(mean_n[2], kp.mean)


def test_run_storage_and_reproducibility(small, tmp_path):
    data, _ = small
    cfg = cavi.FisanConfig(L=5)
    one = gibbs.run(data, cfg, 11, 10, 1, make_rng(17))
    assert one.n_draws == 1
    a = gibbs.run(data, cfg, 60, 20, 4, make_rng(18))
    b = gibbs.run(data, cfg, 60, 20, 4, make_rng(18))
    assert a.n_draws == 10 and a.loglik.shape == (60,)
    for name in ("S", "M", "alpha", "mu", "prec", "group_weights", "loglik"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.allclose(a.group_weights.sum(axis=2), 1.0)
    with pytest.raises(ValueError):
        gibbs.run(data, cfg, 10, 10, 1, make_rng(0))


def test_chain_file_roundtrip(small, tmp_path):
    data, _ = small
    chain = gibbs.run(data, cavi.FsanConfig(K=4, L=5), 30, 10, 2, make_rng(19))
    path, side = chain.save(tmp_path / "chain.bin")
    raw = path.read_bytes()
    assert raw[:8] == gibbs.CHAIN_MAGIC
    version, n, ncol = struct.unpack("<IQQ", raw[8:28])
    assert (version, n) == (gibbs.CHAIN_VERSION, chain.n_draws)
    assert len(raw) == 28 + 8 * n * ncol
    back = gibbs.ChainStore.load(path)
    for name in ("S", "M", "mu", "prec", "group_weights", "loglik", "n_components"):
        assert np.array_equal(getattr(back, name), getattr(chain, name))
    assert back.meta == chain.meta and side.exists()


def test_geweke_rejects_large_configs():
    with pytest.raises(ValueError):
        gibbs.successive_conditional_sample(cavi.FsanConfig(K=3, L=2), 2, 3, 1, 10, make_rng(0))


def test_geweke_prior_alpha_moment():
    kp = cavi.KernelPrior.from_nig(0.0, 1.0, 3.0, 2.0)
    cfg = cavi.FisanConfig(L=2, b=0.5, kernel=kp)
    tab = gibbs.successive_conditional_sample(cfg, 2, 3, 1, 2000, make_rng(20))
    a = tab["prior"]["alpha"]
    assert abs(a.mean() - 1.0) < 3 * a.std() / math.sqrt(a.size)
    assert tab["conditional"]["occupied_obs"].max() <= 2


@pytest.mark.slow
def test_geweke_fisan_stick_update():
    kp = cavi.KernelPrior.from_nig(0.0, 1.0, 3.0, 2.0)
    cfg = cavi.FisanConfig(L=2, b=0.5, kernel=kp)
    tab = gibbs.successive_conditional_sample(cfg, 2, 3, 2, 20_000, make_rng(11))
    z = gibbs.geweke_zscores(tab)
    assert max(abs(v) for v in z.values()) < 3.0, z


def test_batch_means_se_iid():
    x = np.random.default_rng(1).normal(size=50_000)
    assert gibbs.batch_means_se(x) == pytest.approx(1 / math.sqrt(x.size), rel=0.3)
