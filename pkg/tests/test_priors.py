import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sanmix import priors as P
from sanmix.kernels import make_rng

FISAN = P.FiSAN(alpha=1.0, L=25, b=0.05)
FSAN = P.FSAN(a=0.05, K=20, L=25, b=0.05)


# --- closed forms ------------------------------------------------------------


def test_correlation_examples():
    assert P.correlation(FSAN) == pytest.approx(0.5657, abs=5e-5)
    assert P.correlation(P.CAM(1.0, 1.0)) == pytest.approx(5 / 6)
    assert P.correlation(FISAN) == pytest.approx(1 - 24 / 52.5)
    assert P.correlation(P.NDP(3.0, 1.0)) == pytest.approx(0.25)
    assert P.correlation(P.HHDP(1.0, 1.0, 1.0)) == pytest.approx(1 - 1 / 6)


def test_cocluster_examples():
    d, o = P.cocluster_probs(FISAN)
    assert d == pytest.approx(0.5)
    assert o == pytest.approx(28.5 / 112.5)
    assert P.cocluster_probs(FSAN)[0] == pytest.approx(0.525)
    assert P.cocluster_probs(P.FiSAN(2.0, 1, 0.3))[1] == pytest.approx(1.0)
    with pytest.raises(P.CapabilityError):
        P.cocluster_probs(P.CAM(1.0, 1.0))


def test_fsan_correlation_large_K_closed_form():
    a, L, b, K = 0.3, 10, 0.2, 10**6
    expected = 1 - a * (K - 1) * (L - 1) / (L * (K * a + 1) * (b + 1))
    assert P.correlation(P.FSAN(a, K, L, b)) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("bad", [dict(alpha=0.0, L=2, b=1.0), dict(alpha=1.0, L=0, b=1.0), dict(alpha=1.0, L=2, b=-1.0)])
def test_family_validation(bad):
    with pytest.raises(ValueError):
        P.FiSAN(**bad)


pos = st.floats(0.01, 20.0)
count = st.integers(1, 60)


@settings(max_examples=50)
@given(pos, count, pos, pos, count)
def test_correlation_range_and_monotonicity(alpha, L, b, a, K):
    for fam in (P.FiSAN(alpha, L, b), P.FSAN(a, K, L, b), P.NDP(alpha, b), P.CAM(alpha, b), P.HHDP(alpha, b, a)):
        assert 0 < P.correlation(fam) <= 1
    f1 = P.correlation(P.FiSAN(alpha, L, b))
    assert P.correlation(P.FiSAN(alpha, L, b * 1.5)) >= f1
    assert P.correlation(P.FiSAN(alpha, L + 1, b)) <= f1
    g1 = P.correlation(P.FSAN(a, K, L, b))
    assert P.correlation(P.FSAN(a, K, L, b * 1.5)) >= g1
    assert P.correlation(P.FSAN(a, K, L + 1, b)) <= g1


# --- Monte Carlo correlation -------------------------------------------------


def test_mc_ndp_fixed_matches_closed_form():
    est, se = P.mc_correlation(P.NDP(1.0, 1.0), {"alpha": P.Fixed(1.0)}, 0.3, 50_000, make_rng(1))
    assert abs(est - 0.5) < 3 * se


@pytest.mark.parametrize("h", [0.1, 0.5])
def test_mc_correlation_invariant_to_h(h):
    fam = P.FiSAN(1.5, 5, 0.5)
    est, se = P.mc_correlation(fam, {}, h, 50_000, make_rng(2))
    assert abs(est - P.correlation(fam)) < 3 * se


def test_mc_matches_quadrature_under_hyperprior():
    hyper = {"alpha": P.GammaHyper(1.0, 1.0)}
    fam = P.FiSAN(1.0, 5, 0.5)
    est, se = P.mc_correlation(fam, hyper, 0.3, 50_000, make_rng(3))
    assert abs(est - P.mean_correlation(fam, hyper)) < 3 * se


def test_mc_rejects_small_draws_and_unknown_params():
    with pytest.raises(ValueError):
        P.mc_correlation(FISAN, {}, 0.3, 5_000, make_rng(0))
    with pytest.raises(ValueError):
        P.mc_correlation(FISAN, {"beta": P.GammaHyper(1, 1)}, 0.3, 10_000, make_rng(0))


def test_truncation_error():
    with pytest.raises(P.TruncationError):
        P.truncated_sticks(make_rng(0), np.array([500.0]), max_atoms=64)


def test_truncated_sticks_residual():
    w = P.truncated_sticks(make_rng(0), np.array([0.5, 5.0, 20.0]))
    assert np.all(1 - w.sum(axis=1) < 1e-8)


# --- EPPF building blocks ----------------------------------------------------


@given(st.integers(1, 30), st.floats(0.01, 10.0))
def test_dirichlet_eppf_small_cases(L, b):
    assert P.dirichlet_eppf([1], L, b) == pytest.approx(0.0, abs=1e-12)
    same = math.exp(P.dirichlet_eppf([2], L, b))
    assert same == pytest.approx((b + 1) / (L * b + 1), rel=1e-10)
    if L >= 2:
        diff = math.exp(P.dirichlet_eppf([1, 1], L, b))
        assert diff == pytest.approx((L - 1) * b / (L * b + 1), rel=1e-10)
        assert same + diff == pytest.approx(1.0, rel=1e-12)


def test_dirichlet_eppf_infeasible():
    with pytest.raises(P.InfeasiblePartitionError):
        P.dirichlet_eppf([1, 1, 1], 2, 0.5)


def test_correction_constant_examples():
    assert math.exp(P.correction_constant(1, 0, 0, 2)) == pytest.approx(0.5)
    assert math.exp(P.correction_constant(0, 1, 1, 2)) == pytest.approx(0.5)
    assert P.correction_constant(0, 0, 0, 7) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(P.InfeasiblePartitionError):
        P.correction_constant(2, 1, 1, 3)


def test_two_sample_counts():
    c = P.TwoSampleCounts((2, 1, 0), (1, 0, 3))
    assert (c.s0, c.s1, c.s2, c.N1, c.N2, c.s) == (1, 1, 1, 3, 4, 3)
    assert P.TwoSampleCounts.from_labels([0, 0, 1, 0, 2, 2, 2], 3) == c
    with pytest.raises(ValueError):
        P.TwoSampleCounts((1,), (1, 2))


# --- pEPPF -------------------------------------------------------------------

SHARED = P.TwoSampleCounts((1,), (1,))
DISTINCT = P.TwoSampleCounts((1, 0), (0, 1))


def test_peppf_matches_cocluster():
    obs = P.cocluster_probs(FISAN)[1]
    assert math.exp(P.peppf(FISAN, SHARED)) == pytest.approx(0.253333, abs=1e-6)
    assert math.exp(P.peppf(FISAN, SHARED)) == pytest.approx(obs, rel=1e-12)
    assert math.exp(P.peppf(FISAN, DISTINCT)) == pytest.approx(1 - obs, rel=1e-12)
    assert math.exp(P.peppf(FSAN, SHARED)) == pytest.approx(P.cocluster_probs(FSAN)[1], rel=1e-12)


def test_peppf_capability():
    with pytest.raises(P.CapabilityError):
        P.peppf(P.CAM(1.0, 1.0), SHARED)


@pytest.mark.parametrize(
    "family,n1,n2",
    [
        (P.FiSAN(2.0, 3, 0.5), 1, 1),
        (P.FSAN(0.5, 2, 3, 0.5), 2, 2),
        (P.NDP(1.0, 1.0), 2, 1),
    ],
)
def test_total_mass_examples(family, n1, n2):
    assert P.peppf_total_mass(family, n1, n2) == pytest.approx(1.0, abs=1e-10)


def test_total_mass_limits():
    with pytest.raises(MemoryError):
        P.peppf_total_mass(P.FiSAN(1.0, 3, 0.5), 5, 4)
    with pytest.raises(MemoryError):
        P.peppf_total_mass(P.FiSAN(1.0, 7, 0.5), 1, 1)


def test_set_partitions_bell_numbers():
    assert [sum(1 for _ in P.set_partitions(n)) for n in range(1, 7)] == [1, 2, 5, 15, 52, 203]
    assert sum(1 for _ in P.set_partitions(4, 2)) == 8


def test_generative_examples():
    p, se = P.generative_peppf_frequency(FISAN, SHARED, 100_000, make_rng(4))
    assert abs(p - 0.253333) < 3 * se
    fsan_small = P.FSAN(0.5, 3, 4, 0.7)
    q, se = P.generative_peppf_frequency(fsan_small, DISTINCT, 100_000, make_rng(5))
    assert abs(q - (1 - P.cocluster_probs(fsan_small)[1])) < 3 * se
    one, _ = P.generative_peppf_frequency(P.FiSAN(1.0, 1, 0.5), SHARED, 10_000, make_rng(6))
    assert one == 1.0
    with pytest.raises(ValueError):
        P.generative_peppf_frequency(FISAN, SHARED, 100, make_rng(0))


def test_ndp_limit_gap_decreases():
    alpha, beta = 1.3, 0.8
    shape = P.TwoSampleCounts((2, 0, 1), (0, 2, 0))  # s0 = 0
    ref = math.exp(P.peppf(P.NDP(alpha, beta), shape))
    gaps = [abs(math.exp(P.peppf(P.FiSAN(alpha, L, beta / L), shape)) - ref) for L in (10, 100, 1000, 10_000)]
    assert all(x > y for x, y in zip(gaps, gaps[1:]))
