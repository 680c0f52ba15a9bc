import math

import numpy as np
import pytest

from gwve.offspring import (
    Binomial,
    DistributionError,
    FiniteTable,
    Geometric,
    Poisson,
)
from gwve.streams import stream


def brute_factorial_moment(dist, order, kmax=400):
    """Independent oracle: direct pmf summation of E[k (k-1) ... (k-order+1)]."""
    total = 0.0
    for k in range(kmax):
        w = 1.0
        for j in range(order):
            w *= k - j
        total += w * dist.pmf(k)
    return total


# ----------------------------------------------------------------------
# pmf / pgf evaluation


def test_geometric_pmf_values(geo):
    # q(k) = 2^-(k+1) from expanding 1/(2-s)
    assert geo.pmf(0) == 0.5
    assert geo.pmf(3) == pytest.approx(1 / 16, abs=1e-15)


def test_table_pmf_readback(table):
    assert table.pmf(2) == 0.25
    assert table.pmf(7) == 0.0


def test_pgf_second_derivative_geometric(geo):
    # f''(s) = 2/(2-s)^3
    assert geo.pgf(1.0, 2) == pytest.approx(2.0, abs=1e-15)
    assert geo.pgf(0.5, 2) == pytest.approx(2 / 1.5**3, abs=1e-15)


def test_pgf_first_derivative_table(table):
    # f(s) = (1+s)^2/4 so f'(1) = 1
    assert table.pgf(1.0, 1) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize(
    "dist",
    [Geometric(0.5), Geometric(0.3), Poisson(1.0), Poisson(2.5),
     Binomial(2, 0.75), FiniteTable([0.25, 0.5, 0.25]), FiniteTable([0.1, 0.2, 0.3, 0.4])],
)
def test_pgf_normalization_at_one(dist):
    assert dist.pgf(1.0, 0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "dist",
    [Geometric(0.5), Poisson(1.5), Binomial(3, 0.4), FiniteTable([0.25, 0.5, 0.25])],
)
@pytest.mark.parametrize("order", [1, 2, 3])
def test_pgf_at_one_matches_direct_summation(dist, order):
    closed = dist.pgf(1.0, order)
    assert closed == pytest.approx(brute_factorial_moment(dist, order), abs=1e-12)


def test_pgf_rejects_bad_order(geo):
    with pytest.raises(ValueError):
        geo.pgf(0.5, 4)


def test_pgf_derivatives_match_finite_differences():
    h = 1e-6
    for dist in (Geometric(0.4), Poisson(1.2), Binomial(4, 0.3), FiniteTable([0.2, 0.3, 0.5])):
        for s in (0.2, 0.5, 0.9):
            fd1 = (dist.pgf(s + h) - dist.pgf(s - h)) / (2 * h)
            fd2 = (dist.pgf(s + h) - 2 * dist.pgf(s) + dist.pgf(s - h)) / h**2
            assert dist.pgf(s, 1) == pytest.approx(fd1, rel=1e-7, abs=1e-6)
            assert dist.pgf(s, 2) == pytest.approx(fd2, rel=1e-3, abs=1e-3)


# ----------------------------------------------------------------------
# nu and the diagnostic ratios


def test_nu_values(geo, table):
    assert geo.nu() == pytest.approx(2.0, abs=1e-15)
    assert table.nu() == pytest.approx(0.5, abs=1e-15)
    assert Poisson(1.0).nu() == pytest.approx(1.0, abs=1e-15)


def test_nu_degenerate_mean():
    with pytest.raises(DistributionError, match="degenerate mean"):
        FiniteTable([1.0]).nu()


def test_regularity_ratio_table(table):
    # E[X^2 1{X>=2}] = 1, E[X 1{X>=2}] = 1/2, E[X | X>=1] = 4/3
    assert table.regularity_ratio() == pytest.approx(1.5, abs=1e-12)


def test_regularity_ratio_point_mass_at_one_errors():
    with pytest.raises(DistributionError, match="ratio undefined"):
        FiniteTable([0.0, 1.0]).regularity_ratio()


def test_regularity_ratio_geometric_matches_truncated_sums(geo):
    # Independent truncated-summation oracle.
    ks = np.arange(2000)
    q = 0.5 ** (ks + 1)
    num = float(np.sum(ks[2:] ** 2 * q[2:]))
    den = float(np.sum(ks[2:] * q[2:])) * (float(np.sum(ks * q)) / float(np.sum(q[1:])))
    expected = num / den
    got = geo.regularity_ratio()
    assert got > 0
    assert got == pytest.approx(expected, rel=1e-10)


def test_condition_a_ratio_values(geo, table):
    assert geo.condition_a_ratio() == pytest.approx(1.5, abs=1e-12)
    assert Poisson(1.0).condition_a_ratio() == pytest.approx(0.5, abs=1e-12)
    assert table.condition_a_ratio() == 0.0


def test_condition_a_ratio_needs_second_moment():
    with pytest.raises(DistributionError):
        FiniteTable([0.5, 0.5]).condition_a_ratio()


# ----------------------------------------------------------------------
# size-biased and pair-biased transforms


def test_size_biased_geometric_values(geo):
    sb = geo.size_biased()
    # k * 2^-(k+1) / 1
    assert sb.pmf(0) == 0.0
    assert sb.pmf(1) == pytest.approx(0.25, abs=1e-13)
    assert sb.pmf(2) == pytest.approx(0.25, abs=1e-13)
    assert sb.pmf(3) == pytest.approx(3 / 16, abs=1e-13)


def test_size_biased_table(table):
    assert np.allclose(table.size_biased().probs, [0.0, 0.5, 0.5], atol=1e-15)


def test_size_biased_poisson_is_shifted_poisson():
    po = Poisson(1.0)
    sb = po.size_biased()
    for k in range(12):
        assert sb.pmf(k + 1) == pytest.approx(po.pmf(k), abs=1e-13)


def test_size_biased_mean_identity():
    # mean of the size-biased law is 1 + f''(1)/f'(1)
    for dist in (FiniteTable([0.25, 0.5, 0.25]), FiniteTable([0.1, 0.3, 0.2, 0.4]), Geometric(0.5)):
        sb = dist.size_biased()
        expected = 1.0 + dist.second_factorial() / dist.mean()
        assert sb.mean() == pytest.approx(expected, abs=1e-12)


def test_size_biased_degenerate_errors():
    with pytest.raises(DistributionError):
        FiniteTable([1.0]).size_biased()


def test_pair_biased_geometric_values(geo):
    pb = geo.pair_biased()
    # k(k-1) 2^-(k+1) / 2
    assert pb.pmf(0) == 0.0 and pb.pmf(1) == 0.0
    assert pb.pmf(2) == pytest.approx(1 / 8, abs=1e-13)
    assert pb.pmf(3) == pytest.approx(3 / 16, abs=1e-13)


def test_pair_biased_table_point_mass(table):
    pb = table.pair_biased()
    assert pb.pmf(2) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("dist", [Geometric(0.5), Poisson(2.0), Binomial(3, 0.5)])
def test_pair_biased_normalization(dist):
    assert math.fsum(dist.pair_biased().probs.tolist()) == pytest.approx(1.0, abs=1e-12)


def test_pair_biased_needs_pairs():
    with pytest.raises(DistributionError, match="no pair-biased law"):
        FiniteTable([0.5, 0.5]).pair_biased()


# ----------------------------------------------------------------------
# shift_down


def test_shift_down_size_biased_geometric(geo):
    shifted = geo.size_biased().shift_down(1)
    for k in range(10):
        assert shifted.pmf(k) == pytest.approx((k + 1) * 0.5 ** (k + 2), abs=1e-13)


def test_shift_down_pair_biased_table(table):
    shifted = table.pair_biased().shift_down(2)
    assert shifted.pmf(0) == pytest.approx(1.0, abs=1e-15)


def test_shift_down_precondition(geo, table):
    with pytest.raises(DistributionError, match="shift precondition"):
        table.shift_down(1)
    with pytest.raises(DistributionError, match="shift precondition"):
        geo.shift_down(1)


@pytest.mark.parametrize("dist", [Geometric(0.5), Poisson(1.0), Binomial(3, 0.6),
                                  FiniteTable([0.25, 0.5, 0.25])])
def test_shifted_size_biased_pgf_is_normalized_derivative(dist):
    # pgf of the down-shifted size-biased law equals f'(s)/f'(1)
    shifted = dist.size_biased().shift_down(1)
    s = np.linspace(0.0, 1.0, 21)
    assert np.max(np.abs(shifted.pgf(s) - dist.pgf(s, 1) / dist.mean())) < 1e-12


# ----------------------------------------------------------------------
# table validation


def test_table_rejects_negative_and_bad_sum():
    with pytest.raises(DistributionError):
        FiniteTable([0.5, -0.1, 0.6])
    with pytest.raises(DistributionError):
        FiniteTable([0.5, 0.4])


def test_table_renormalizes_within_tolerance():
    t = FiniteTable([0.25, 0.5, 0.25 + 5e-13])
    assert math.fsum(t.probs.tolist()) == pytest.approx(1.0, abs=1e-15)


# ----------------------------------------------------------------------
# sampling


def test_sample_point_mass():
    rng = stream(1, "pm")
    pm = FiniteTable([0.0, 0.0, 1.0])
    draws = pm.sample(rng, size=100)
    assert np.all(draws == 2)


def test_sample_table_mean_within_clt_band(table):
    rng = stream(2, "table-mean")
    n = 10**6
    draws = table.sample(rng, size=n)
    # mean 1, variance 1/2: 3 sigma band
    assert abs(draws.mean() - 1.0) < 3 * math.sqrt(0.5 / n)


def test_sample_geometric_zero_frequency(geo):
    rng = stream(3, "geo-zero")
    n = 10**6
    draws = geo.sample(rng, size=n)
    phat = np.mean(draws == 0)
    assert abs(phat - 0.5) < 3 * math.sqrt(0.25 / n)


@pytest.mark.parametrize("dist", [Geometric(0.5), Poisson(1.0), Binomial(2, 0.75),
                                  FiniteTable([0.25, 0.5, 0.25])])
def test_sample_empirical_tv(dist):
    rng = stream(4, "tv", repr(dist))
    n = 10**6
    draws = dist.sample(rng, size=n)
    kmax = 20
    counts = np.bincount(np.minimum(draws, kmax + 1), minlength=kmax + 2)
    emp = counts / n
    exact = np.array([dist.pmf(k) for k in range(kmax + 1)] + [0.0])
    exact[-1] = 1.0 - exact[:-1].sum()
    tv = 0.5 * np.abs(emp - exact).sum()
    assert tv < 0.005


@pytest.mark.parametrize("dist", [Geometric(0.5), Poisson(1.3), Binomial(3, 0.4),
                                  FiniteTable([0.25, 0.5, 0.25])])
def test_sum_sample_matches_mean(dist):
    rng = stream(5, "sums", repr(dist))
    counts = np.array([0, 1, 2, 50, 1000] * 2000)
    sums = dist.sum_sample(rng, counts)
    assert np.all(sums[counts == 0] == 0)
    total = counts.sum()
    assert sums.sum() / total == pytest.approx(dist.mean(), rel=5e-3)
