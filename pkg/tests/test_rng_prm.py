"""Random streams and marked-path sampling: addressing, laws, determinism."""

import math

import numpy as np
import pytest
from scipy.stats import chisquare, kstest, poisson

from lentparticle.measures import power_law
from lentparticle.prm import (RADEMACHER, attach_rho_marks, merge_paths,
                              nested_brownian, sample_path)
from lentparticle.rng import TAG_MARK, TAG_RHO, TAG_TIME, RngStream

SPEC = power_law(0.5, ymax=1.0, trunc=0.01)   # mass 18


def test_stream_reproducible():
    a = RngStream(seed=7, path=3, tag=TAG_MARK).generator().random(5)
    b = RngStream(seed=7, path=3, tag=TAG_MARK).generator().random(5)
    np.testing.assert_array_equal(a, b)


def test_stream_addresses_distinct():
    base = RngStream(seed=7, path=3)
    draws = {tag: base.child(tag=tag).generator().random(4).tobytes()
             for tag in (TAG_MARK, TAG_TIME, TAG_RHO)}
    assert len(set(draws.values())) == 3
    assert (base.child(path=4).generator().random(4).tobytes()
            != base.generator().random(4).tobytes())


def test_child_overrides_coordinates():
    s = RngStream(seed=1).child(path=5, jump=2, tag=TAG_RHO)
    assert (s.path, s.jump, s.tag) == (5, 2, TAG_RHO)
    assert s.seed == 1


# ---------------------------------------------------------------------------
# sample_path
# ---------------------------------------------------------------------------

def test_path_counts_poisson_moments():
    counts = np.array([sample_path(SPEC, 1.0, RngStream(seed=11, path=i + 1)).n_jumps
                       for i in range(10_000)])
    se_mean = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - 18.0) < 3 * se_mean
    # Var(sample variance) for Poisson ~ (2 lam^2 + lam)/n
    se_var = math.sqrt((2 * 18.0 ** 2 + 18.0) / len(counts))
    assert abs(counts.var(ddof=1) - 18.0) < 3 * se_var


def test_path_times_sorted_in_horizon():
    p = sample_path(SPEC, 2.0, RngStream(seed=4))
    assert np.all(np.diff(p.times) > 0)
    assert p.times[0] > 0 and p.times[-1] <= 2.0
    assert len(p.marks) == p.n_jumps


def test_zero_mass_gives_empty_path():
    p = sample_path(power_law(0.5, ymax=1.0, trunc=2.0), 1.0, RngStream(seed=4))
    assert p.n_jumps == 0


def test_jump_times_uniform_on_horizon():
    # conditionally on the count, jump times are uniform order statistics,
    # so times pooled over many paths are uniform on the horizon
    times = []
    i = 0
    while len(times) < 10_000:
        p = sample_path(SPEC, 1.0, RngStream(seed=12, path=i + 1))
        times.extend(p.times)
        i += 1
    stat = kstest(np.array(times[:10_000]), "uniform").statistic
    assert stat < 1.63 / math.sqrt(10_000)


def test_path_reproducible_bit_exact():
    a = sample_path(SPEC, 1.0, RngStream(seed=5, path=9))
    b = sample_path(SPEC, 1.0, RngStream(seed=5, path=9))
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.marks, b.marks)


def test_superposition_counts():
    # merged independent paths of mass 18 each ~ Poisson(36): chi-square on
    # binned counts against the analytic pmf
    counts = []
    for i in range(4000):
        a = sample_path(SPEC, 1.0, RngStream(seed=21, path=i + 1))
        b = sample_path(SPEC, 1.0, RngStream(seed=22, path=i + 1))
        counts.append(merge_paths(a, b).n_jumps)
    counts = np.array(counts)
    edges = [0, 28, 32, 36, 40, 44, 1000]
    obs = np.histogram(counts, bins=edges)[0]
    cdf = poisson(36.0).cdf
    exp = np.diff([0] + [cdf(e - 1) for e in edges[1:-1]] + [1]) * len(counts)
    assert chisquare(obs, exp).pvalue > 0.01


def test_merge_requires_same_horizon():
    a = sample_path(SPEC, 1.0, RngStream(seed=1))
    b = sample_path(SPEC, 2.0, RngStream(seed=2))
    with pytest.raises(ValueError):
        merge_paths(a, b)


# ---------------------------------------------------------------------------
# rho enrichment
# ---------------------------------------------------------------------------

def test_rho_blocks_deterministic():
    p = sample_path(SPEC, 1.0, RngStream(seed=6))
    a = attach_rho_marks(p, 2, RngStream(seed=30))
    b = attach_rho_marks(p, 2, RngStream(seed=30))
    np.testing.assert_array_equal(a.rho_blocks, b.rho_blocks)
    assert a.rho_blocks.shape == (2, p.n_jumps, 1)


def test_rho_orders_uncorrelated():
    vals = []
    for i in range(2000):
        p = sample_path(SPEC, 1.0, RngStream(seed=31, path=i + 1))
        e = attach_rho_marks(p, 2, RngStream(seed=32, path=i + 1))
        if p.n_jumps:
            vals.append(np.column_stack([e.rho_blocks[0, :, 0], e.rho_blocks[1, :, 0]]))
    vals = np.vstack(vals)[:10_000]
    corr = np.corrcoef(vals.T)[0, 1]
    assert abs(corr) < 3.0 / math.sqrt(len(vals))


def test_rho_marginal_gaussian():
    p = sample_path(SPEC, 10.0, RngStream(seed=33))
    e = attach_rho_marks(p, 1, RngStream(seed=34), block_dim=64)
    stat = kstest(e.rho_blocks.ravel(), "norm").statistic
    assert stat < 1.63 / math.sqrt(e.rho_blocks.size)


def test_rho_rademacher_values():
    p = sample_path(SPEC, 1.0, RngStream(seed=35))
    e = attach_rho_marks(p, 1, RngStream(seed=36), basis=RADEMACHER)
    assert set(np.unique(e.rho_blocks)) <= {-1.0, 1.0}


def test_rho_order_validation():
    p = sample_path(SPEC, 1.0, RngStream(seed=35))
    with pytest.raises(ValueError):
        attach_rho_marks(p, 0, RngStream(seed=1))


# ---------------------------------------------------------------------------
# nested Brownian marks
# ---------------------------------------------------------------------------

def test_nested_brownian_terminal_variance():
    y = 0.7
    terms = []
    for i in range(10_000):
        p = sample_path(SPEC, 1.0, RngStream(seed=40, path=i + 1))
        if p.n_jumps == 0:
            continue
        incs = nested_brownian(p, 0, y, step=0.1)
        terms.append(float(incs.sum()))
    terms = np.array(terms)
    se = math.sqrt(2.0 / len(terms)) * y   # SE of the sample variance
    assert abs(terms.var(ddof=1) - y) < 3 * se


def test_nested_brownian_zero_duration():
    p = sample_path(SPEC, 1.0, RngStream(seed=41))
    assert nested_brownian(p, 0, 0.0, step=0.1).shape == (0, 1)


def test_nested_brownian_step_widths():
    # last increment is shortened so the widths cover [0, y] exactly
    p = sample_path(SPEC, 1.0, RngStream(seed=41))
    incs = nested_brownian(p, 0, 0.25, step=0.1)
    assert incs.shape == (3, 1)
    again = nested_brownian(p, 0, 0.25, step=0.1)
    np.testing.assert_array_equal(incs, again)
