"""Posterior interrogation: MAP selection, PPC statistics, SBC calibration."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adexsbi.config import CODE_MAX, desk_scale
from adexsbi.features import FEATURE_NAMES
from adexsbi.inference import (
    PosteriorSampleSet,
    posterior_predictive,
    ppc_report,
    quartiles_linear,
    sbc,
    select_map_sample,
    spike_count_matches,
)

CFG = desk_scale()
TARGET_CODE = np.array([872, 94, 894, 744, 184, 850, 1])


def sample_set(codes, log_probs):
    codes = np.atleast_2d(codes)
    return PosteriorSampleSet(observation_id="t", codes=codes,
                              log_probs=np.asarray(log_probs, dtype=float),
                              clipped=np.zeros(len(codes), dtype=bool),
                              model_id="m", seed=0)


# -- MAP selection --------------------------------------------------------

def test_single_sample_is_map():
    s = sample_set(TARGET_CODE, [-3.0])
    assert np.array_equal(select_map_sample(s), TARGET_CODE)


def test_known_max_returned_and_ties_break_low():
    codes = np.tile(TARGET_CODE, (4, 1))
    codes[2, 0] = 100
    codes[3, 0] = 200
    s = sample_set(codes, [-5.0, -1.0, -1.0, -4.0])
    assert np.array_equal(select_map_sample(s), codes[1])


def test_map_invariant_under_constant_shift():
    rng = np.random.default_rng(0)
    codes = rng.integers(0, CODE_MAX + 1, size=(50, 7))
    lp = rng.normal(size=50)
    a = select_map_sample(sample_set(codes, lp))
    b = select_map_sample(sample_set(codes, lp + 123.4))
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(-10**6, 10**6), min_size=2, max_size=40),
       st.floats(0.1, 10), st.floats(-5, 5))
def test_map_invariant_under_increasing_transforms(lp_set, scale, shift):
    # distinct, well-separated densities keep the argmax stable under any
    # strictly increasing affine transform
    lp = np.array(sorted(lp_set), dtype=float)
    rng = np.random.default_rng(len(lp))
    rng.shuffle(lp)
    codes = rng.integers(0, CODE_MAX + 1, size=(len(lp), 7))
    a = select_map_sample(sample_set(codes, lp))
    b = select_map_sample(sample_set(codes, scale * lp + shift))
    assert np.array_equal(a, b)


def test_empty_and_nonfinite_rejected():
    with pytest.raises(ValueError):
        select_map_sample(sample_set(np.zeros((0, 7), dtype=int), []))
    with pytest.raises(ValueError):
        PosteriorSampleSet(observation_id="t", codes=TARGET_CODE[None],
                           log_probs=np.array([np.nan]),
                           clipped=np.array([False]), model_id="m", seed=0)


# -- posterior predictive ---------------------------------------------------

def test_noiseless_repeats_have_zero_spread():
    import dataclasses

    from adexsbi.config import NoiseCfg

    cfg = dataclasses.replace(CFG, noise=NoiseCfg(sigma_current=0.0))
    pred = posterior_predictive(TARGET_CODE[None], cfg, seed=1, trials_per_code=20)
    assert len(np.unique(pred.spike_counts)) == 1
    isi = pred.feature_values[:, FEATURE_NAMES.index("isi_mean")]
    assert np.all(isi == isi[0])


def test_noisy_repeats_show_isi_spread():
    pred = posterior_predictive(TARGET_CODE[None], CFG, seed=2, trials_per_code=30)
    isi = pred.feature_values[:, FEATURE_NAMES.index("isi_mean")]
    valid = pred.feature_valid[:, FEATURE_NAMES.index("isi_mean")]
    assert valid.all()
    assert isi.std() > 0.0


def test_predictive_deterministic_given_seed():
    a = posterior_predictive(TARGET_CODE[None], CFG, seed=3, trials_per_code=2)
    b = posterior_predictive(TARGET_CODE[None], CFG, seed=3, trials_per_code=2)
    assert np.array_equal(a.feature_values, b.feature_values)
    assert np.array_equal(a.traces, b.traces)


# -- PPC quartiles and whiskers ---------------------------------------------

def test_quartiles_match_hand_values():
    q1, med, q3 = quartiles_linear(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert (q1, med, q3) == (2.0, 3.0, 4.0)


def sort_based_quantile(values, q):
    """Independent linear-interpolation quantile oracle."""
    v = np.sort(np.asarray(values, dtype=float))
    pos = q * (len(v) - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return v[lo] * (1 - frac) + v[hi] * frac


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=60))
def test_quartiles_match_sort_oracle_on_integers(values):
    q1, med, q3 = quartiles_linear(np.array(values, dtype=float))
    assert q1 == sort_based_quantile(values, 0.25)
    assert med == sort_based_quantile(values, 0.5)
    assert q3 == sort_based_quantile(values, 0.75)


def make_predictive(values_by_feature, valid=None):
    """Minimal PredictiveResult carrying given per-feature sample columns."""
    from adexsbi.inference import PredictiveResult

    m = len(next(iter(values_by_feature.values())))
    fv = np.zeros((m, len(FEATURE_NAMES)))
    va = np.ones((m, len(FEATURE_NAMES)), dtype=bool)
    for name, col in values_by_feature.items():
        fv[:, FEATURE_NAMES.index(name)] = col
    if valid is not None:
        for name, col in valid.items():
            va[:, FEATURE_NAMES.index(name)] = col
    return PredictiveResult(codes=np.zeros((m, 7), dtype=int), feature_values=fv,
                            feature_valid=va, spike_counts=np.zeros(m, dtype=int),
                            pathological=np.zeros(m, dtype=bool),
                            traces=np.zeros((m, 4), dtype=np.float32), spikes=[])


def neutral_target():
    return np.zeros(len(FEATURE_NAMES)), np.ones(len(FEATURE_NAMES), dtype=bool)


def test_identical_values_collapse_box():
    pred = make_predictive({"rate": np.full(10, 7.0)})
    ref = make_predictive({"rate": np.full(5, 7.0)})
    tv, tval = neutral_target()
    tv[FEATURE_NAMES.index("rate")] = 7.0
    report = ppc_report(tv, tval, pred, ref)
    row = report.row("rate")
    assert row.q1 == row.median == row.q3 == 7.0
    assert row.whisker_lo == row.whisker_hi == 7.0
    assert row.target_in_iqr


def test_hand_quartiles_and_in_iqr_flag():
    pred = make_predictive({"rate": np.array([1.0, 2.0, 3.0, 4.0, 5.0])})
    ref = make_predictive({"rate": np.full(4, 3.0)})
    tv, tval = neutral_target()
    tv[FEATURE_NAMES.index("rate")] = 3.0
    report = ppc_report(tv, tval, pred, ref)
    row = report.row("rate")
    assert (row.q1, row.median, row.q3) == (2.0, 3.0, 4.0)
    assert row.target_in_iqr


def test_outlier_beyond_whisker_excluded():
    values = np.array([10.0, 11.0, 12.0, 13.0, 14.0, 40.0])
    pred = make_predictive({"rate": values})
    ref = make_predictive({"rate": values})
    tv, tval = neutral_target()
    report = ppc_report(tv, tval, pred, ref)
    row = report.row("rate")
    iqr = row.q3 - row.q1
    assert 40.0 > row.q3 + 1.5 * iqr
    assert row.whisker_hi == 14.0
    assert row.whisker_lo == 10.0


def test_invalid_entries_excluded_and_counted():
    col = np.array([1.0, 2.0, 3.0, 4.0, 99.0, 99.0])
    ok = np.array([True, True, True, True, False, False])
    pred = make_predictive({"latency": col}, valid={"latency": ok})
    ref = make_predictive({"latency": col[:4]})
    tv, tval = neutral_target()
    report = ppc_report(tv, tval, pred, ref)
    row = report.row("latency")
    assert row.n_valid == 4
    assert row.q3 <= 4.0


def test_too_few_valid_samples_flagged():
    pred = make_predictive({"latency": np.array([1.0, 2.0, 3.0, 4.0])},
                           valid={"latency": np.array([True, True, False, False])})
    ref = make_predictive({"latency": np.array([1.0, 2.0, 3.0, 4.0])})
    tv, tval = neutral_target()
    report = ppc_report(tv, tval, pred, ref)
    row = report.row("latency")
    assert row.n_valid == 2
    assert np.isnan(row.q1)
    assert not row.target_in_iqr


# -- SBC ---------------------------------------------------------------------

def uniform_prior_1d(rng):
    return rng.uniform(0.0, CODE_MAX, size=1)


def test_sbc_exact_posterior_uniform_ranks():
    """Posterior == prior when the observation is uninformative: ranks uniform."""
    passes = 0
    for rep in range(10):
        report = sbc(
            sample_prior_fn=uniform_prior_1d,
            simulate_fn=lambda theta, rng: None,
            posterior_fn=lambda obs, n, rng: rng.uniform(0.0, CODE_MAX, size=(n, 1)),
            n_datasets=300, n_posterior=99, seed=1000 + rep, dim=1,
        )
        assert report.ranks.min() >= 0 and report.ranks.max() <= 99
        assert report.histograms.sum() == 300
        if report.p_values[0] > 0.01:
            passes += 1
    assert passes >= 9


def test_sbc_shifted_posterior_rejected():
    report = sbc(
        sample_prior_fn=uniform_prior_1d,
        simulate_fn=lambda theta, rng: None,
        posterior_fn=lambda obs, n, rng: rng.uniform(0.0, CODE_MAX, size=(n, 1)) + 100.0,
        n_datasets=300, n_posterior=99, seed=77, dim=1,
    )
    assert report.p_values[0] < 1e-3


def test_sbc_gaussian_exact_sampler_calibrated(gaussian_toy):
    """Analytic-posterior sampler on the toy passes uniformity per dimension."""
    toy = gaussian_toy

    def prior_fn(rng):
        return rng.normal(size=2) * toy.sigma0

    def simulate_fn(theta, rng):
        return theta + toy.sigma_e * rng.normal(size=2)

    def posterior_fn(x, n, rng):
        return toy.shrink * x + np.sqrt(toy.post_var) * rng.normal(size=(n, 2))

    report = sbc(prior_fn, simulate_fn, posterior_fn, n_datasets=400,
                 n_posterior=99, seed=5, dim=2)
    assert np.all(report.p_values > 0.01)


def test_sbc_bin_divisibility_enforced():
    with pytest.raises(ValueError, match="divisible"):
        sbc(uniform_prior_1d, lambda t, r: None,
            lambda o, n, r: np.zeros((n, 1)), n_datasets=10, n_posterior=100,
            seed=0, dim=1)


def test_sbc_ranks_deterministic():
    kwargs = dict(
        sample_prior_fn=uniform_prior_1d,
        simulate_fn=lambda theta, rng: None,
        posterior_fn=lambda obs, n, rng: rng.uniform(0.0, CODE_MAX, size=(n, 1)),
        n_datasets=50, n_posterior=99, seed=3, dim=1,
    )
    assert np.array_equal(sbc(**kwargs).ranks, sbc(**kwargs).ranks)


# -- count matching rule -------------------------------------------------------

def test_spike_count_match_rule():
    assert spike_count_matches(10, 11)    # within +-1
    assert spike_count_matches(10, 12)    # within 20%
    assert not spike_count_matches(10, 13)
    assert spike_count_matches(3, 2)
    assert not spike_count_matches(3, 5)
    assert spike_count_matches(50, 60)
