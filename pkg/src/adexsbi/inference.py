"""Posterior interrogation: sampling, MAP selection, predictive checks, calibration.

All routines are deterministic given their seeds. Posterior draws are
rounded to integer codes, clipped to the digital range (clipped draws stay
flagged), and carry the model log density evaluated at the stored code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .codec import validate_codes
from .config import CODE_MAX, N_PARAMS, PipelineConfig
from .dataset import Dataset, simulate_record, stimulus_from_config
from .features import FEATURE_NAMES, FLAGGED, extract_features
from .nde import NdeModel

log = logging.getLogger(__name__)


@dataclass
class PosteriorSampleSet:
    observation_id: str
    codes: np.ndarray       # (n, 7) int64, clipped to the digital range
    log_probs: np.ndarray   # (n,) density at the stored code
    clipped: np.ndarray     # (n,) bool, True when the raw draw left the range
    model_id: str
    seed: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.log_probs)):
            raise ValueError("posterior sample set contains non-finite log densities")


def posterior_samples(model: NdeModel, condition: np.ndarray, n: int, seed: int,
                      observation_id: str = "", model_id: str = "") -> PosteriorSampleSet:
    """Draw n integer code vectors from the flow posterior for one observation."""
    rng = np.random.default_rng(seed)
    raw = model.flow.sample(condition, n, rng)
    rounded = np.rint(raw)
    clipped = np.any((rounded < 0) | (rounded > CODE_MAX), axis=1)
    codes = np.clip(rounded, 0, CODE_MAX).astype(np.int64)
    log_probs = model.log_prob(codes.astype(np.float64), condition)
    return PosteriorSampleSet(observation_id=observation_id, codes=codes,
                              log_probs=log_probs, clipped=clipped,
                              model_id=model_id, seed=seed)


def select_map_sample(samples: PosteriorSampleSet) -> np.ndarray:
    """The drawn code with the highest model density; first index wins ties."""
    if len(samples.log_probs) == 0:
        raise ValueError("empty posterior sample set")
    finite = np.isfinite(samples.log_probs)
    if not finite.any():
        raise ValueError("all sample log densities are non-finite")
    return samples.codes[int(np.argmax(samples.log_probs))].copy()


@dataclass
class PredictiveResult:
    codes: np.ndarray            # (m, 7) simulated codes
    feature_values: np.ndarray   # (m, 12)
    feature_valid: np.ndarray    # (m, 12) bool
    spike_counts: np.ndarray     # (m,) in-stimulus counts
    pathological: np.ndarray     # (m,) bool
    traces: np.ndarray           # (m, n_grid) float32
    spikes: list = field(default_factory=list)


def posterior_predictive(codes: np.ndarray, cfg: PipelineConfig, seed: int,
                         trials_per_code: int = 1, jobs: int = 1) -> PredictiveResult:
    """Simulate each code with fresh derived seeds and extract features."""
    codes = validate_codes(np.atleast_2d(codes))
    stim = stimulus_from_config(cfg)
    tasks = []
    for i, code in enumerate(codes):
        for trial in range(trials_per_code):
            record_seed = int(np.random.SeedSequence((seed, i, trial))
                              .generate_state(1, np.uint64)[0])
            tasks.append((code, record_seed))
    if jobs > 1:
        from joblib import Parallel, delayed

        sims = Parallel(n_jobs=jobs, batch_size=64)(
            delayed(simulate_record)(code, s, cfg) for code, s in tasks
        )
    else:
        sims = [simulate_record(code, s, cfg) for code, s in tasks]
    rows = [(code, *sim) for (code, _), sim in zip(tasks, sims)]

    m = len(rows)
    out = PredictiveResult(
        codes=np.stack([r[0] for r in rows]),
        feature_values=np.stack([r[3].values for r in rows]),
        feature_valid=np.stack([r[3].valid for r in rows]),
        spike_counts=np.zeros(m, dtype=int),
        pathological=np.array([r[4] for r in rows], dtype=bool),
        traces=np.stack([r[1] for r in rows]),
        spikes=[r[2] for r in rows],
    )
    lo, hi = stim.onset, stim.onset + stim.duration
    for i, r in enumerate(rows):
        s = r[2]
        out.spike_counts[i] = int(np.sum((s >= lo) & (s < hi)))
    if out.pathological.any():
        log.info("%d of %d predictive simulations pathological",
                 int(out.pathological.sum()), m)
    return out


# -- posterior predictive check ------------------------------------------

def quartiles_linear(values: np.ndarray) -> tuple[float, float, float]:
    """Q1/median/Q3 by linear interpolation between order statistics."""
    q1, med, q3 = np.quantile(np.asarray(values, dtype=np.float64),
                              [0.25, 0.5, 0.75], method="linear")
    return float(q1), float(med), float(q3)


@dataclass
class PPCFeatureRow:
    name: str
    target: float
    target_valid: bool
    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    ref_q1: float
    ref_median: float
    ref_q3: float
    n_valid: int
    target_in_iqr: bool


@dataclass
class PPCReport:
    rows: list
    n_predictive: int
    n_excluded: int

    def row(self, name: str) -> PPCFeatureRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _whiskers(values: np.ndarray, q1: float, q3: float) -> tuple[float, float]:
    iqr = q3 - q1
    lo_bound = q1 - 1.5 * iqr
    hi_bound = q3 + 1.5 * iqr
    inside = values[(values >= lo_bound) & (values <= hi_bound)]
    if len(inside) == 0:
        return q1, q3
    return float(inside.min()), float(inside.max())


def ppc_report(target_values: np.ndarray, target_valid: np.ndarray,
               predictive: PredictiveResult, reference: PredictiveResult,
               min_samples: int = 4) -> PPCReport:
    """Per-feature box statistics of predictive vs target and reference.

    Pathological simulations and invalid feature entries are excluded from
    the quartiles; exclusions are counted in the report.
    """
    ok_pred = ~predictive.pathological
    ok_ref = ~reference.pathological
    rows = []
    n_excluded = int(predictive.pathological.sum())
    for j, name in enumerate(FEATURE_NAMES):
        pv = predictive.feature_values[ok_pred, j]
        pvalid = predictive.feature_valid[ok_pred, j]
        pv = pv[pvalid]
        if len(pv) < min_samples:
            log.warning("feature %s: only %d valid predictive samples", name, len(pv))
            rows.append(PPCFeatureRow(name=name, target=float(target_values[j]),
                                      target_valid=bool(target_valid[j]),
                                      q1=np.nan, median=np.nan, q3=np.nan,
                                      whisker_lo=np.nan, whisker_hi=np.nan,
                                      ref_q1=np.nan, ref_median=np.nan, ref_q3=np.nan,
                                      n_valid=len(pv), target_in_iqr=False))
            continue
        q1, med, q3 = quartiles_linear(pv)
        w_lo, w_hi = _whiskers(pv, q1, q3)
        rv = reference.feature_values[ok_ref, j]
        rvalid = reference.feature_valid[ok_ref, j]
        rv = rv[rvalid]
        if len(rv) >= 2:
            r1, rmed, r3 = quartiles_linear(rv)
        else:
            r1 = rmed = r3 = np.nan
        target = float(target_values[j])
        rows.append(PPCFeatureRow(
            name=name, target=target, target_valid=bool(target_valid[j]),
            q1=q1, median=med, q3=q3, whisker_lo=w_lo, whisker_hi=w_hi,
            ref_q1=r1, ref_median=rmed, ref_q3=r3, n_valid=len(pv),
            target_in_iqr=bool(target_valid[j] and q1 <= target <= q3),
        ))
    return PPCReport(rows=rows, n_predictive=int(ok_pred.sum()), n_excluded=n_excluded)


# -- simulation-based calibration ------------------------------------------

@dataclass
class SBCReport:
    n_datasets: int
    n_posterior: int
    n_bins: int
    ranks: np.ndarray        # (n_datasets, dim)
    histograms: np.ndarray   # (dim, n_bins)
    chi2: np.ndarray         # (dim,)
    p_values: np.ndarray     # (dim,)


def sbc(sample_prior_fn, simulate_fn, posterior_fn, n_datasets: int,
        n_posterior: int, seed: int, dim: int = N_PARAMS,
        n_bins: int = 20) -> SBCReport:
    """Rank-statistic calibration audit of a posterior sampler.

    For each synthetic dataset: draw truth from the prior, simulate an
    observation, draw posterior samples, and record the per-dimension rank
    of the truth among the (continuous) samples. Calibrated samplers give
    uniform ranks; uniformity is scored by a chi-square test on n_bins
    equal-width bins.

    sample_prior_fn(rng) -> (dim,) truth
    simulate_fn(theta, rng) -> observation (opaque)
    posterior_fn(observation, n, rng) -> (n, dim) samples
    """
    if (n_posterior + 1) % n_bins != 0:
        raise ValueError(f"n_posterior + 1 = {n_posterior + 1} must be divisible "
                         f"by n_bins = {n_bins} for a uniform binning")
    ranks = np.zeros((n_datasets, dim), dtype=np.int64)
    for i in range(n_datasets):
        prior_rng = np.random.default_rng(np.random.SeedSequence((seed, i, 0)))
        sim_rng = np.random.default_rng(np.random.SeedSequence((seed, i, 1)))
        post_rng = np.random.default_rng(np.random.SeedSequence((seed, i, 2)))
        theta = np.asarray(sample_prior_fn(prior_rng), dtype=np.float64)
        obs = simulate_fn(theta, sim_rng)
        samples = np.atleast_2d(posterior_fn(obs, n_posterior, post_rng))
        if samples.shape != (n_posterior, dim):
            raise ValueError(f"posterior sampler returned shape {samples.shape}, "
                             f"expected {(n_posterior, dim)}")
        ranks[i] = np.sum(samples < theta, axis=0)

    histograms = np.zeros((dim, n_bins), dtype=np.int64)
    chi2 = np.zeros(dim)
    p_values = np.zeros(dim)
    edges = np.linspace(0, n_posterior + 1, n_bins + 1)
    for d in range(dim):
        hist, _ = np.histogram(ranks[:, d], bins=edges)
        histograms[d] = hist
        stat, p = stats.chisquare(hist)
        chi2[d] = stat
        p_values[d] = p
    return SBCReport(n_datasets=n_datasets, n_posterior=n_posterior, n_bins=n_bins,
                     ranks=ranks, histograms=histograms, chi2=chi2, p_values=p_values)


def sbc_pipeline(model: NdeModel, cfg: PipelineConfig, n_datasets: int,
                 n_posterior: int, seed: int,
                 classifier=None, threshold: float | None = None) -> SBCReport:
    """SBC of the trained estimator against its own generation pipeline.

    The prior is the uniform code prior, optionally gated by the classifier
    (matching constrained training-set generation). Ranks use the flow's
    continuous draws, so integer ties cannot bias the histogram.
    """
    def sample_prior_fn(rng):
        while True:
            code = rng.integers(0, CODE_MAX + 1, size=N_PARAMS)
            if classifier is None or threshold is None:
                return code.astype(np.float64)
            if classifier.predict_prob(code[None])[0] >= threshold:
                return code.astype(np.float64)

    def simulate_fn(theta, rng):
        code = theta.astype(np.int64)
        record_seed = int(rng.integers(0, 2**63 - 1))
        trace_f32, spikes, feats, bad = simulate_record(code, record_seed, cfg)
        if model.mode == "handcrafted":
            return model.condition_from_features(feats.values[None], feats.valid[None])
        return model.condition_from_traces(trace_f32[None].astype(np.float64))

    def posterior_fn(condition, n, rng):
        return model.flow.sample(condition, n, rng)

    return sbc(sample_prior_fn, simulate_fn, posterior_fn, n_datasets=n_datasets,
               n_posterior=n_posterior, seed=seed, dim=N_PARAMS)


# -- amortized evaluation ----------------------------------------------------

@dataclass
class AmortizedObservation:
    index: int
    target_code: np.ndarray
    target_count: int
    map_code: np.ndarray
    map_count: int
    matched: bool
    target_trace: np.ndarray
    predictive_trace: np.ndarray
    target_spikes: np.ndarray
    predictive_spikes: np.ndarray


@dataclass
class AmortizedReport:
    observations: list
    n_matched: int
    k: int
    n_draws: int
    seed: int


def spike_count_matches(target: int, predicted: int, abs_tol: int = 1,
                        rel_tol: float = 0.2) -> bool:
    return abs(predicted - target) <= abs_tol or (
        target > 0 and abs(predicted - target) <= rel_tol * target
    )


def amortized_eval(model: NdeModel, ds: Dataset, cfg: PipelineConfig, k: int = 8,
                   n_draws: int = 10000, seed: int = 0,
                   count_range: tuple[int, int] = (2, 70)) -> AmortizedReport:
    """MAP posterior-predictive comparison on k random validation records."""
    stim = stimulus_from_config(cfg)
    counts = np.array([ds.spike_count(i, stim) for i in range(len(ds))])
    eligible = np.flatnonzero((counts >= count_range[0]) & (counts <= count_range[1])
                              & ~ds.pathological)
    if len(eligible) < k:
        raise ValueError(f"only {len(eligible)} eligible observations, need {k}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=k, replace=False)

    observations = []
    for j, i in enumerate(chosen):
        condition = model.conditions_for(ds, np.array([i]))
        draws = posterior_samples(model, condition, n_draws, seed=seed + 1000 + j,
                                  observation_id=str(i))
        map_code = select_map_sample(draws)
        pred = posterior_predictive(map_code[None], cfg, seed=seed + 2000 + j)
        matched = spike_count_matches(int(counts[i]), int(pred.spike_counts[0]))
        observations.append(AmortizedObservation(
            index=int(i), target_code=ds.codes[i].copy(), target_count=int(counts[i]),
            map_code=map_code, map_count=int(pred.spike_counts[0]), matched=matched,
            target_trace=np.asarray(ds.traces[i]),
            predictive_trace=pred.traces[0],
            target_spikes=ds.spike_times[i],
            predictive_spikes=pred.spikes[0],
        ))
        log.info("observation %d: target %d spikes, MAP predictive %d (%s)",
                 i, counts[i], pred.spike_counts[0], "ok" if matched else "miss")
    return AmortizedReport(observations=observations,
                           n_matched=sum(o.matched for o in observations),
                           k=k, n_draws=n_draws, seed=seed)
