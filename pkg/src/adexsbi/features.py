"""Regular-grid trace interpolation and handcrafted electrophysiological features.

Twelve summary statistics are computed per experiment, in this fixed order
(also the CSV column order):

    rate              average firing rate during the stimulus [Hz]
    latency           first in-stimulus spike relative to onset [s]
    isi_first         first inter-spike interval [s]
    isi_last          last inter-spike interval [s]
    isi_mean          mean inter-spike interval [s]
    cv_isi            coefficient of variation of the ISIs
    adaptation_index  mean normalized consecutive-ISI difference
    v_baseline        mean voltage before stimulus onset [V]
    v_min             minimum voltage after stimulus offset [V]
    v_fast_trough     minimum voltage early in the first ISI [V]
    v_slow_trough     minimum voltage in the rest of the first ISI [V]
    slow_trough_frac  slow-trough time as a fraction of the first ISI

Spike-dependent features carry validity flags; when undefined they are
filled with sentinels (time-like: stimulus duration, voltage-like: the
trace baseline, ratio-like: zero) so batches stay rectangular for network
conditioning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .adex import Stimulus, Trace

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "rate",
    "latency",
    "isi_first",
    "isi_last",
    "isi_mean",
    "cv_isi",
    "adaptation_index",
    "v_baseline",
    "v_min",
    "v_fast_trough",
    "v_slow_trough",
    "slow_trough_frac",
)
N_FEATURES = len(FEATURE_NAMES)

# indexes of features that can be undefined and therefore carry a flag
FLAGGED = (1, 2, 3, 4, 5, 6, 9, 10, 11)
N_FLAGS = len(FLAGGED)

TIME_LIKE = {"latency", "isi_first", "isi_last", "isi_mean"}
VOLTAGE_LIKE = {"v_fast_trough", "v_slow_trough"}


@dataclass(frozen=True)
class RegularTrace:
    """Voltage samples on a uniform grid spanning [t0, t_end]."""

    voltages: np.ndarray
    t0: float
    t_end: float

    def __post_init__(self):
        if self.voltages.ndim != 1 or len(self.voltages) < 2:
            raise ValueError("regular trace needs at least two samples")

    @property
    def n_points(self) -> int:
        return len(self.voltages)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t_end, self.n_points)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # (12,)
    valid: np.ndarray   # (12,) bool; always-defined features are True

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,) or self.valid.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must have {N_FEATURES} entries")

    def named(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values))

    def flags(self) -> np.ndarray:
        """The flagged subset as 0/1 indicators, in FLAGGED order."""
        return self.valid[list(FLAGGED)].astype(np.float64)


def interpolate_trace(trace: Trace, n_points: int = 10000) -> RegularTrace:
    """Linear interpolation of the recording onto n_points equal spacings."""
    if len(trace.voltages) < 2:
        raise ValueError("trace must contain at least two samples")
    t_end = trace.stimulus.experiment_length
    grid = np.linspace(0.0, t_end, n_points)
    src_t = np.arange(len(trace.voltages)) * trace.dt
    return RegularTrace(voltages=np.interp(grid, src_t, trace.voltages),
                        t0=0.0, t_end=t_end)


def adaptation_index(isis: np.ndarray) -> float:
    """Mean of (isi[k+1] - isi[k]) / (isi[k+1] + isi[k]); needs >= 2 ISIs."""
    isis = np.asarray(isis, dtype=np.float64)
    if len(isis) < 2:
        raise ValueError("adaptation index needs at least two inter-spike intervals")
    num = isis[1:] - isis[:-1]
    den = isis[1:] + isis[:-1]
    return float(np.mean(num / den))


def trough_features(regular: RegularTrace, spikes: np.ndarray, stimulus: Stimulus,
                    fast_fraction: float = 0.1):
    """Fast/slow trough depths and slow-trough timing within the first ISI.

    Returns (v_fast, v_slow, slow_frac, fast_valid, slow_valid). The fast
    trough needs one in-stimulus spike; the slow trough and its timing need
    two. With a single spike the fast window runs toward the stimulus end.
    """
    t = regular.times
    v = regular.voltages
    s = in_stimulus_spikes(spikes, stimulus)
    if len(s) == 0:
        return np.nan, np.nan, np.nan, False, False
    t1 = s[0]
    if len(s) >= 2:
        ref = s[1] - t1
        window_end = s[1]
    else:
        ref = stimulus.onset + stimulus.duration - t1
        window_end = stimulus.onset + stimulus.duration
    t_split = t1 + fast_fraction * ref

    fast_idx = np.flatnonzero((t >= t1) & (t < t_split))
    if len(fast_idx) == 0:
        fast_idx = np.flatnonzero(t >= t1)[:1]
    fast_valid = len(fast_idx) > 0 and ref > 0
    v_fast = float(v[fast_idx].min()) if fast_valid else np.nan

    if len(s) < 2:
        return v_fast, np.nan, np.nan, fast_valid, False

    slow_idx = np.flatnonzero((t >= t_split) & (t <= window_end))
    if len(slow_idx) == 0:
        slow_idx = fast_idx[-1:]
    k = slow_idx[np.argmin(v[slow_idx])]
    v_slow = float(v[k])
    slow_frac = float(np.clip((t[k] - t1) / ref, 0.0, 1.0))
    return v_fast, v_slow, slow_frac, fast_valid, True


def in_stimulus_spikes(spikes: np.ndarray, stimulus: Stimulus) -> np.ndarray:
    spikes = np.asarray(spikes, dtype=np.float64)
    lo = stimulus.onset
    hi = stimulus.onset + stimulus.duration
    return spikes[(spikes >= lo) & (spikes < hi)]


def extract_features(regular: RegularTrace, spikes: np.ndarray, stimulus: Stimulus,
                     fast_fraction: float = 0.1) -> FeatureVector:
    """Compute all twelve statistics; undefined ones get sentinels + flags."""
    t = regular.times
    v = regular.voltages
    s = in_stimulus_spikes(spikes, stimulus)
    n = len(s)

    pre = v[t < stimulus.onset]
    v_baseline = float(pre.mean()) if len(pre) else float(v[0])
    post = v[t >= stimulus.onset + stimulus.duration]
    v_min = float(post.min()) if len(post) else float(v.min())

    values = np.empty(N_FEATURES)
    valid = np.ones(N_FEATURES, dtype=bool)
    sentinel = {"time": stimulus.duration, "voltage": v_baseline, "ratio": 0.0}

    values[FEATURE_NAMES.index("rate")] = n / stimulus.duration
    values[FEATURE_NAMES.index("v_baseline")] = v_baseline
    values[FEATURE_NAMES.index("v_min")] = v_min

    def put(name: str, value, ok: bool):
        i = FEATURE_NAMES.index(name)
        if ok:
            values[i] = value
        else:
            if name in TIME_LIKE:
                values[i] = sentinel["time"]
            elif name in VOLTAGE_LIKE:
                values[i] = sentinel["voltage"]
            else:
                values[i] = sentinel["ratio"]
        valid[i] = ok

    put("latency", s[0] - stimulus.onset if n >= 1 else None, n >= 1)
    isis = np.diff(s)
    put("isi_first", isis[0] if n >= 2 else None, n >= 2)
    put("isi_last", isis[-1] if n >= 2 else None, n >= 2)
    put("isi_mean", (s[-1] - s[0]) / (n - 1) if n >= 2 else None, n >= 2)
    if n >= 2:
        cv = float(np.std(isis) / np.mean(isis))  # population std
        put("cv_isi", cv, True)
    else:
        put("cv_isi", None, False)
    put("adaptation_index", adaptation_index(isis) if n >= 3 else None, n >= 3)

    v_fast, v_slow, slow_frac, fast_ok, slow_ok = trough_features(
        regular, spikes, stimulus, fast_fraction)
    put("v_fast_trough", v_fast, fast_ok)
    put("v_slow_trough", v_slow, slow_ok)
    put("slow_trough_frac", slow_frac, slow_ok)

    return FeatureVector(values=values, valid=valid)


# -- batch standardization ----------------------------------------------

@dataclass
class NormalizationRecord:
    """Training-set feature statistics, persisted with any conditioned model."""

    mean: np.ndarray
    std: np.ndarray
    names: tuple = FEATURE_NAMES
    flagged: tuple = FLAGGED

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "names": list(self.names),
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRecord":
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64),
                   names=tuple(d["names"]), flagged=tuple(d["flagged"]))

    def apply(self, values: np.ndarray, valid: np.ndarray) -> np.ndarray:
        """Standardize a batch and append the validity indicator channels."""
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        valid = np.atleast_2d(np.asarray(valid))
        z = (values - self.mean) / self.std
        flags = valid[:, list(self.flagged)].astype(np.float64)
        return np.concatenate([z, flags], axis=1)

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))[:, : len(self.mean)]
        return z * self.std + self.mean

    @property
    def output_dim(self) -> int:
        return len(self.mean) + len(self.flagged)


def standardize_features(values: np.ndarray, valid: np.ndarray
                         ) -> tuple[np.ndarray, NormalizationRecord]:
    """Z-score a feature batch by its own statistics; zero-spread columns pass
    through centered with a warning."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError("feature batch must be a non-empty 2-D array")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    degenerate = std == 0.0
    if degenerate.any():
        names = [FEATURE_NAMES[i] for i in np.flatnonzero(degenerate)]
        log.warning("zero spread in features %s; passing through centered", names)
        std = np.where(degenerate, 1.0, std)
    record = NormalizationRecord(mean=mean, std=std)
    return record.apply(values, valid), record
