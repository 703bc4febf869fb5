"""Dataset generation, persistence, and integrity-checked loading.

A dataset directory holds columnar files so consumers map only what they
condition on:

    manifest.json   counts, config snapshot, seeds, per-file and combined
                    content hashes; written last as the commit marker
    codes.csv       index, per-record seed, pathological flag, 7 codes
    features.csv    12 feature values + 9 validity flags per record
    spikes.bin      per record: uint32 count + float64 spike times (LE)
    traces.f32      10000 float32 voltage samples per record (LE)

Floats in CSV use shortest round-trip formatting, so a write/read cycle
is bit-exact. Per-record seeds derive from the master seed through a
counter-based splittable stream, making generation order-independent.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adex import NoiseConfig, SimulationError, Stimulus, make_step_stimulus, simulate
from .codec import decode, validate_codes
from .config import CODE_MAX, N_PARAMS, PARAM_NAMES, PipelineConfig, to_dict
from .features import FEATURE_NAMES, FLAGGED, FeatureVector, extract_features, interpolate_trace

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACE_POINTS = 10000

CODES_FILE = "codes.csv"
FEATURES_FILE = "features.csv"
SPIKES_FILE = "spikes.bin"
TRACES_FILE = "traces.f32"
MANIFEST_FILE = "manifest.json"
DATA_FILES = (CODES_FILE, FEATURES_FILE, SPIKES_FILE, TRACES_FILE)


class DatasetError(RuntimeError):
    pass


def derive_record_seed(master_seed: int, index: int) -> int:
    """Independent per-record seed; distinct indexes give distinct streams."""
    return int(np.random.SeedSequence((master_seed, index)).generate_state(1, np.uint64)[0])


def sample_prior(n: int, seed: int) -> np.ndarray:
    """n uniform code vectors over the full digital range."""
    if n < 1:
        raise ValueError("need at least one draw")
    rng = np.random.default_rng(seed)
    return rng.integers(0, CODE_MAX + 1, size=(n, N_PARAMS), dtype=np.int64)


def stimulus_from_config(cfg: PipelineConfig) -> Stimulus:
    return make_step_stimulus(cfg.stimulus.onset, cfg.stimulus.duration,
                              cfg.fixed.i_max, cfg.stimulus.experiment_length)


def simulate_record(code: np.ndarray, seed: int, cfg: PipelineConfig):
    """One experiment: trace on the storage grid, spikes, features.

    Features are computed from the float32-rounded grid so they are exactly
    reproducible from the stored trace. Returns
    (trace_f32, spike_times, FeatureVector, pathological).
    """
    stim = stimulus_from_config(cfg)
    params = decode(code, cfg.calibration, cfg.fixed)
    try:
        trace = simulate(params, stim, cfg.sim.dt,
                         NoiseConfig(cfg.noise.sigma_current, seed))
        spikes = trace.spike_times
        regular = interpolate_trace(trace, cfg.features.n_grid)
        trace_f32 = regular.voltages.astype(np.float32)
        pathological = False
    except SimulationError as exc:
        log.warning("pathological simulation for code %s: %s", code.tolist(), exc)
        spikes = np.empty(0)
        trace_f32 = np.zeros(cfg.features.n_grid, dtype=np.float32)
        pathological = True

    from .features import RegularTrace

    stored_grid = RegularTrace(voltages=trace_f32.astype(np.float64),
                               t0=0.0, t_end=stim.experiment_length)
    feats = extract_features(stored_grid, spikes, stim,
                             fast_fraction=cfg.features.fast_trough_fraction)
    return trace_f32, spikes, feats, pathological


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_codes_csv(path: Path, codes, seeds, pathological):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "seed", "pathological", *PARAM_NAMES])
        for i, (code, seed, bad) in enumerate(zip(codes, seeds, pathological)):
            writer.writerow([i, seed, int(bad), *code.tolist()])


def _write_features_csv(path: Path, feature_rows):
    flag_names = [f"valid_{FEATURE_NAMES[i]}" for i in FLAGGED]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", *FEATURE_NAMES, *flag_names])
        for i, fv in enumerate(feature_rows):
            writer.writerow([i, *[_fmt(v) for v in fv.values],
                             *[int(b) for b in fv.flags()]])


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def combined_hash(file_hashes: dict[str, str]) -> str:
    h = hashlib.sha256()
    for name in DATA_FILES:
        h.update(name.encode())
        h.update(bytes.fromhex(file_hashes[name]))
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    schema_version: int
    tool_version: str
    n_records: int
    master_seed: int
    generator: dict
    config: dict
    file_hashes: dict
    content_hash: str

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "n_records": self.n_records,
            "master_seed": self.master_seed,
            "generator": self.generator,
            "config": self.config,
            "file_hashes": self.file_hashes,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            schema_version=d["schema_version"], tool_version=d["tool_version"],
            n_records=d["n_records"], master_seed=d["master_seed"],
            generator=d.get("generator", {}), config=d["config"],
            file_hashes=d["file_hashes"], content_hash=d["content_hash"],
        )


def generate_dataset(codes: np.ndarray, cfg: PipelineConfig, out_dir: str | Path,
                     master_seed: int, generator: dict | None = None,
                     jobs: int = 1) -> DatasetManifest:
    """Simulate one record per code and persist the dataset directory.

    Records carry seeds derived from (master_seed, index); the writer emits
    them strictly in index order so the content hash is independent of the
    worker count.
    """
    codes = validate_codes(np.atleast_2d(codes))
    n = len(codes)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seeds = [derive_record_seed(master_seed, i) for i in range(n)]
    if len(set(seeds)) != n:
        raise DatasetError("per-record seed collision; change the master seed")

    if jobs > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=jobs, batch_size=64)(
            delayed(simulate_record)(codes[i], seeds[i], cfg) for i in range(n)
        )
    else:
        results = [simulate_record(codes[i], seeds[i], cfg) for i in range(n)]

    pathological = np.array([r[3] for r in results], dtype=bool)
    feature_rows = [r[2] for r in results]

    _write_codes_csv(out / CODES_FILE, codes, seeds, pathological)
    _write_features_csv(out / FEATURES_FILE, feature_rows)
    with open(out / SPIKES_FILE, "wb") as fh:
        for trace_f32, spikes, _, _ in results:
            fh.write(np.uint32(len(spikes)).tobytes())
            fh.write(spikes.astype("<f8").tobytes())
    with open(out / TRACES_FILE, "wb") as fh:
        for trace_f32, _, _, _ in results:
            fh.write(trace_f32.astype("<f4").tobytes())

    file_hashes = {name: _hash_file(out / name) for name in DATA_FILES}
    manifest = DatasetManifest(
        schema_version=SCHEMA_VERSION,
        tool_version=__version__,
        n_records=n,
        master_seed=master_seed,
        generator=generator or {},
        config=to_dict(cfg),
        file_hashes=file_hashes,
        content_hash=combined_hash(file_hashes),
    )
    (out / MANIFEST_FILE).write_text(json.dumps(manifest.to_dict(), indent=2,
                                                sort_keys=True) + "\n")
    if pathological.any():
        log.info("%d of %d records flagged pathological", int(pathological.sum()), n)
    return manifest


@dataclass
class Dataset:
    """Loaded dataset with columnar arrays; traces stay memory-mapped."""

    path: Path
    manifest: DatasetManifest
    codes: np.ndarray          # (n, 7) int64
    seeds: np.ndarray          # (n,) uint64
    pathological: np.ndarray   # (n,) bool
    feature_values: np.ndarray # (n, 12)
    feature_valid: np.ndarray  # (n, 12) bool
    spike_times: list          # n ragged float64 arrays
    traces: np.ndarray         # (n, 10000) float32 memmap

    def __len__(self) -> int:
        return len(self.codes)

    def feature_vector(self, i: int) -> FeatureVector:
        return FeatureVector(values=self.feature_values[i].copy(),
                             valid=self.feature_valid[i].copy())

    def spike_count(self, i: int, stimulus: Stimulus) -> int:
        s = self.spike_times[i]
        return int(np.sum((s >= stimulus.onset) & (s < stimulus.onset + stimulus.duration)))

    def usable_indexes(self) -> np.ndarray:
        return np.flatnonzero(~self.pathological)

    def config(self) -> PipelineConfig:
        from .config import from_dict

        return from_dict(self.manifest.config)


def load_dataset(path: str | Path, skip_hash_check: bool = False) -> Dataset:
    """Load a dataset directory, verifying the manifest and content hashes."""
    path = Path(path)
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.exists():
        raise DatasetError(f"{path}: missing manifest (incomplete write?)")
    manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text()))
    if manifest.schema_version != SCHEMA_VERSION:
        raise DatasetError(f"{path}: unsupported schema version {manifest.schema_version}")

    if not skip_hash_check:
        for name in DATA_FILES:
            actual = _hash_file(path / name)
            if actual != manifest.file_hashes[name]:
                raise DatasetError(f"{path}/{name}: content hash mismatch (corrupt)")

    n = manifest.n_records
    codes = np.empty((n, N_PARAMS), dtype=np.int64)
    seeds = np.empty(n, dtype=np.uint64)
    pathological = np.empty(n, dtype=bool)
    with open(path / CODES_FILE, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert header[3:] == list(PARAM_NAMES)
        for row in reader:
            i = int(row[0])
            seeds[i] = np.uint64(row[1])
            pathological[i] = bool(int(row[2]))
            codes[i] = [int(x) for x in row[3:]]

    feature_values = np.empty((n, len(FEATURE_NAMES)))
    feature_valid = np.ones((n, len(FEATURE_NAMES)), dtype=bool)
    with open(path / FEATURES_FILE, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            i = int(row[0])
            feature_values[i] = [float(x) for x in row[1 : 1 + len(FEATURE_NAMES)]]
            flags = [bool(int(x)) for x in row[1 + len(FEATURE_NAMES):]]
            for j, col in enumerate(FLAGGED):
                feature_valid[i, col] = flags[j]

    spike_times = []
    raw = (path / SPIKES_FILE).read_bytes()
    offset = 0
    for _ in range(n):
        if offset + 4 > len(raw):
            raise DatasetError(f"{path}/{SPIKES_FILE}: truncated")
        count = int(np.frombuffer(raw, dtype="<u4", count=1, offset=offset)[0])
        offset += 4
        end = offset + 8 * count
        if end > len(raw):
            raise DatasetError(f"{path}/{SPIKES_FILE}: truncated record")
        spike_times.append(np.frombuffer(raw, dtype="<f8", count=count,
                                         offset=offset).copy())
        offset = end

    expected_bytes = n * TRACE_POINTS * 4
    actual_bytes = (path / TRACES_FILE).stat().st_size
    if actual_bytes != expected_bytes:
        raise DatasetError(f"{path}/{TRACES_FILE}: expected {expected_bytes} bytes, "
                           f"found {actual_bytes} (truncated write?)")
    traces = np.memmap(path / TRACES_FILE, dtype="<f4", mode="r",
                       shape=(n, TRACE_POINTS))

    return Dataset(path=path, manifest=manifest, codes=codes, seeds=seeds,
                   pathological=pathological, feature_values=feature_values,
                   feature_valid=feature_valid, spike_times=spike_times,
                   traces=traces)


# -- constrained (classifier-gated) sampling ----------------------------

def constrained_sample(predict_prob, threshold: float, n: int, seed: int,
                       batch: int = 4096, min_acceptance: float = 1e-4,
                       probe_draws: int = 100000) -> tuple[np.ndarray, float]:
    """Rejection-sample codes whose predicted probability clears the threshold.

    `predict_prob` maps an (m, 7) code batch to acceptance probabilities.
    Returns (codes, acceptance_rate). Aborts when the acceptance rate over
    the probe window falls below `min_acceptance`.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError("threshold must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    kept = []
    drawn = 0
    accepted = 0
    while accepted < n:
        codes = rng.integers(0, CODE_MAX + 1, size=(batch, N_PARAMS), dtype=np.int64)
        probs = np.asarray(predict_prob(codes))
        mask = probs >= threshold
        kept.append(codes[mask])
        drawn += batch
        accepted += int(mask.sum())
        if drawn >= probe_draws and accepted / drawn < min_acceptance:
            raise DatasetError(
                f"acceptance rate {accepted / drawn:.2e} below {min_acceptance:.0e}; "
                "threshold too strict"
            )
    out = np.concatenate(kept, axis=0)[:n]
    return out, accepted / drawn


def rate_in_range_fraction(ds: Dataset, lo_hz: float, hi_hz: float) -> float:
    """Share of non-pathological records with firing rate inside [lo, hi]."""
    ok = ds.usable_indexes()
    rates = ds.feature_values[ok, FEATURE_NAMES.index("rate")]
    return float(np.mean((rates >= lo_hz) & (rates <= hi_hz)))
