"""Pipeline configuration: dataclasses, JSON round trip, environment overrides.

All quantities are SI and hardware-time (microsecond-scale dynamics).
Physical ranges of the calibration table and the noise intensity are
surrogate calibration choices, not measured hardware values; edit them in
the JSON config to match a different substrate.

Every field can be overridden from the environment with
``ADEXSBI_<SECTION>__<FIELD>`` (upper case, double underscore between
levels), e.g. ``ADEXSBI_NOISE__SIGMA_CURRENT=2e-12``.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

ENV_PREFIX = "ADEXSBI_"

CODE_MAX = 1022
N_PARAMS = 7
# order of the inferred parameters everywhere (code vectors, CSV, flows)
PARAM_NAMES = ("g_l", "v_r", "delta_t", "v_t", "a", "b", "g_tau_w")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class FixedParams:
    """Physical parameters held constant across the whole study."""

    c_m: float = 3e-12        # membrane capacitance [F]
    v_l: float = -65e-3       # leak potential [V]
    v_th: float = -40e-3      # hard spike threshold [V]
    tau_ref: float = 1e-6     # refractory period [s]
    c_w: float = 3e-12        # adaptation capacitance [F]
    i_max: float = 14e-9      # step-current amplitude [A]


@dataclass(frozen=True)
class ParamRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"range lower bound {self.lo} must be < upper bound {self.hi}")


@dataclass(frozen=True)
class CalibrationConfig:
    """Physical span of each digitally coded parameter (affine code maps).

    Plausible AdEx spans for a fast (accelerated-time) substrate; these are
    surrogate defaults, not hardware calibration data.
    """

    g_l: ParamRange = field(default_factory=lambda: ParamRange(5e-8, 7.5e-7))     # [S]
    v_r: ParamRange = field(default_factory=lambda: ParamRange(-75e-3, -48e-3))   # [V]
    delta_t: ParamRange = field(default_factory=lambda: ParamRange(3e-4, 4e-3))   # [V]
    v_t: ParamRange = field(default_factory=lambda: ParamRange(-56e-3, -40e-3))   # [V]
    a: ParamRange = field(default_factory=lambda: ParamRange(0.0, 1e-7))          # [S]
    b: ParamRange = field(default_factory=lambda: ParamRange(0.0, 2e-9))          # [A]
    g_tau_w: ParamRange = field(default_factory=lambda: ParamRange(2e-8, 1.2e-6)) # [S]

    def range_of(self, name: str) -> ParamRange:
        return getattr(self, name)


@dataclass(frozen=True)
class StimulusConfig:
    onset: float = 0.3e-3             # [s]
    duration: float = 1.0e-3          # [s]
    experiment_length: float = 1.6e-3 # [s]


@dataclass(frozen=True)
class NoiseCfg:
    """Additive white current noise intensity [A * sqrt(s)]."""

    sigma_current: float = 1.0e-12


@dataclass(frozen=True)
class SimConfig:
    dt: float = 2e-7  # [s]


@dataclass(frozen=True)
class FeatureConfig:
    n_grid: int = 10000
    fast_trough_fraction: float = 0.1  # share of the first ISI scanned for the fast trough


@dataclass(frozen=True)
class DatasetConfig:
    n_initial: int = 5000
    n_train: int = 20000
    n_valid: int = 200
    # spike-count window the classifier is trained to predict
    count_lo: int = 1
    count_hi: int = 70
    # firing-rate window used when summarizing dataset composition [Hz]
    rate_lo: float = 1e3
    rate_hi: float = 40e3


@dataclass(frozen=True)
class ClassifierConfig:
    n_blocks: int = 4
    hidden: int = 100
    dropout: float = 0.5
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    max_fnr: float = 0.05
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class NdeConfig:
    mode: str = "handcrafted"  # or "summary"
    handcrafted_blocks: int = 10
    summary_blocks: int = 8
    conditioner_hidden: int = 128
    conditioner_layers: int = 2
    scale_clamp: float = 1.9
    epochs_handcrafted: int = 20
    epochs_summary: int = 10
    batch_size: int = 128
    summary_batch_size: int = 32  # sequence BPTT state is large; keep batches small
    lr: float = 1e-3
    val_fraction: float = 0.05
    conv1_kernel: int = 8
    conv1_stride: int = 4
    conv1_filters: int = 16
    conv2_kernel: int = 4
    conv2_stride: int = 2
    conv2_filters: int = 8
    gru_units: int = 128
    summary_dim: int = 14


@dataclass(frozen=True)
class Seeds:
    """Explicit seeds for every stage; nothing falls back to wall clock."""

    dataset: int = 101
    classifier: int = 202
    constrained: int = 303
    nde: int = 404
    inference: int = 505
    sbc: int = 606


@dataclass(frozen=True)
class PipelineConfig:
    fixed: FixedParams = field(default_factory=FixedParams)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    stimulus: StimulusConfig = field(default_factory=StimulusConfig)
    noise: NoiseCfg = field(default_factory=NoiseCfg)
    sim: SimConfig = field(default_factory=SimConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    nde: NdeConfig = field(default_factory=NdeConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def validate(self) -> "PipelineConfig":
        s = self.stimulus
        if not (0.0 <= s.onset and s.onset + s.duration <= s.experiment_length):
            raise ConfigError("stimulus window must fit inside the experiment")
        if self.sim.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.noise.sigma_current < 0:
            raise ConfigError("noise intensity must be non-negative")
        if self.calibration.g_tau_w.lo <= 0:
            raise ConfigError("g_tau_w lower bound must be strictly positive (finite tau_w)")
        if self.calibration.v_r.hi >= self.fixed.v_th:
            raise ConfigError("reset potential range must stay below the hard threshold")
        if self.nde.mode not in ("handcrafted", "summary"):
            raise ConfigError(f"unknown nde mode {self.nde.mode!r}")
        return self


def desk_scale() -> PipelineConfig:
    """Default configuration: counts small enough for a workstation run."""
    return PipelineConfig()


def full_scale() -> PipelineConfig:
    """Production-size preset: large datasets, long training schedules."""
    cfg = PipelineConfig(
        dataset=DatasetConfig(n_initial=50000, n_train=600000, n_valid=600),
        nde=dataclasses.replace(NdeConfig(), epochs_handcrafted=150, epochs_summary=30),
    )
    return cfg


# -- serialization -----------------------------------------------------

def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        ftype = f.type if not isinstance(f.type, str) else None
        default = _field_default(f)
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            kwargs[f.name] = _build(type(default), value)
        else:
            kwargs[f.name] = value
    return cls(**kwargs)


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
        return f.default_factory()  # type: ignore[misc]
    return None


def from_dict(data: dict) -> PipelineConfig:
    try:
        return _build(PipelineConfig, data).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path | None = None, apply_env: bool = True) -> PipelineConfig:
    """Load config JSON (or defaults) and apply ADEXSBI_* environment overrides."""
    if path is None:
        data = to_dict(desk_scale())
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if apply_env:
        data = apply_env_overrides(data)
    return from_dict(data)


def apply_env_overrides(data: dict, environ: dict | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = json.loads(json.dumps(data))  # deep copy
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in key[len(ENV_PREFIX):].split("__")]
        node: Any = out
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"environment override {key} does not match any config field")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"environment override {key} does not match any config field")
        try:
            node[leaf] = json.loads(raw)
        except json.JSONDecodeError:
            node[leaf] = raw
    return out
