"""Translation between 7-component digital parameter codes and physical units.

A code vector holds seven integers in [0, 1022], one per tunable neuron
parameter, emulating a capacitive parameter-memory array. Each component
maps affinely onto the physical span given by the calibration table;
encoding rounds to the nearest code with half-to-even tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CODE_MAX, N_PARAMS, PARAM_NAMES, CalibrationConfig, FixedParams


class CodeError(ValueError):
    """Code or physical value outside the configured bounds."""


@dataclass(frozen=True)
class PhysicalParams:
    """Complete AdEx parameter set in SI units (free and fixed merged)."""

    c_m: float     # membrane capacitance [F]
    g_l: float     # leak conductance [S]
    v_l: float     # leak potential [V]
    v_t: float     # exponential threshold [V]
    v_th: float    # hard spike threshold [V]
    v_r: float     # reset potential [V]
    delta_t: float # exponential slope factor [V]
    a: float       # sub-threshold adaptation conductance [S]
    b: float       # spike-triggered adaptation increment [A]
    tau_w: float   # adaptation time constant [s], c_w / g_tau_w
    tau_ref: float # refractory period [s]
    c_w: float     # adaptation capacitance [F]

    def __post_init__(self):
        if self.c_m <= 0:
            raise CodeError("c_m must be positive")
        if self.g_l < 0:
            raise CodeError("g_l must be non-negative")
        if self.delta_t <= 0:
            raise CodeError("delta_t must be positive")
        if self.tau_w <= 0:
            raise CodeError("tau_w must be positive")
        if self.tau_ref < 0:
            raise CodeError("tau_ref must be non-negative")
        if not self.v_r < self.v_th:
            raise CodeError(f"reset {self.v_r} must lie below threshold {self.v_th}")

    @property
    def tau_m(self) -> float:
        return self.c_m / self.g_l


def validate_codes(codes: np.ndarray) -> np.ndarray:
    """Check shape (..., 7) and bounds; return an int64 view."""
    arr = np.asarray(codes)
    if arr.shape[-1] != N_PARAMS:
        raise CodeError(f"code vectors have {N_PARAMS} components, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise CodeError("code components must be integers")
    arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > CODE_MAX:
        raise CodeError(f"code components must lie in [0, {CODE_MAX}]")
    return arr


def _spans(table: CalibrationConfig) -> tuple[np.ndarray, np.ndarray]:
    los = np.array([table.range_of(n).lo for n in PARAM_NAMES])
    his = np.array([table.range_of(n).hi for n in PARAM_NAMES])
    return los, his


def decode_values(codes: np.ndarray, table: CalibrationConfig) -> np.ndarray:
    """Affine map of codes (..., 7) onto physical values (..., 7)."""
    arr = validate_codes(codes)
    los, his = _spans(table)
    return los + (arr / CODE_MAX) * (his - los)


def decode(code: np.ndarray, table: CalibrationConfig, fixed: FixedParams) -> PhysicalParams:
    """Merge one decoded code vector with the fixed parameters."""
    vals = decode_values(np.asarray(code).reshape(N_PARAMS), table)
    named = dict(zip(PARAM_NAMES, vals))
    return PhysicalParams(
        c_m=fixed.c_m,
        g_l=named["g_l"],
        v_l=fixed.v_l,
        v_t=named["v_t"],
        v_th=fixed.v_th,
        v_r=named["v_r"],
        delta_t=named["delta_t"],
        a=named["a"],
        b=named["b"],
        tau_w=fixed.c_w / named["g_tau_w"],
        tau_ref=fixed.tau_ref,
        c_w=fixed.c_w,
    )


def encode_values(values: np.ndarray, table: CalibrationConfig) -> np.ndarray:
    """Nearest codes for physical values (..., 7); ties round half to even."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape[-1] != N_PARAMS:
        raise CodeError(f"expected {N_PARAMS} physical values, got shape {vals.shape}")
    los, his = _spans(table)
    if np.any(vals < los) or np.any(vals > his):
        bad = [PARAM_NAMES[i] for i in range(N_PARAMS)
               if np.any(vals[..., i] < los[i]) or np.any(vals[..., i] > his[i])]
        raise CodeError(f"physical values out of calibrated range for: {', '.join(bad)}")
    step = (his - los) / CODE_MAX
    # dividing by the step (rather than scaling by CODE_MAX/span) keeps exact
    # half-step values at .5, so np.rint's half-to-even tie-break applies
    frac = (vals - los) / step
    return np.rint(frac).astype(np.int64)


def encode(params: PhysicalParams, table: CalibrationConfig) -> np.ndarray:
    values = np.array([
        params.g_l,
        params.v_r,
        params.delta_t,
        params.v_t,
        params.a,
        params.b,
        params.c_w / params.tau_w,
    ])
    return encode_values(values, table)
