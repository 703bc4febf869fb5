"""Stochastic adaptive-exponential integrate-and-fire neuron emulation.

Membrane and adaptation dynamics follow the two coupled AdEx equations

    c_m dV/dt   = g_l (v_l - V) + g_l delta_t exp((V - v_t)/delta_t) + I(t) - w
    tau_w dw/dt = a (V - v_l) - w

with jump conditions at the hard threshold v_th: V resets to v_r for
tau_ref, and w jumps by b. Integration uses a Heun (predictor-corrector)
step for the drift plus an additive Euler-Maruyama current-noise
increment, valid because the noise is additive; deterministically the
scheme is second order, which keeps spike times stable under time-step
refinement. The exponential argument is capped at EXP_CLAMP so the
supra-threshold upswing cannot overflow between crossing and reset.
Voltage is pinned to v_r during the refractory window while w keeps
evolving.

The surrogate stands in for an accelerated analog substrate: time scales
are microseconds and all quantities SI.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .codec import PhysicalParams

log = logging.getLogger(__name__)

EXP_CLAMP = 20.0
# micro-steps used to refine the threshold-crossing time within one step;
# the exponential upswing traverses the last few millivolts in well under
# one macro step, so a linear fraction alone would quantize spike times
CROSSING_REFINE_STEPS = 16


class SimulationError(RuntimeError):
    def __init__(self, message: str, kind: str):
        super().__init__(message)
        self.kind = kind  # "runaway" or "non_finite"


@dataclass(frozen=True)
class Stimulus:
    """Step current: amplitude on [onset, onset + duration), zero elsewhere."""

    onset: float
    duration: float
    amplitude: float
    experiment_length: float

    def __post_init__(self):
        if self.onset < 0 or self.duration < 0:
            raise ValueError("stimulus onset and duration must be non-negative")
        if self.onset + self.duration > self.experiment_length:
            raise ValueError("stimulus window exceeds the experiment length")

    def current_at(self, t: float) -> float:
        if self.onset <= t < self.onset + self.duration:
            return self.amplitude
        return 0.0


def make_step_stimulus(onset: float, duration: float, amplitude: float,
                       experiment_length: float) -> Stimulus:
    return Stimulus(onset=onset, duration=duration, amplitude=amplitude,
                    experiment_length=experiment_length)


@dataclass(frozen=True)
class NoiseConfig:
    """White current noise of intensity sigma_current [A*sqrt(s)] plus its seed."""

    sigma_current: float
    seed: int

    def __post_init__(self):
        if self.sigma_current < 0:
            raise ValueError("noise intensity must be non-negative")


@dataclass(frozen=True)
class Trace:
    """Regular-grid voltage recording with exact (sub-step) spike times."""

    dt: float
    voltages: np.ndarray
    spike_times: np.ndarray
    stimulus: Stimulus

    def __post_init__(self):
        st = np.asarray(self.spike_times)
        if st.size and not np.all(np.diff(st) > 0):
            raise ValueError("spike times must be strictly increasing")
        if st.size and (st[0] < 0 or st[-1] > self.stimulus.experiment_length):
            raise ValueError("spike times must lie within the experiment window")
        if not np.all(np.isfinite(self.voltages)):
            raise ValueError("voltages must be finite")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.voltages)) * self.dt

    def spike_count(self, lo: float | None = None, hi: float | None = None) -> int:
        st = self.spike_times
        if lo is not None:
            st = st[st >= lo]
        if hi is not None:
            st = st[st < hi]
        return int(st.size)


@dataclass(frozen=True)
class StepResult:
    v: float
    w: float
    refractory_remaining: float
    spiked: bool
    crossing_fraction: float  # position of the threshold crossing within the step, [0, 1]


def _drift(v: float, w: float, i_ext: float, p: PhysicalParams) -> float:
    arg = min((v - p.v_t) / p.delta_t, EXP_CLAMP)
    i_total = p.g_l * (p.v_l - v) + p.g_l * p.delta_t * math.exp(arg) + i_ext - w
    return i_total / p.c_m


def _w_rate(v: float, w: float, p: PhysicalParams) -> float:
    return (p.a * (v - p.v_l) - w) / p.tau_w


def _w_relax(w: float, h: float, p: PhysicalParams) -> float:
    # during refractory the voltage is pinned at v_r, so the adaptation ODE is
    # linear with a constant target and integrates exactly
    w_inf = p.a * (p.v_r - p.v_l)
    return w_inf + (w - w_inf) * math.exp(-h / p.tau_w)


def _substep(v: float, w: float, i_eff: float, dt_eff: float,
             p: PhysicalParams) -> tuple[bool, float, float, float, float]:
    """Integrate one step in CROSSING_REFINE_STEPS Heun micro-steps.

    Used where a single Heun step is too coarse: inside the exponential
    upswing and in any step flagged as crossing threshold. The noise is
    already folded into i_eff as a constant current. Returns
    (crossed, crossing time within the step, w at crossing, v_end, w_end);
    the crossing time is sharpened by bisecting the micro-step size so only
    the trajectory's own discretization error remains.
    """
    m = CROSSING_REFINE_STEPS
    h = dt_eff / m
    vv, ww = v, w
    for j in range(m):
        fv1 = _drift(vv, ww, i_eff, p)
        fw1 = _w_rate(vv, ww, p)
        v_pred = vv + h * fv1
        w_pred = ww + h * fw1
        fv2 = _drift(v_pred, w_pred, i_eff, p)
        fw2 = _w_rate(v_pred, w_pred, p)
        v_next = vv + 0.5 * h * (fv1 + fv2)
        w_next = ww + 0.5 * h * (fw1 + fw2)
        if v_next >= p.v_th:
            lo, hi = 0.0, h
            w_hit = w_next
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                vp = vv + mid * fv1
                wp = ww + mid * fw1
                fv2m = _drift(vp, wp, i_eff, p)
                fw2m = _w_rate(vp, wp, p)
                v_mid = vv + 0.5 * mid * (fv1 + fv2m)
                if v_mid >= p.v_th:
                    hi = mid
                    w_hit = ww + 0.5 * mid * (fw1 + fw2m)
                else:
                    lo = mid
            return True, j * h + hi, w_hit, p.v_th, w_hit
        vv, ww = v_next, w_next
    return False, dt_eff, ww, vv, ww


def step_state(v: float, w: float, refractory_remaining: float, params: PhysicalParams,
               i_ext: float, dt: float, noise_increment: float) -> StepResult:
    """Advance the neuron state by one step of length dt.

    `noise_increment` is the integrated current-noise charge for this step
    (standard deviation sigma_current * sqrt(dt)); it enters the membrane as
    noise_increment / c_m. Reference implementation of the update rule; the
    batch simulator runs the identical arithmetic in compiled form.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (math.isfinite(v) and math.isfinite(w)):
        raise SimulationError("non-finite state entering step", kind="non_finite")

    if refractory_remaining >= dt:
        w_new = _w_relax(w, dt, params)
        return StepResult(params.v_r, w_new, refractory_remaining - dt, False, 0.0)

    dt_eff = dt
    t_offset = 0.0
    if refractory_remaining > 0.0:
        w = _w_relax(w, refractory_remaining, params)
        v = params.v_r
        dt_eff = dt - refractory_remaining
        t_offset = refractory_remaining
        noise_increment = noise_increment * math.sqrt(dt_eff / dt)

    i_eff = i_ext + noise_increment / dt_eff
    fv1 = _drift(v, w, i_eff, params)
    fw1 = _w_rate(v, w, params)
    v_pred = v + dt_eff * fv1
    w_pred = w + dt_eff * fw1
    fv2 = _drift(v_pred, w_pred, i_eff, params)
    fw2 = _w_rate(v_pred, w_pred, params)
    v_new = v + 0.5 * dt_eff * (fv1 + fv2)
    w_new = w + 0.5 * dt_eff * (fw1 + fw2)
    if not (math.isfinite(v_new) and math.isfinite(w_new)):
        raise SimulationError("state became non-finite during step", kind="non_finite")

    # a single Heun step is too coarse once the exponential term is live and
    # would move the voltage by more than half an e-folding scale
    stiff = v > params.v_t - 2.0 * params.delta_t and abs(v_pred - v) > 0.25 * params.delta_t
    if v_new >= params.v_th or stiff:
        crossed, t_cross_rel, w_cross, v_end, w_end = _substep(v, w, i_eff, dt_eff, params)
        if not crossed:
            return StepResult(v_end, w_end, 0.0, False, 0.0)
        remainder = dt_eff - t_cross_rel
        w_after = w_cross + params.b
        if remainder > 0.0:
            # refractory tail of this step: voltage pinned, w keeps relaxing
            w_after = _w_relax(w_after, remainder, params)
        cross_frac = (t_offset + t_cross_rel) / dt
        refrac = max(params.tau_ref - remainder, 0.0)
        return StepResult(params.v_r, w_after, refrac, True, cross_frac)

    return StepResult(v_new, w_new, 0.0, False, 0.0)


@numba.njit(cache=True)
def _drift_jit(v, w, i_eff, c_m, g_l, v_l, v_t, delta_t):
    arg = (v - v_t) / delta_t
    if arg > 20.0:
        arg = 20.0
    return (g_l * (v_l - v) + g_l * delta_t * math.exp(arg) + i_eff - w) / c_m


@numba.njit(cache=True)
def _substep_jit(v, w, i_eff, dt_eff, c_m, g_l, v_l, v_t, v_th,
                 delta_t, a, tau_w, refine_steps):
    h = dt_eff / refine_steps
    vv = v
    ww = w
    for j in range(refine_steps):
        fv1 = _drift_jit(vv, ww, i_eff, c_m, g_l, v_l, v_t, delta_t)
        fw1 = (a * (vv - v_l) - ww) / tau_w
        v_pred = vv + h * fv1
        w_pred = ww + h * fw1
        fv2 = _drift_jit(v_pred, w_pred, i_eff, c_m, g_l, v_l, v_t, delta_t)
        fw2 = (a * (v_pred - v_l) - w_pred) / tau_w
        v_next = vv + 0.5 * h * (fv1 + fv2)
        w_next = ww + 0.5 * h * (fw1 + fw2)
        if v_next >= v_th:
            lo = 0.0
            hi = h
            w_hit = w_next
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                vp = vv + mid * fv1
                wp = ww + mid * fw1
                fv2m = _drift_jit(vp, wp, i_eff, c_m, g_l, v_l, v_t, delta_t)
                fw2m = (a * (vp - v_l) - wp) / tau_w
                v_mid = vv + 0.5 * mid * (fv1 + fv2m)
                if v_mid >= v_th:
                    hi = mid
                    w_hit = ww + 0.5 * mid * (fw1 + fw2m)
                else:
                    lo = mid
            return True, j * h + hi, w_hit, v_th, w_hit
        vv = v_next
        ww = w_next
    return False, dt_eff, ww, vv, ww


@numba.njit(cache=True)
def _integrate(n_steps, dt, c_m, g_l, v_l, v_t, v_th, v_r, delta_t, a, b, tau_w,
               tau_ref, onset, offset, amplitude, noise, max_spikes, refine_steps):
    voltages = np.empty(n_steps + 1)
    spike_times = np.empty(n_steps)
    v = v_l
    w = 0.0
    refrac = 0.0
    voltages[0] = v
    n_spikes = 0
    status = 0
    for k in range(n_steps):
        t = k * dt
        i_ext = amplitude if (onset <= t) and (t < offset) else 0.0

        if refrac >= dt:
            w_inf = a * (v_r - v_l)
            w = w_inf + (w - w_inf) * math.exp(-dt / tau_w)
            refrac -= dt
            voltages[k + 1] = v_r
            v = v_r
            continue

        dt_eff = dt
        t_offset = 0.0
        noise_k = noise[k]
        if refrac > 0.0:
            w_inf = a * (v_r - v_l)
            w = w_inf + (w - w_inf) * math.exp(-refrac / tau_w)
            v = v_r
            dt_eff = dt - refrac
            t_offset = refrac
            noise_k = noise_k * math.sqrt(dt_eff / dt)
            refrac = 0.0

        i_eff = i_ext + noise_k / dt_eff
        fv1 = _drift_jit(v, w, i_eff, c_m, g_l, v_l, v_t, delta_t)
        fw1 = (a * (v - v_l) - w) / tau_w
        v_pred = v + dt_eff * fv1
        w_pred = w + dt_eff * fw1
        fv2 = _drift_jit(v_pred, w_pred, i_eff, c_m, g_l, v_l, v_t, delta_t)
        fw2 = (a * (v_pred - v_l) - w_pred) / tau_w
        v_new = v + 0.5 * dt_eff * (fv1 + fv2)
        w_new = w + 0.5 * dt_eff * (fw1 + fw2)

        if not (math.isfinite(v_new) and math.isfinite(w_new)):
            status = 2
            voltages[k + 1] = v_r
            return voltages[: k + 2], spike_times[:n_spikes], status

        stiff = (v > v_t - 2.0 * delta_t) and (abs(v_pred - v) > 0.25 * delta_t)
        if v_new >= v_th or stiff:
            crossed, t_cross_rel, w_cross, v_end, w_end = _substep_jit(
                v, w, i_eff, dt_eff, c_m, g_l, v_l, v_t, v_th, delta_t, a,
                tau_w, refine_steps,
            )
            if crossed:
                remainder = dt_eff - t_cross_rel
                w_after = w_cross + b
                if remainder > 0.0:
                    w_inf = a * (v_r - v_l)
                    w_after = w_inf + (w_after - w_inf) * math.exp(-remainder / tau_w)
                t_cross = t + t_offset + t_cross_rel
                if n_spikes < max_spikes:
                    spike_times[n_spikes] = t_cross
                    n_spikes += 1
                else:
                    status = 1
                    voltages[k + 1] = v_r
                    return voltages[: k + 2], spike_times[:n_spikes], status
                refrac = tau_ref - remainder
                if refrac < 0.0:
                    refrac = 0.0
                v_new = v_r
                w_new = w_after
            else:
                v_new = v_end
                w_new = w_end

        v = v_new
        w = w_new
        voltages[k + 1] = v

    return voltages, spike_times[:n_spikes], status


def runaway_spike_limit(params: PhysicalParams, stimulus: Stimulus, dt: float) -> int:
    """Spike budget above which the run is flagged pathological."""
    inv_ref = 1.0 / params.tau_ref if params.tau_ref > 0 else 1.0 / dt
    limit = 10.0 * stimulus.experiment_length * (inv_ref + params.g_l / params.c_m)
    n_steps = int(round(stimulus.experiment_length / dt))
    return min(int(math.ceil(limit)), n_steps)


def simulate(params: PhysicalParams, stimulus: Stimulus, dt: float,
             noise: NoiseConfig) -> Trace:
    """Run one experiment; deterministic given (params, stimulus, dt, seed)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau_m = params.tau_m
    if dt > tau_m / 20.0:
        log.warning("dt=%.3g exceeds tau_m/20=%.3g; integration may be coarse", dt, tau_m / 20.0)

    n_steps = int(round(stimulus.experiment_length / dt))
    if noise.sigma_current > 0.0:
        rng = np.random.default_rng(noise.seed)
        noise_arr = noise.sigma_current * math.sqrt(dt) * rng.standard_normal(n_steps)
    else:
        noise_arr = np.zeros(n_steps)

    max_spikes = runaway_spike_limit(params, stimulus, dt)
    voltages, spike_times, status = _integrate(
        n_steps, dt, params.c_m, params.g_l, params.v_l, params.v_t, params.v_th,
        params.v_r, params.delta_t, params.a, params.b, params.tau_w, params.tau_ref,
        stimulus.onset, stimulus.onset + stimulus.duration, stimulus.amplitude,
        noise_arr, max_spikes, CROSSING_REFINE_STEPS,
    )
    if status == 1:
        raise SimulationError(
            f"runaway spiking: exceeded {max_spikes} spikes "
            f"(g_l={params.g_l:.3g}, v_t={params.v_t:.3g})",
            kind="runaway",
        )
    if status == 2:
        raise SimulationError("state became non-finite during integration", kind="non_finite")
    return Trace(dt=dt, voltages=voltages, spike_times=spike_times, stimulus=stimulus)
