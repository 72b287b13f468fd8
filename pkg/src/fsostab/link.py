"""Time-domain simulation of the two-way stabilization interferometer.

The chain tracks phase deviations about the nominal carriers (the RF and
optical carriers themselves are bookkeeping constants), so the sampled
state is baseband phase in rad. One round trip of the primary signal
forms the servo error; the servo drives a frequency (doppler) or
group-delay actuator at the transmit end; the one-way secondary beat
against the local secondary source is the measurement signal.

Delays are applied to the noise processes by first-order (linear
interpolation) fractional delay, which has exactly the right group delay
at low frequency and lets the physical sub-sample time of flight
(T = 500.3 ns for the 150 m channel) coexist with practical sample
rates. In scaled-delay validation mode T is set to an integer number of
samples so the cos(2*pi*f*T) structure of the transfer functions is
visible in-band.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as _signal

from .errors import ConfigError
from .noise import PhaseSeries, PsdModel, synthesize_phase_noise

_log = logging.getLogger(__name__)

SPEED_OF_LIGHT_M_S = 299_792_458.0

#: Anti-windup clamp on each integral contribution to the actuator
#: command. Runs that hit it are flagged, never silently truncated.
ANTI_WINDUP_RAD = 1.0e6

#: Error magnitude beyond which a run is flagged as diverging.
ERROR_DIVERGENCE_RAD = 1.0e6

MODES = ("unstabilized", "doppler", "group-delay")
ACTUATORS = ("none", "doppler", "group-delay")


@dataclass(frozen=True)
class ServoConfig:
    """Discrete PI(+I^2) servo acting on the round-trip error signal.

    The command is the actuator phase setpoint at the primary carrier,
    scaled by 1/2 because the error sees the correction twice per round
    trip. ``kii`` adds a second integrator stage for scenarios that need
    very high low-frequency rejection; it defaults to off.
    """

    kp: float = 0.2
    ki: float = 1.0e4
    kii: float = 0.0
    bandwidth_hint_hz: float | None = None
    enabled: bool = True

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0 or self.kii < 0:
            raise ConfigError("servo gains must be >= 0")


@dataclass(frozen=True)
class LinkConfig:
    """Full physical and servo description of one link scenario."""

    nu_p_hz: float = 193.1e12
    nu_s_hz: float = 193.1e12
    nu_lo_hz: float = 75.0e6
    nu_rm_hz: float = -85.0e6
    link_length_m: float | None = 150.0
    t_one_way_s: float | None = None
    actuator: str = "doppler"
    servo: ServoConfig = field(default_factory=ServoConfig)
    fs_hz: float = 20.0e3
    n_samples: int = 2**21
    approximate_roundtrip: bool = True

    def __post_init__(self):
        if self.nu_p_hz <= 0 or self.nu_s_hz <= 0:
            raise ConfigError("optical carriers must be > 0")
        if self.link_length_m is not None and self.t_one_way_s is not None:
            raise ConfigError("link_length_m and t_one_way_s are mutually exclusive")
        if self.link_length_m is None and self.t_one_way_s is None:
            raise ConfigError("one of link_length_m or t_one_way_s is required")
        if abs(self.nu_lo_hz + self.nu_rm_hz) <= 0.0:
            raise ConfigError(
                "nu_lo_hz + nu_rm_hz must give a nonzero measurement beat"
            )
        if self.actuator not in ACTUATORS:
            raise ConfigError(f"unknown actuator {self.actuator!r}")
        if self.actuator == "none" and self.servo.enabled:
            raise ConfigError("actuator 'none' requires the servo to be disabled")
        if self.fs_hz <= 0:
            raise ConfigError("fs_hz must be > 0")
        if self.n_samples < 64:
            raise ConfigError("n_samples must be >= 64")
        if self.t_one_way_s is not None and self.t_one_way_s * self.fs_hz < 1.0:
            raise ConfigError(
                "explicit t_one_way_s is sub-sample at this fs_hz; "
                "use link_length_m for physical sub-sample delays"
            )
        if self.servo.enabled and self.servo.ki * self.dt_s >= 2.0:
            raise ConfigError("servo ki too large for fs_hz (discrete loop unstable)")

    @property
    def t_one_way(self) -> float:
        if self.t_one_way_s is not None:
            return self.t_one_way_s
        return self.link_length_m / SPEED_OF_LIGHT_M_S

    @property
    def dt_s(self) -> float:
        return 1.0 / self.fs_hz

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    @property
    def beat_hz(self) -> float:
        return self.nu_lo_hz + self.nu_rm_hz


@dataclass
class NoiseInputs:
    """Noise realizations driving one run.

    phi_p / phi_s are the laser phase-noise series; dt_atm is the
    atmospheric piston expressed as time-of-flight fluctuation in
    seconds, so the phase it imprints at carrier nu is 2*pi*nu*dt_atm.
    """

    phi_p: PhaseSeries
    phi_s: PhaseSeries
    dt_atm: np.ndarray
    fs_hz: float

    def __post_init__(self):
        self.dt_atm = np.asarray(self.dt_atm, dtype=float)
        if not (self.phi_p.fs_hz == self.phi_s.fs_hz == self.fs_hz):
            raise ValueError("noise inputs must share one sample rate")
        if not (len(self.phi_p) == len(self.phi_s) == self.dt_atm.size):
            raise ValueError("noise inputs must share one length")
        if not np.all(np.isfinite(self.dt_atm)):
            raise ValueError("dt_atm contains non-finite values")
        if np.max(np.abs(self.dt_atm), initial=0.0) >= 0.1 / self.fs_hz:
            raise ValueError("dt_atm must stay far below one sample interval")

    def __len__(self):
        return self.dt_atm.size

    @classmethod
    def from_models(cls, models: dict, fs_hz: float, n: int, seed, nu_ref_hz: float):
        """Synthesize paired inputs from {primary, secondary, atmosphere} models.

        One seed expands deterministically into per-source streams, so
        runs that share a seed share realizations exactly.
        """
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_p, s_s, s_a = ss.spawn(3)
        phi_p = synthesize_phase_noise(models["primary"], fs_hz, n, s_p)
        phi_p.label = "primary-laser"
        phi_s = synthesize_phase_noise(models["secondary"], fs_hz, n, s_s)
        phi_s.label = "secondary-laser"
        dt_atm = atmosphere_from_psd(models["atmosphere"], nu_ref_hz, fs_hz, n, s_a)
        return cls(phi_p, phi_s, dt_atm, fs_hz)


@dataclass
class LinkState:
    """Mutable per-run state: delay bookkeeping, servo and actuator."""

    config: LinkConfig
    t_samples: float
    k_roundtrip: int
    warmup_samples: int
    integ1: float = 0.0
    integ2: float = 0.0
    act_phase_rad: float = 0.0
    dnu_lo_hz: float = 0.0
    tau_c_s: float = 0.0
    idx: int = 0
    clamped: bool = False
    fault: bool = False
    flags: list = field(default_factory=list)

    def flag(self, name: str):
        if name not in self.flags:
            self.flags.append(name)


@dataclass
class LinkTrace:
    """Diagnostics aligned with the returned measurement series."""

    fs_hz: float
    t0_s: float
    error_rad: np.ndarray
    act_phase_rad: np.ndarray
    dnu_lo_hz: np.ndarray
    warmup_samples: int
    mode: str
    engine: str
    flags: list
    flagged: bool


def make_link(config: LinkConfig) -> LinkState:
    """Initialize run state; reports delay representation and warm-up."""
    t_samples = config.t_one_way * config.fs_hz
    k_exact = max(1, int(round(2.0 * t_samples)))
    k = 1 if config.approximate_roundtrip else k_exact
    settle = 0
    if config.servo.enabled and config.servo.ki > 0:
        tau = 1.0 / config.servo.ki
        if config.servo.kii > 0:
            tau = max(tau, config.servo.ki / config.servo.kii)
        settle = int(math.ceil(5.0 * tau * config.fs_hz))
    warmup = int(math.ceil(3.0 * t_samples)) + settle + 32
    if warmup > 0.1 * config.n_samples:
        raise ConfigError(
            f"warm-up ({warmup} samples) exceeds 10% of the run ({config.n_samples})"
        )
    _log.info(
        "link state: T=%.6g s (%.4g samples), roundtrip_delay=%d samples, warmup=%d",
        config.t_one_way,
        t_samples,
        k,
        warmup,
    )
    return LinkState(config, t_samples, k, warmup)


def error_signal(phi_p_now, phi_p_roundtrip, atm_now, atm_roundtrip, act_now, act_roundtrip):
    """Round-trip servo error in rad.

    Mixing the returned primary beat with the 2*nu_lo + 2*nu_rm local
    oscillator cancels all nominal carriers, leaving the primary
    self-delay term plus both passes of the actuator and of the
    atmospheric piston phase.
    """
    return (phi_p_roundtrip - phi_p_now) + (act_now + act_roundtrip) + (atm_now + atm_roundtrip)


def servo_update(servo: ServoConfig, error: float, dt: float, state: LinkState) -> float:
    """Advance the PI(+I^2) controller one step; returns the phase command.

    The command opposes the error and carries the 1/2 factor that
    accounts for the correction being seen twice per round trip. A
    non-finite error opens the loop (command frozen) and flags the run;
    integral contributions clamp at +-ANTI_WINDUP_RAD with a flag.
    """
    if not servo.enabled:
        raise ConfigError("servo_update called with a disabled servo")
    if not np.isfinite(error):
        state.fault = True
        state.flag("non-finite")
        return state.act_phase_rad
    if state.fault:
        return state.act_phase_rad
    state.integ1 += error * dt
    if servo.ki > 0:
        lim = ANTI_WINDUP_RAD / servo.ki
        if abs(state.integ1) > lim:
            state.integ1 = math.copysign(lim, state.integ1)
            state.clamped = True
            state.flag("integrator-clamp")
    state.integ2 += state.integ1 * dt
    if servo.kii > 0:
        lim = ANTI_WINDUP_RAD / servo.kii
        if abs(state.integ2) > lim:
            state.integ2 = math.copysign(lim, state.integ2)
            state.clamped = True
            state.flag("integrator-clamp")
    return -0.5 * (servo.kp * error + servo.ki * state.integ1 + servo.kii * state.integ2)


def apply_actuator(state: LinkState, command: float, carrier_hz: float) -> float:
    """Apply a phase command (at nu_p) and return the correction at ``carrier_hz``.

    doppler     : the AOM integrates a frequency offset; the accumulated
                  phase 2*pi*int(dnu_lo) is identical at every optical
                  carrier.
    group-delay : the stretcher realizes the command as a correction
                  delay tau_c, so the phase scales with the carrier,
                  2*pi*carrier*tau_c.
    """
    if carrier_hz <= 0:
        raise ValueError("carrier_hz must be > 0")
    mode = state.config.actuator
    if mode == "none":
        return 0.0
    dt = state.config.dt_s
    state.dnu_lo_hz = (command - state.act_phase_rad) / (2.0 * np.pi * dt)
    state.act_phase_rad = command
    if mode == "doppler":
        return command
    state.tau_c_s = command / (2.0 * np.pi * state.config.nu_p_hz)
    return 2.0 * np.pi * carrier_hz * state.tau_c_s


def fractional_delay(x: np.ndarray, delay_samples: float, fill: str = "hold") -> np.ndarray:
    """First-order (linear interpolation) fractional delay of a series.

    Exact for integer delays; for sub-sample delays the low-frequency
    group delay is exact and the response droops by sinc^2(f/fs) toward
    Nyquist. Samples before t=0 are the first sample (fill="hold") or
    zero (fill="zero"); warm-up exclusion hides either choice.
    """
    x = np.asarray(x, dtype=float)
    if delay_samples < 0:
        raise ValueError("delay must be >= 0")
    n = x.size
    m = int(math.floor(delay_samples))
    mu = delay_samples - m
    pad = x[0] if fill == "hold" else 0.0
    if m >= n:
        return np.full_like(x, pad)
    a = np.empty_like(x)
    a[:m] = pad
    a[m:] = x[: n - m]
    if mu == 0.0:
        return a
    b = np.empty_like(x)
    b[: m + 1] = pad
    b[m + 1 :] = x[: n - m - 1]
    return (1.0 - mu) * a + mu * b


def _int_shift(x: np.ndarray, k: int) -> np.ndarray:
    """Integer delay with zero fill (history before t=0 is zero)."""
    if k == 0:
        return x
    out = np.zeros_like(x)
    out[k:] = x[:-k]
    return out


def _loop_coefficients(servo: ServoConfig, dt: float, k_roundtrip: int):
    """Transfer function theta/d of the closed loop as lfilter (b, a).

    Derived from the per-sample recursion used by the reference engine:
    e_n = d_n + theta_{n-1} + theta_{n-K}; S1 += e dt; S2 += S1 dt;
    theta_n = -(kp e_n + ki S1_n + kii S2_n)/2.
    """
    n0 = 0.5 * (servo.kp + servo.ki * dt + servo.kii * dt * dt)
    n1 = 0.5 * (-2.0 * servo.kp - servo.ki * dt)
    n2 = 0.5 * servo.kp
    b = np.array([-n0, -n1, -n2])
    a = np.zeros(k_roundtrip + 3)
    a[0] = 1.0
    a[1] -= 2.0
    a[2] += 1.0
    a[1] += n0
    a[2] += n1
    a[3] += n2
    a[k_roundtrip] += n0
    a[k_roundtrip + 1] += n1
    a[k_roundtrip + 2] += n2
    return b, a


def _forcing_and_measurement_parts(config: LinkConfig, inputs: NoiseInputs):
    """Precompute the delayed noise combinations feeding error and measurement."""
    ts = config.t_one_way * config.fs_hz
    phi_p = inputs.phi_p.samples
    phi_s = inputs.phi_s.samples
    g_p = 2.0 * np.pi * config.nu_p_hz * inputs.dt_atm
    d = (fractional_delay(phi_p, 2.0 * ts) - phi_p) + (fractional_delay(g_p, 2.0 * ts) + g_p)
    m_base = (fractional_delay(phi_s, ts) - phi_s) + (config.nu_s_hz / config.nu_p_hz) * g_p
    return d, m_base, ts


def _assemble_outputs(config, mode, d, m_base, ts, theta, state, engine):
    dt = config.dt_s
    k = state.k_roundtrip
    err = d + _int_shift(theta, 1) + _int_shift(theta, k)
    if mode == "doppler":
        scale = 1.0
    elif mode == "group-delay":
        scale = config.nu_s_hz / config.nu_p_hz
    else:
        scale = 0.0
    # theta[n] takes effect at sample n+1 (the same convention the error
    # path uses), so the correction seen at transmission time t-T is
    # theta delayed by T plus that one sample.
    m = m_base + scale * fractional_delay(theta, ts + 1.0, fill="zero")
    dnu = np.diff(theta, prepend=0.0) / (2.0 * np.pi * dt)
    w = state.warmup_samples
    flagged = bool(state.flags)
    if flagged:
        _log.warning("run flagged: %s", ",".join(state.flags))
    series = PhaseSeries(m[w:], config.fs_hz, t0_s=w * dt, label=f"meas[{mode}]")
    trace = LinkTrace(
        fs_hz=config.fs_hz,
        t0_s=w * dt,
        error_rad=err[w:],
        act_phase_rad=theta[w:],
        dnu_lo_hz=dnu[w:],
        warmup_samples=w,
        mode=mode,
        engine=engine,
        flags=list(state.flags),
        flagged=flagged,
    )
    return series, trace


def _run_reference(config, mode, d, state):
    """Per-sample loop composed of the public op functions (slow, clamping)."""
    n = d.size
    dt = config.dt_s
    k = state.k_roundtrip
    servo_on = mode != "unstabilized" and config.servo.enabled
    theta = np.zeros(n)
    for i in range(n):
        a_now = theta[i - 1] if i >= 1 else 0.0
        a_rt = a_now if config.approximate_roundtrip else (theta[i - k] if i >= k else 0.0)
        e = d[i] + a_now + a_rt
        if abs(e) > ERROR_DIVERGENCE_RAD or not np.isfinite(e):
            state.flag("error-divergence" if np.isfinite(e) else "non-finite")
        if servo_on:
            cmd = servo_update(config.servo, e, dt, state)
            # at the primary carrier both actuator types return the command
            theta[i] = apply_actuator(state, cmd, config.nu_p_hz)
        state.idx = i
    return theta


def _run_fast(config, mode, d, state):
    """Closed-loop solution via lfilter; exact while no clamp engages."""
    servo_on = mode != "unstabilized" and config.servo.enabled
    n = d.size
    if not servo_on:
        return np.zeros(n), True
    b, a = _loop_coefficients(config.servo, config.dt_s, state.k_roundtrip)
    theta = _signal.lfilter(b, a, d)
    err = d + _int_shift(theta, 1) + _int_shift(theta, state.k_roundtrip)
    ok = True
    if not np.all(np.isfinite(theta)):
        state.flag("non-finite")
        ok = False
    else:
        if np.max(np.abs(err)) > ERROR_DIVERGENCE_RAD:
            state.flag("error-divergence")
            ok = False
        s1 = np.cumsum(err) * config.dt_s
        if config.servo.ki > 0 and np.max(np.abs(config.servo.ki * s1)) > ANTI_WINDUP_RAD:
            state.flag("integrator-clamp")
            ok = False
        elif config.servo.kii > 0:
            s2 = np.cumsum(s1) * config.dt_s
            if np.max(np.abs(config.servo.kii * s2)) > ANTI_WINDUP_RAD:
                state.flag("integrator-clamp")
                ok = False
    return theta, ok


def run_link(config: LinkConfig, inputs: NoiseInputs, mode: str | None = None, engine: str = "fast"):
    """Run the chain and return (measurement PhaseSeries, LinkTrace).

    ``mode`` is one of "unstabilized", "doppler", "group-delay"
    (default: the configured actuator). The fast engine solves the loop
    as an LTI recursion; whenever a clamp or fault condition fires it
    falls back to the per-sample reference engine so the nonlinear
    clamp behavior and flags are honest. Identical config and inputs
    give bit-identical outputs.
    """
    if mode is None:
        mode = "unstabilized" if config.actuator == "none" else config.actuator
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if mode != "unstabilized":
        if not config.servo.enabled:
            raise ConfigError("stabilized modes require an enabled servo")
        if config.actuator != mode:
            config = replace(config, actuator=mode)
    if len(inputs) != inputs.dt_atm.size or len(inputs.phi_p) != len(inputs):
        raise ValueError("inconsistent input lengths")
    state = make_link(config)
    if len(inputs) < state.warmup_samples + 16:
        raise ValueError("inputs shorter than warm-up; lengthen the run")
    d, m_base, ts = _forcing_and_measurement_parts(config, inputs)
    if engine == "reference":
        theta = _run_reference(config, mode, d, state)
    elif engine == "fast":
        theta, ok = _run_fast(config, mode, d, state)
        if not ok:
            _log.warning("fast path flagged (%s); re-running reference engine", state.flags)
            ref_state = make_link(config)
            theta = _run_reference(config, mode, d, ref_state)
            for fl in state.flags:
                ref_state.flag(fl)
            state = ref_state
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return _assemble_outputs(config, mode, d, m_base, ts, theta, state, engine)


def atmosphere_from_psd(model: PsdModel, nu_ref_hz: float, fs_hz: float, n: int, seed) -> np.ndarray:
    """Synthesize piston time-of-flight fluctuations from a phase PSD.

    ``model`` is the atmospheric phase-noise PSD as seen at the
    reference carrier; dividing the synthesized phase by 2*pi*nu_ref
    yields delay seconds, so the phase reconstructed at any carrier nu
    is (nu/nu_ref) times the synthesized phase.
    """
    if nu_ref_hz <= 0:
        raise ValueError("nu_ref_hz must be > 0")
    phase = synthesize_phase_noise(model, fs_hz, n, seed)
    return phase.samples / (2.0 * np.pi * nu_ref_hz)
