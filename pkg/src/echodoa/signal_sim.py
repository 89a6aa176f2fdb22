"""Ultrasonic array echo synthesis and baseband conversion.

Generates the multi-channel carrier bursts seen by a small linear array
after reflecting off an obstacle, adds power-calibrated white Gaussian
noise, and demodulates the real waveforms to decimated complex baseband
for the DoA estimators.

All functions are pure: randomness enters only through explicit seeds
(noise uses a counter-based Philox stream keyed by seed and channel so
records can be generated in parallel without coordination).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import (
    EchoNotFoundError,
    InputError,
    MissingSignalPowerError,
    RateMismatchError,
    ScenarioOutOfWindowError,
)

ENVELOPE_KINDS = ("hann", "flat_top")

# FIR low-pass used in quadrature demodulation; odd length keeps the
# symmetric kernel zero-delay under "same" convolution.
_LOWPASS_TAPS = 129

# Detection floor relative to the record peak; protects the noiseless
# case from triggering on filter tails while staying far below any
# usable echo amplitude.
_PEAK_FLOOR = 0.01

NOISELESS = math.inf


@dataclass(frozen=True)
class SimConfig:
    """Physical and sampling constants of the simulated sensor."""

    carrier_freq: float = 51_200.0
    sound_speed: float = 340.0
    sample_rate: float = 1_000_000.0
    echo_duration: float = 300e-6
    listen_window: float = 8e-3
    decimation_factor: int = 8
    rng_seed: int = 0
    envelope: str = "hann"

    def __post_init__(self):
        for name in ("carrier_freq", "sound_speed", "sample_rate",
                     "echo_duration", "listen_window"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")
        if self.sample_rate <= 2 * self.carrier_freq:
            raise InputError("sample_rate must exceed twice the carrier frequency")
        if self.echo_duration >= self.listen_window:
            raise InputError("echo_duration must be shorter than listen_window")
        if self.decimation_factor < 1:
            raise InputError("decimation_factor must be a positive integer")
        if self.n_samples % self.decimation_factor != 0:
            raise InputError("decimation_factor must divide the listen-window sample count")
        if self.envelope not in ENVELOPE_KINDS:
            raise InputError(f"envelope must be one of {ENVELOPE_KINDS}")
        if not 0 <= self.rng_seed < 2**64:
            raise InputError("rng_seed must fit in 64 bits")

    @property
    def n_samples(self) -> int:
        return round(self.listen_window * self.sample_rate)

    @property
    def effective_rate(self) -> float:
        return self.sample_rate / self.decimation_factor

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        """Load from a plain-text file of ``key = value`` lines.

        Recognized keys are exactly the field names; ``#`` starts a
        comment. Unknown keys are rejected.
        """
        fields = {f: None for f in cls.__dataclass_fields__}
        overrides = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise InputError(f"{path}:{lineno}: unknown key {key!r}")
            if key == "envelope":
                overrides[key] = value
            elif key in ("decimation_factor", "rng_seed"):
                overrides[key] = int(value)
            else:
                overrides[key] = float(value)
        return cls(**overrides)


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions (meters) along the array baseline."""

    element_x: tuple

    def __post_init__(self):
        xs = tuple(float(x) for x in self.element_x)
        object.__setattr__(self, "element_x", xs)
        if len(xs) < 2:
            raise InputError("array needs at least two elements")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise InputError("element positions must be strictly increasing")

    @classmethod
    def pair(cls, spacing_m: float) -> "ArrayGeometry":
        """Two-element array with the first element at the origin."""
        return cls(element_x=(0.0, float(spacing_m)))

    @property
    def num_elements(self) -> int:
        return len(self.element_x)

    def spacing_wavelengths(self, wavelength_m: float) -> tuple:
        """Adjacent spacings expressed in wavelengths."""
        return tuple((b - a) / wavelength_m
                     for a, b in zip(self.element_x, self.element_x[1:]))


@dataclass(frozen=True)
class SourceScenario:
    """Single obstacle: direction, radial range, and noise level."""

    doa_deg: float
    range_m: float
    snr_db: float = NOISELESS
    label: str = ""

    def __post_init__(self):
        if abs(self.doa_deg) > 90.0:
            raise InputError("doa_deg must lie in [-90, 90]")
        if self.range_m <= 0:
            raise InputError("range_m must be positive")


@dataclass
class RealWaveform:
    """Pre-demodulation sensor output, channel-major."""

    data: np.ndarray            # (channels, samples) float64
    sample_rate: float
    echo_support: tuple | None = None   # [start, stop) sample interval on channel 0
    signal_power: float | None = None   # mean clean-echo power over the support

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples_per_channel(self) -> int:
        return self.data.shape[1]


@dataclass
class ComplexBaseband:
    """Demodulated, decimated complex samples, channel-major."""

    data: np.ndarray            # (channels, samples) complex128
    sample_rate: float          # effective rate after decimation

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples_per_channel(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class EchoWindow:
    """Detected echo interval in baseband samples."""

    start: int
    stop: int
    tof_s: float


def wavelength(config: SimConfig) -> float:
    """Carrier wavelength in meters, sound_speed / carrier_freq."""
    return config.sound_speed / config.carrier_freq


def steering_vector(geometry: ArrayGeometry, doa_deg: float,
                    wavelength_m: float) -> np.ndarray:
    """Unit-modulus array response for a plane wave from ``doa_deg``.

    Phase is referenced to element 0, so the first entry is exactly 1.
    """
    if abs(doa_deg) > 90.0:
        raise InputError("doa_deg must lie in [-90, 90]")
    x = np.asarray(geometry.element_x) - geometry.element_x[0]
    phase = -2.0 * np.pi * x * math.sin(math.radians(doa_deg)) / wavelength_m
    return np.exp(1j * phase)


def _envelope(t: np.ndarray, duration: float, kind: str) -> np.ndarray:
    """Amplitude envelope evaluated at times relative to echo onset."""
    u = t / duration
    inside = (u >= 0.0) & (u <= 1.0)
    if kind == "hann":
        env = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.clip(u, 0.0, 1.0)))
    elif kind == "flat_top":
        # wall-like return: flat plateau with 10% raised-cosine ramps
        ramp = 0.1
        uc = np.clip(u, 0.0, 1.0)
        env = np.ones_like(uc)
        rising = uc < ramp
        falling = uc > 1.0 - ramp
        env[rising] = 0.5 * (1.0 - np.cos(np.pi * uc[rising] / ramp))
        env[falling] = 0.5 * (1.0 - np.cos(np.pi * (1.0 - uc[falling]) / ramp))
    else:
        raise InputError(f"unknown envelope kind {kind!r}")
    return np.where(inside, env, 0.0)


def synthesize_echo(scenario: SourceScenario, geometry: ArrayGeometry,
                    config: SimConfig) -> RealWaveform:
    """Noiseless carrier burst as received by every array element.

    Channel m starts at 2*range/c plus the far-field inter-element delay
    element_x[m]*sin(doa)/c and carries the configured envelope. The
    returned waveform remembers the reference channel's active interval
    and mean power so noise can be calibrated later.
    """
    fs = config.sample_rate
    c = config.sound_speed
    n = config.n_samples
    sin_theta = math.sin(math.radians(scenario.doa_deg))
    base_delay = 2.0 * scenario.range_m / c

    data = np.zeros((geometry.num_elements, n))
    t_grid = np.arange(n) / fs
    for m, x_m in enumerate(geometry.element_x):
        tau = base_delay + x_m * sin_theta / c
        if tau < 0.0 or tau + config.echo_duration > config.listen_window:
            raise ScenarioOutOfWindowError(
                f"echo on element {m} spans [{tau * 1e3:.3f}, "
                f"{(tau + config.echo_duration) * 1e3:.3f}] ms, outside the "
                f"{config.listen_window * 1e3:.3f} ms listen window")
        t_rel = t_grid - tau
        data[m] = (_envelope(t_rel, config.echo_duration, config.envelope)
                   * np.cos(2.0 * np.pi * config.carrier_freq * t_rel))

    tau0 = base_delay + geometry.element_x[0] * sin_theta / c
    start = math.ceil(tau0 * fs)
    stop = min(n, math.floor((tau0 + config.echo_duration) * fs) + 1)
    power = float(np.mean(data[0, start:stop] ** 2))
    return RealWaveform(data=data, sample_rate=fs,
                        echo_support=(start, stop), signal_power=power)


def add_awgn(wave: RealWaveform, snr_db: float, seed: int,
             signal_power: float | None = None) -> RealWaveform:
    """Add white Gaussian noise at the requested SNR.

    Noise variance is P_signal * 10**(-snr_db/10) where P_signal is the
    clean echo's mean power over its active duration (carried on the
    waveform, or supplied explicitly). ``snr_db = inf`` is the noiseless
    sentinel and returns an untouched copy. Each channel draws from an
    independent Philox stream keyed by (seed, channel).
    """
    if math.isinf(snr_db) and snr_db > 0:
        return replace(wave, data=wave.data.copy())
    power = signal_power if signal_power is not None else wave.signal_power
    if power is None:
        raise MissingSignalPowerError(
            "clean signal power unknown; synthesize the echo first or pass "
            "signal_power explicitly")
    sigma = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    out = wave.data.copy()
    n = wave.samples_per_channel
    for ch in range(wave.channels):
        rng = np.random.Generator(np.random.Philox(key=np.array(
            [seed, ch], dtype=np.uint64)))
        out[ch] += rng.normal(0.0, sigma, n)
    return replace(wave, data=out)


@lru_cache(maxsize=8)
def _lowpass_taps(cutoff_hz: float, fs: float) -> np.ndarray:
    return sps.firwin(_LOWPASS_TAPS, cutoff=cutoff_hz, fs=fs)


def to_baseband(wave: RealWaveform, config: SimConfig) -> ComplexBaseband:
    """Quadrature demodulation, low-pass filtering, and decimation.

    Multiplies by exp(-i*2*pi*f*t), applies a linear-phase FIR low pass
    with cutoff at half the carrier (zero net delay), then keeps every
    decimation_factor-th sample. A unit-amplitude carrier tone maps to
    baseband magnitude 0.5 (analytic-signal halving).
    """
    if wave.sample_rate != config.sample_rate:
        raise RateMismatchError(
            f"waveform sampled at {wave.sample_rate} Hz, config expects "
            f"{config.sample_rate} Hz")
    fs = config.sample_rate
    t = np.arange(wave.samples_per_channel) / fs
    mixed = wave.data * np.exp(-2j * np.pi * config.carrier_freq * t)
    taps = _lowpass_taps(config.carrier_freq / 2.0, fs)
    filtered = sps.fftconvolve(mixed, taps[None, :], mode="same", axes=1)
    return ComplexBaseband(data=filtered[:, ::config.decimation_factor],
                           sample_rate=config.effective_rate)


def detect_echo_window(base: ComplexBaseband, threshold_factor: float = 5.0,
                       lead_fraction: float = 0.125,
                       min_len: int = 1) -> EchoWindow:
    """Find the echo interval on the reference channel.

    The threshold is threshold_factor times the median magnitude of the
    leading noise-only segment (first ``lead_fraction`` of the record),
    floored at a small fraction of the record peak. The window runs from
    the first crossing until the magnitude falls back below, extended to
    at least ``min_len`` samples. Time of flight is the onset sample
    over the effective sample rate.
    """
    if threshold_factor <= 1.0:
        raise InputError("threshold_factor must exceed 1")
    mag = np.abs(base.data[0])
    n = mag.size
    if n < min_len:
        raise InputError(f"record has {n} samples, need at least {min_len}")
    lead = max(8, int(n * lead_fraction))
    noise_median = float(np.median(mag[:lead]))
    threshold = max(threshold_factor * noise_median, _PEAK_FLOOR * float(mag.max()))
    above = mag > threshold
    if not above.any():
        raise EchoNotFoundError("no sample crossed the detection threshold")
    start = int(np.argmax(above))
    below_after = ~above[start:]
    stop = start + (int(np.argmax(below_after)) if below_after.any()
                    else n - start)
    if stop - start < min_len:
        stop = min(n, start + min_len)
        start = max(0, stop - min_len)
    return EchoWindow(start=start, stop=stop, tof_s=start / base.sample_rate)
