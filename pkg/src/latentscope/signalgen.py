"""Synthetic inspiral-chirp bank, detector variants, and coloured Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# G * M_sun / c^3 in seconds.
T_SUN = 4.925490947641267e-06


class SignalConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChirpParams:
    m1: float
    m2: float
    f_min: float = 40.0
    sample_rate: float = 1024.0
    amplitude: float = 1.0
    spin1: float = 0.7
    spin2: float = 0.9

    def __post_init__(self):
        if not (self.m1 >= self.m2 > 0):
            raise SignalConfigError(f"need m1 >= m2 > 0, got m1={self.m1}, m2={self.m2}")
        if self.f_min <= 0 or self.sample_rate <= 0 or self.amplitude <= 0:
            raise SignalConfigError("f_min, sample_rate and amplitude must be positive")
        if self.f_min >= self.sample_rate / 2:
            raise SignalConfigError(
                f"f_min={self.f_min} Hz violates Nyquist for sample_rate={self.sample_rate} Hz"
            )

    @property
    def chirp_mass(self) -> float:
        return chirp_mass(self.m1, self.m2)


@dataclass
class Signal:
    samples: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class DetectorProfile:
    id: str
    gain: float = 1.0
    delay: int = 0

    def __post_init__(self):
        if self.gain <= 0:
            raise SignalConfigError(f"detector {self.id}: gain must be positive")
        if self.delay < 0:
            raise SignalConfigError(f"detector {self.id}: delay must be non-negative")


DETECTORS = {
    "H1": DetectorProfile("H1", 1.0, 0),
    "L1": DetectorProfile("L1", 0.85, 7),
    "V1": DetectorProfile("V1", 0.6, 13),
}


@dataclass(frozen=True)
class NoiseSpec:
    psd_slope: float = -1.0
    psd_scale: float = 2e-4
    f_knee: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.psd_scale < 0:
            raise SignalConfigError("psd_scale must be non-negative")
        if self.f_knee <= 0:
            raise SignalConfigError("f_knee must be positive")


@dataclass
class Dataset:
    noisy: np.ndarray
    clean: np.ndarray
    meta: list

    def __post_init__(self):
        if self.noisy.shape != self.clean.shape:
            raise ValueError("noisy and clean must have identical shapes")
        if len(self.meta) != self.noisy.shape[0]:
            raise ValueError("one meta record per row required")

    def __len__(self):
        return self.noisy.shape[0]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.noisy[rows], self.clean[rows], [self.meta[i] for i in rows])


def chirp_mass(m1, m2):
    return (m1 * m2) ** 0.6 / (m1 + m2) ** 0.2


def time_to_coalescence(mc, f):
    """Newtonian chirp time from frequency ``f`` (Hz) for chirp mass ``mc`` (M_sun)."""
    tc = T_SUN * mc
    return (5.0 / 256.0) * tc ** (-5.0 / 3.0) * (np.pi * f) ** (-8.0 / 3.0)


def instantaneous_frequency(params: ChirpParams, t):
    tau = time_to_coalescence(params.chirp_mass, params.f_min) - np.asarray(t, dtype=np.float64)
    return (5.0 / (256.0 * tau)) ** 0.375 * (T_SUN * params.chirp_mass) ** -0.625 / np.pi


def chirp_length(params: ChirpParams, duration: float) -> int:
    """Whole sample intervals before the earlier of ``duration`` and the Nyquist crossing."""
    mc = params.chirp_mass
    t_end = time_to_coalescence(mc, params.f_min) - time_to_coalescence(mc, params.sample_rate / 2)
    t_end = min(t_end, duration)
    return int(np.floor(t_end * params.sample_rate + 1e-9))


def make_chirp(params: ChirpParams, duration: float) -> Signal:
    """Newtonian-order inspiral chirp starting at ``f_min`` with zero phase.

    The wave ends once its frequency would pass Nyquist, a fraction of a
    sample before coalescence at desk sample rates, or at ``duration``.
    """
    if duration <= 0:
        raise SignalConfigError("duration must be positive")
    n = chirp_length(params, duration)
    if n < 1:
        raise SignalConfigError(
            f"chirp shorter than one sample for m1={params.m1}, m2={params.m2}, duration={duration}"
        )
    mc_sec = T_SUN * params.chirp_mass
    t = np.arange(n) / params.sample_rate
    t_c = time_to_coalescence(params.chirp_mass, params.f_min)
    theta = (t_c - t) / (5.0 * mc_sec)
    phase = 2.0 * ((t_c / (5.0 * mc_sec)) ** 0.625 - theta ** 0.625)
    freq = instantaneous_frequency(params, t)
    with np.errstate(over="ignore", invalid="ignore"):
        samples = params.amplitude * (freq / params.f_min) ** (2.0 / 3.0) * np.cos(phase)
    if not np.all(np.isfinite(samples)):
        raise SignalConfigError(f"non-finite chirp for m1={params.m1}, m2={params.m2}")
    meta = {"m1": params.m1, "m2": params.m2, "spin1": params.spin1, "spin2": params.spin2,
            "detector": None}
    return Signal(samples, params.sample_rate, meta)


def project_detector(signal: Signal, profile: DetectorProfile) -> Signal:
    n = len(signal)
    if profile.delay >= n:
        raise SignalConfigError(f"delay {profile.delay} >= signal length {n}")
    out = np.zeros(n)
    out[profile.delay:] = profile.gain * signal.samples[:n - profile.delay]
    return Signal(out, signal.sample_rate, {**signal.meta, "detector": profile.id})


def zero_pad(signal: Signal, target_len: int) -> Signal:
    n = len(signal)
    if target_len < n:
        raise SignalConfigError(f"target_len {target_len} shorter than signal length {n}")
    out = np.zeros(target_len)
    out[:n] = signal.samples
    return Signal(out, signal.sample_rate, dict(signal.meta))


def psd(freqs, spec: NoiseSpec):
    """One-sided power-law PSD: flat above f_knee, ``(f/f_knee)**slope`` below."""
    f = np.asarray(freqs, dtype=np.float64)
    with np.errstate(divide="ignore"):
        shape = np.where(f < spec.f_knee, (np.maximum(f, 1e-300) / spec.f_knee) ** spec.psd_slope, 1.0)
    return spec.psd_scale * shape


def noise_realization(n: int, sample_rate: float, spec: NoiseSpec, stream=()) -> np.ndarray:
    """Stationary Gaussian noise with one-sided PSD ``psd(f, spec)``.

    White unit-variance samples are shaped in the frequency domain by
    ``sqrt(psd * fs / 2)``; for a flat PSD this gives variance ``psd_scale * fs / 2``.
    ``stream`` extends the seed so independent rows get independent noise.
    """
    rng = np.random.default_rng([spec.seed, *np.atleast_1d(stream).tolist()])
    white = rng.standard_normal(n)
    if spec.psd_scale == 0:
        return np.zeros(n)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    freqs[0] = freqs[1] if n > 1 else 1.0
    amp = np.sqrt(psd(freqs, spec) * sample_rate / 2.0)
    return np.fft.irfft(np.fft.rfft(white) * amp, n=n)


def add_noise(signal: Signal, spec: NoiseSpec, stream=()) -> Signal:
    if spec.psd_scale == 0:
        return Signal(signal.samples.copy(), signal.sample_rate, dict(signal.meta))
    noise = noise_realization(len(signal), signal.sample_rate, spec, stream)
    return Signal(signal.samples + noise, signal.sample_rate, dict(signal.meta))


def mass_grid(m_min: float, m_max: float, step: float) -> np.ndarray:
    if step <= 0:
        raise SignalConfigError("mass step must be positive")
    if m_max < m_min or m_min <= 0:
        raise SignalConfigError(f"empty mass range [{m_min}, {m_max}]")
    count = int(np.floor((m_max - m_min) / step + 1e-9)) + 1
    return m_min + step * np.arange(count)


def mass_pairs(masses):
    """All (m1, m2) with m1 >= m2, heavier mass outer."""
    masses = np.sort(np.asarray(masses, dtype=np.float64))
    return [(float(masses[i]), float(masses[j])) for i in range(masses.size) for j in range(i + 1)]


def build_dataset(masses, detectors, noise: NoiseSpec, target_len: int,
                  f_min: float = 40.0, sample_rate: float = 1024.0, amplitude: float = 1.0) -> Dataset:
    """One clean/noisy pair per (m1, m2, detector); row ``i`` uses noise stream ``i``."""
    masses = np.asarray(masses, dtype=np.float64)
    if masses.size == 0:
        raise SignalConfigError("mass grid is empty")
    if not detectors:
        raise SignalConfigError("no detectors given")
    duration = target_len / sample_rate
    clean, noisy, meta = [], [], []
    for m1, m2 in mass_pairs(masses):
        base = zero_pad(make_chirp(ChirpParams(m1, m2, f_min, sample_rate, amplitude), duration), target_len)
        for profile in detectors:
            sig = project_detector(base, profile)
            row = len(clean)
            clean.append(sig.samples)
            noisy.append(add_noise(sig, noise, stream=row).samples)
            meta.append({"row": row, **sig.meta})
    return Dataset(np.array(noisy), np.array(clean), meta)


def train_val_split(n_rows: int, val_fraction: float, seed: int):
    """Shuffled row split; returns (train_rows, val_rows), each sorted."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must be in [0, 1)")
    perm = np.random.default_rng(seed).permutation(n_rows)
    n_val = int(round(val_fraction * n_rows))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
