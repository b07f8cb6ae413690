"""Receive chain: diode-clamped LNA with white noise, then a mid-tread ADC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmrsim.errors import ConfigurationError


@dataclass(frozen=True)
class LnaConfig:
    gain: float = 100.0
    input_noise_density: float = 1e-9
    clip_level: float = 0.5
    bandwidth: float = 25e3

    def __post_init__(self) -> None:
        if not self.gain > 0:
            raise ConfigurationError(f"LNA gain must be > 0, got {self.gain}")
        if self.input_noise_density < 0:
            raise ConfigurationError("input_noise_density must be >= 0")
        if not self.clip_level > 0:
            raise ConfigurationError(f"clip_level must be > 0, got {self.clip_level}")
        if not self.bandwidth > 0:
            raise ConfigurationError(f"bandwidth must be > 0, got {self.bandwidth}")

    @property
    def input_noise_rms(self) -> float:
        return self.input_noise_density * np.sqrt(self.bandwidth)


@dataclass(frozen=True)
class AdcConfig:
    bits: int = 14
    sample_rate: float = 50e3
    full_scale: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if int(self.bits) != self.bits or self.bits < 1:
            raise ConfigurationError(f"bits must be an integer >= 1, got {self.bits}")
        if not self.sample_rate > 0:
            raise ConfigurationError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not self.full_scale > 0:
            raise ConfigurationError(f"full_scale must be > 0, got {self.full_scale}")

    @property
    def max_code(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def lsb(self) -> float:
        """Volts per code; full scale lands exactly on the largest code."""
        return self.full_scale / self.max_code


def amplify(v_in, lna: LnaConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Clip at the protection diodes, amplify, add input-referred white noise.

    ``rng`` may be omitted only when the noise density is zero.
    """
    v = np.clip(np.asarray(v_in, dtype=float), -lna.clip_level, lna.clip_level) * lna.gain
    sigma = lna.input_noise_rms * lna.gain
    if sigma > 0:
        if rng is None:
            raise ValueError("a seeded random generator is required when noise is enabled")
        v = v + rng.normal(0.0, sigma, size=v.shape)
    return v


def sample(v, adc: AdcConfig, dt: float | None = None) -> np.ndarray:
    """Quantize a voltage trace to signed integer codes.

    If ``dt`` is given and differs from the ADC period, the trace is
    decimated (integer ratio) or linearly resampled first.
    """
    v = np.asarray(v, dtype=float)
    if dt is not None:
        v = resample(v, dt, 1.0 / adc.sample_rate)
    codes = np.rint(v / adc.lsb)
    return np.clip(codes, -adc.max_code - 1, adc.max_code).astype(np.int32)


def resample(v: np.ndarray, dt_in: float, dt_out: float) -> np.ndarray:
    ratio = dt_out / dt_in
    k = int(round(ratio))
    if abs(ratio - k) < 1e-9 and k >= 1:
        return v[::k]
    t_in = np.arange(v.size) * dt_in
    t_out = np.arange(0.0, t_in[-1] + 0.5 * dt_in, dt_out)
    return np.interp(t_out, t_in, v)


def codes_to_volts(codes, adc: AdcConfig, lna: LnaConfig | None = None) -> np.ndarray:
    """Codes back to volts, input-referred when ``lna`` is given."""
    v = np.asarray(codes, dtype=float) * adc.lsb
    return v / lna.gain if lna is not None else v
