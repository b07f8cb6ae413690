"""
Ring-down parameter estimation.

A recorded receive window is modelled as ``A exp(-t/tau) sin(2 pi f t + phi)``
with ``t = 0`` at the first sample. A windowed DFT gives the starting
frequency, a log-envelope line the starting decay, and a damped
Gauss-Newton (Levenberg-Marquardt) iteration polishes all four parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft, signal

from mmrsim.resonator import MmrParams, resonance_frequency

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
COST_TOLERANCE = 1e-10
MIN_PERIODS = 10


@dataclass(frozen=True)
class DecayFit:
    frequency: float
    amplitude0: float
    tau_decay: float
    phase: float
    residual_rms: float
    ok: bool
    reason: str = ""
    iterations: int = 0


def _failed(reason: str, **kw) -> DecayFit:
    base = dict(frequency=0.0, amplitude0=0.0, tau_decay=0.0, phase=0.0, residual_rms=0.0)
    base.update(kw)
    return DecayFit(ok=False, reason=reason, **base)


def preprocess(samples, sample_rate: float, cutoff: float, blank: float = 0.0, order: int = 4) -> np.ndarray:
    """Drop the first ``blank`` seconds, then zero-phase Butterworth low-pass."""
    if not 0 < cutoff < 0.5 * sample_rate:
        raise ValueError(f"cutoff {cutoff} Hz must lie in (0, {0.5 * sample_rate}) Hz")
    x = np.asarray(samples, dtype=float)[int(math.ceil(blank * sample_rate - 1e-9)):]
    sos = signal.butter(order, cutoff, btype="low", fs=sample_rate, output="sos")
    if x.size <= 3 * (2 * sos.shape[0] + 1):
        return x.copy()
    return signal.sosfiltfilt(sos, x)


def _coarse_frequency(x: np.ndarray, fs: float, band: tuple[float, float]) -> float | None:
    n = x.size
    nfft = fft.next_fast_len(2 * n, real=True)
    spec = np.abs(fft.rfft(x * signal.windows.hann(n, sym=False), nfft))
    freqs = fft.rfftfreq(nfft, 1.0 / fs)
    sel = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    if sel.size < 3:
        return None
    k = sel[np.argmax(spec[sel])]
    if spec[k] <= 0:
        return None
    if 0 < k < spec.size - 1:
        # parabolic interpolation on log magnitude
        a, b, c = np.log(spec[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
        return float(freqs[k] + delta * fs / nfft)
    return float(freqs[k])


def _initial_decay(x: np.ndarray, t: np.ndarray, f0: float, fs: float) -> float:
    """Decay time from the envelope of x band-limited to f0 +/- f0/4."""
    n = x.size
    nf = fft.next_fast_len(n)
    spec = fft.rfft(x, nf)
    freqs = fft.rfftfreq(nf, 1.0 / fs)
    spec[np.abs(freqs - f0) > 0.25 * f0] = 0.0
    analytic = np.zeros(nf, dtype=complex)
    analytic[: spec.size] = 2.0 * spec
    env = np.abs(fft.ifft(analytic)[:n])
    edge = max(n // 20, 1)
    core = slice(edge, n - edge)
    e, tt = env[core], t[core]
    keep = e > 0.05 * e.max()
    if keep.sum() < 10:
        return t[-1]
    # log-envelope regression weighted by power
    w = e[keep] ** 2
    tk = tt[keep] - (w @ tt[keep]) / w.sum()
    slope = float((w * tk) @ np.log(e[keep]) / ((w * tk) @ tk))
    if slope >= -1e-12:
        return 10.0 * t[-1]
    return -1.0 / slope


def _linear_amplitude(x, t, f, tau) -> tuple[float, float]:
    w = np.exp(-t / tau)
    arg = 2 * np.pi * f * t
    basis = np.stack([w * np.sin(arg), w * np.cos(arg)])
    a, b = np.linalg.solve(basis @ basis.T, basis @ x)
    return math.hypot(a, b), math.atan2(b, a)


def decaying_sinusoid(t, amplitude: float, tau: float, frequency: float, phase: float) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return amplitude * np.exp(-t / tau) * np.sin(2 * np.pi * frequency * t + phase)


def _model(t, wt, p):
    """Model and its quadrature part, for p = (A, alpha, f, phi) and wt = 2 pi t."""
    A, alpha, f, phi = p
    e = np.exp(-alpha * t)
    e *= A
    arg = f * wt
    arg += phi
    return e * np.sin(arg), e * np.cos(arg)


def _jacobian(t, wt, p, model, quad):
    """Rows: d/dA, d/dalpha (alpha = 1/tau), d/df, d/dphi."""
    A = p[0]
    jac = np.empty((4, t.size))
    if A != 0:
        np.divide(model, A, out=jac[0])
    else:
        jac[0] = np.exp(-p[1] * t) * np.sin(p[2] * wt + p[3])
    np.multiply(t, model, out=jac[1])
    np.negative(jac[1], out=jac[1])
    np.multiply(wt, quad, out=jac[2])
    jac[3] = quad
    return jac


def _levenberg_marquardt(x, t, p0):
    p = np.array(p0, dtype=float)
    wt = 2 * np.pi * t
    model, quad = _model(t, wt, p)
    jac = _jacobian(t, wt, p, model, quad)
    r = x - model
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, MAX_ITERATIONS + 1):
        jtj = jac @ jac.T
        g = jac @ r
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                dp = np.linalg.solve(jtj + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                dp = None
            p_new = p + dp if dp is not None else p
            if dp is not None and p_new[1] > 0 and p_new[2] > 0:
                m_new, q_new = _model(t, wt, p_new)
                r_new = x - m_new
                c_new = float(r_new @ r_new)
                if c_new <= cost:
                    break
            lam *= 10
            if lam > 1e16:
                # no downhill step left: converged at machine precision, unless
                # the normal equations never solved
                return p, cost, it, dp is not None
        rel = np.max(np.abs(dp) / np.maximum(np.abs(p_new), 1e-300))
        stalled = rel < 1e-6 and cost - c_new <= COST_TOLERANCE * c_new
        p, r, cost = p_new, r_new, c_new
        jac = _jacobian(t, wt, p, m_new, q_new)
        lam = max(lam / 10, 1e-12)
        if rel < STEP_TOLERANCE or stalled:
            return p, cost, it, True
    return p, cost, MAX_ITERATIONS, False


def estimate_decay(samples, sample_rate: float, search_band: tuple[float, float]) -> DecayFit:
    """Fit a single decaying sinusoid to ``samples``.

    ``ok`` is False when the trace is empty or too short (fewer than ten
    periods), the optimizer exhausts its iteration budget, or the residual
    exceeds half the fitted initial amplitude.
    """
    x = np.asarray(samples, dtype=float)
    lo, hi = search_band
    if not 0 <= lo < hi <= 0.5 * sample_rate:
        raise ValueError(f"search band {search_band} must lie within (0, {0.5 * sample_rate}) Hz")
    if x.size < 16 or not np.all(np.isfinite(x)):
        return _failed("trace too short or not finite")
    if not np.any(x != 0.0):
        return _failed("trace has no signal")
    t = np.arange(x.size) / sample_rate

    f0 = _coarse_frequency(x, sample_rate, (lo, hi))
    if f0 is None or f0 <= 0:
        return _failed("no spectral peak in search band")
    if t[-1] * f0 < MIN_PERIODS:
        return _failed(f"trace covers fewer than {MIN_PERIODS} periods", frequency=f0)

    tau0 = _initial_decay(x, t, f0, sample_rate)
    a0, phi0 = _linear_amplitude(x, t, f0, tau0)
    p, cost, iterations, converged = _levenberg_marquardt(x, t, (a0, 1.0 / tau0, f0, phi0))

    amp, alpha, freq, phase = (float(v) for v in p)
    if amp < 0:
        amp, phase = -amp, phase + math.pi
    phase = math.remainder(phase, 2 * math.pi)
    resid = math.sqrt(cost / x.size)
    fit = dict(frequency=freq, amplitude0=amp, tau_decay=1.0 / alpha, phase=phase,
               residual_rms=resid, iterations=iterations)
    if not converged:
        return _failed("optimizer did not converge", **fit)
    if not resid <= 0.5 * amp:
        return _failed("residual exceeds half the amplitude", **fit)
    return DecayFit(ok=True, **fit)


def quality_factor(fit: DecayFit) -> float:
    """Q = pi * f * tau of a successful fit."""
    if not fit.ok:
        raise ValueError(f"quality factor of a failed fit ({fit.reason})")
    return math.pi * fit.frequency * fit.tau_decay


def frequency_to_gap(
    f: float,
    params: MmrParams | None = None,
    calibration_f0: float | None = None,
    calibration_d: float | None = None,
) -> float:
    """Magnet center distance implied by a measured frequency.

    Uses ``f ~ d**-1.5`` anchored at one calibration point, which defaults
    to the nominal resonance of ``params``.
    """
    if not f > 0:
        raise ValueError(f"frequency must be > 0, got {f}")
    if calibration_f0 is None or calibration_d is None:
        if params is None:
            raise ValueError("need params or an explicit calibration point")
        calibration_f0 = resonance_frequency(params)
        calibration_d = params.center_distance
    return calibration_d * (calibration_f0 / f) ** (2.0 / 3.0)
