"""Measurement chain: the one-pole amplifier filter and the IF modulation round trip."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from ._numerics import exp_step_weights
from .core import ComplexTrace, FilterParams


@dataclass(frozen=True)
class FilterState:
    """Filter memory: complex amplitude held at ``time``."""

    amplitude: complex = 0.0j
    time: float = 0.0

    def evolve(self, t: float, omega_amp: float, kappa: float) -> "FilterState":
        """Free evolution (zero input) up to time ``t``."""
        lam = kappa + 1j * omega_amp
        return FilterState(self.amplitude * np.exp(-lam * (t - self.time)), t)


def sample_noise(n: int, sigma: float, seed: int, stream: int = 0) -> np.ndarray:
    """Complex Gaussian noise with E|n|^2 = sigma^2.

    ``stream`` selects an independent substream, so rows of a portrait get
    reproducible noise regardless of the order they are computed in.
    """
    if sigma == 0:
        return np.zeros(n, dtype=complex)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
    return sigma / np.sqrt(2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def filter_apply(
    trace: ComplexTrace,
    filt: FilterParams,
    state: FilterState | None = None,
    prefill: bool = False,
    noise_stream: int = 0,
) -> ComplexTrace:
    """Causal one-pole filter ``sqrt(G) * int x(tau) exp(-(i w_amp + kappa)(t - tau)) dtau``.

    The convolution is evaluated exactly for input that is linear between
    samples, so the result does not depend on how finely the step resolves
    ``1/kappa`` beyond that assumption.  ``omega_amp`` is taken in the frame
    the trace is expressed in.

    Parameters
    ----------
    state:
        Filter memory at the first sample time (default empty).
    prefill:
        Start from the steady response to a constant input equal to the first
        sample, i.e. as if that input had been applied forever.
    noise_stream:
        Substream index for the output-referred noise.
    """
    lam = filt.kappa + 1j * filt.omega_amp
    x = trace.samples
    E, b0, b1 = exp_step_weights(lam, trace.dt)
    if prefill:
        y0 = x[0] / lam
    elif state is not None:
        y0 = state.evolve(trace.t0, filt.omega_amp, filt.kappa).amplitude / filt.gain
    else:
        y0 = 0.0j
    y = np.empty_like(x)
    y[0] = y0
    if x.size > 1:
        # y_{n+1} = E y_n + b0 x_n + b1 x_{n+1}
        drive = b0 * x[:-1] + b1 * x[1:]
        out, _ = signal.lfilter([1.0], [1.0, -E], drive, zi=np.array([E * y0]))
        y[1:] = out
    y = filt.gain * y
    if filt.noise_sigma > 0:
        y = y + sample_noise(y.size, filt.noise_sigma, filt.seed, noise_stream)
    return trace.with_samples(y)


def filter_frequency_response(filt: FilterParams, offset):
    """Steady complex gain for a tone offset by ``offset`` from the filter centre."""
    return filt.gain / (filt.kappa - 1j * np.asarray(offset))


def average_runs(
    clean: ComplexTrace,
    noise_sigma: float,
    n_runs: int,
    seed: int = 0,
    monte_carlo: bool = False,
) -> ComplexTrace:
    """Average of ``n_runs`` noisy records of ``clean``.

    By default the averaged noise is drawn once with std ``sigma/sqrt(n)``;
    ``monte_carlo=True`` actually averages ``n_runs`` independent records.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if not monte_carlo:
        return clean.with_samples(clean.samples + sample_noise(len(clean), noise_sigma / np.sqrt(n_runs), seed))
    acc = np.zeros(len(clean), dtype=complex)
    for k in range(n_runs):
        acc += sample_noise(len(clean), noise_sigma, seed, stream=k)
    return clean.with_samples(clean.samples + acc / n_runs)


def synthesize_raw_signal(trace: ComplexTrace, f_if_mhz: float, sample_rate_msps: float) -> ComplexTrace:
    """Real digitizer record ``Re[trace(t) exp(-i 2 pi f_IF t)]`` at ``sample_rate``.

    Returned as a ComplexTrace with zero imaginary part.
    """
    if not sample_rate_msps > 4 * f_if_mhz:
        raise ValueError(f"sample rate {sample_rate_msps} MS/s must exceed 4 x f_IF = {4 * f_if_mhz} MHz")
    dt = 1e3 / sample_rate_msps
    n = int(np.floor(trace.span / dt + 1e-9)) + 1
    t = trace.t0 + dt * np.arange(n)
    vals = CubicSpline(trace.times, trace.samples)(t) if len(trace) >= 4 else np.interp(t, trace.times, trace.samples)
    src = ComplexTrace(trace.t0, dt, vals)
    f_if = f_if_mhz * 1e-3
    raw = np.real(src.samples * np.exp(-2j * np.pi * f_if * src.times))
    return src.with_samples(raw.astype(complex))


def demodulate_envelope(raw: ComplexTrace, f_if_mhz: float, lp_bandwidth_mhz: float) -> ComplexTrace:
    """Complex envelope of a real IF record.

    Mixes down with ``exp(+i 2 pi f_IF t)``, applies a one-pole low-pass at
    ``lp_bandwidth`` forward and backward (zero phase) and restores the factor 2.
    """
    if not 0 < lp_bandwidth_mhz < 0.5 * f_if_mhz:
        raise ValueError("lp_bandwidth must lie in (0, f_IF/2)")
    f_if = f_if_mhz * 1e-3
    if 1.0 / raw.dt <= 2 * f_if:
        raise ValueError("record is sampled below the IF Nyquist rate")
    mixed = raw.samples.real * np.exp(2j * np.pi * f_if * raw.times)
    a = np.exp(-2 * np.pi * lp_bandwidth_mhz * 1e-3 * raw.dt)
    b, den = [1.0 - a], [1.0, -a]
    padlen = min(raw.samples.size - 1, int(5.0 / (1.0 - a)))
    env = signal.filtfilt(b, den, mixed, padlen=padlen, padtype="even")
    return raw.with_samples(2.0 * env)
