"""Driven two-level emitter in input-output theory, with and without the amplifier filter.

All traces are returned in the frame rotating at the drive frequency, with
``t = 0`` at the instant the drive is switched off.  The emitted field is
``a_out = a_in - i sqrt(gamma beta / 2) <sigma->``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ._numerics import expm1_ratio
from .core import ComplexTrace, DrivePulse, FilterParams, PortraitGrid, QubitParams
from .filter_chain import sample_noise


@dataclass(frozen=True)
class SteadyState:
    s0: complex
    rho0: float

    def __post_init__(self):
        if not -1e-12 <= self.rho0 <= 0.5 + 1e-12:
            raise ValueError(f"rho0={self.rho0} outside [0, 1/2]")
        if abs(self.s0) ** 2 + (self.rho0 - 0.5) ** 2 > 0.25 + 1e-12:
            raise ValueError("steady state outside the Bloch ball")

    @property
    def bloch_vector(self) -> np.ndarray:
        return np.array([2 * self.s0.real, 2 * self.s0.imag, 2 * self.rho0 - 1])


@dataclass(frozen=True)
class DrivenQubitConfig:
    qubit: QubitParams
    drive: DrivePulse
    filter: FilterParams | None = None

    @property
    def delta_qd(self) -> float:
        return self.qubit.omega_q - self.drive.omega


def steady_state(qubit: QubitParams, alpha: float, delta: float = 0.0) -> SteadyState:
    """Long-drive equilibrium for real ``alpha`` and detuning ``delta = omega_q - omega``."""
    g, b = qubit.gamma, qubit.beta
    denom = delta**2 + g**2 / 4 + alpha**2 * b * g
    s0 = -alpha * math.sqrt(g * b / 2) * (delta + 0.5j * g) / denom
    rho0 = 0.5 * alpha**2 * b * g / denom
    return SteadyState(complex(s0), float(rho0))


def bloch_rhs(s: complex, rho: float, qubit: QubitParams, alpha: complex, delta: float = 0.0):
    """Time derivatives ``(ds/dt, drho/dt)`` of the rotating-frame Bloch equations."""
    g, b = qubit.gamma, qubit.beta
    c = math.sqrt(g * b / 2)
    drho = -1j * c * (alpha * np.conj(s) - np.conj(alpha) * s) - g * rho
    ds = -(1j * delta + g / 2) * s + 1j * alpha * c * (2 * rho - 1)
    return complex(ds), float(np.real(drho))


def steady_state_arc(qubit: QubitParams, alphas) -> np.ndarray:
    """Bloch vectors ``(x, y, z)`` of resonant steady states, one row per ``alpha``."""
    return np.array([steady_state(qubit, a).bloch_vector for a in np.asarray(alphas, dtype=float)])


def free_decay(
    qubit: QubitParams,
    state: SteadyState,
    times,
    frame_omega: float | None = None,
) -> ComplexTrace:
    """Emitted field after the drive stops, starting from ``state``.

    ``a_out(t) = -i sqrt(gamma beta/2) s0 exp(-i w t - gamma t/2)`` where ``w``
    is the emitter frequency seen from the frame rotating at ``frame_omega``
    (the emitter's own frame by default, which drops the phase).
    """
    t = np.asarray(times, dtype=float)
    w = 0.0 if frame_omega is None else qubit.omega_q - frame_omega
    amp = -1j * math.sqrt(qubit.gamma * qubit.beta / 2) * state.s0
    vals = amp * np.exp(-(1j * w + qubit.gamma / 2) * t)
    return ComplexTrace(t[0], t[1] - t[0] if t.size > 1 else 1.0, vals)


def filtered_response(
    t,
    alpha: float,
    gamma: float,
    beta: float,
    omega_q: float,
    omega: float,
    omega_amp: float,
    kappa: float,
    gain: float = 1.0,
) -> np.ndarray:
    """Closed-form amplifier output for a drive switched off at ``t = 0``.

    Frequencies may be given in any common frame; the result carries the
    phase ``exp(-i omega t)`` of that frame.  Term one is the drive and the
    emitter's drive-era response seen through the filter (decaying at
    ``kappa`` after the stop); term two is the emitter's free decay through
    the filter, active only for ``t > 0``.
    """
    if not kappa > 0:
        raise ValueError("filter pole kappa - i(omega - omega_amp) vanishes: kappa must be positive")
    t = np.asarray(t, dtype=float)
    delta = omega_q - omega
    denom = alpha**2 * beta * gamma + gamma**2 / 4 + delta**2
    coh = alpha * beta * gamma / 2 * (gamma / 2 - 1j * delta)
    lam = kappa + 1j * omega_amp
    drive_level = alpha - coh / denom
    t_neg = np.minimum(t, 0.0)
    term1 = np.exp(-t * lam + (kappa - 1j * (omega - omega_amp)) * t_neg) * drive_level / (kappa - 1j * (omega - omega_amp))

    x = -gamma / 2 - 1j * omega_q + lam
    t_pos = np.maximum(t, 0.0)
    small = np.abs(x * t_pos) < 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.where(
            small,
            np.exp(-lam * t_pos) * expm1_ratio(x, t_pos),
            (np.exp(-(gamma / 2 + 1j * omega_q) * t_pos) - np.exp(-lam * t_pos)) / x,
        )
    term2 = -coh / denom * growth
    return gain * (term1 + term2)


def analytic_filtered_trace(config: DrivenQubitConfig, times, noise_stream: int = 0) -> ComplexTrace:
    """Amplifier output ``<a_amp(t)>`` after an effectively infinite drive.

    Noise with the filter's ``noise_sigma`` is added per sample when nonzero.
    """
    if config.filter is None:
        raise ValueError("analytic_filtered_trace needs filter parameters")
    q, d, f = config.qubit, config.drive, config.filter
    if d.duration < 5 / q.gamma:
        warnings.warn(
            f"drive of {d.duration:.3g} ns is shorter than 5/gamma = {5 / q.gamma:.3g} ns; "
            "the emitter has not reached equilibrium",
            stacklevel=2,
        )
    t = np.asarray(times, dtype=float)
    vals = filtered_response(
        t, d.alpha, q.gamma, q.beta, q.omega_q - d.omega, 0.0, f.omega_amp - d.omega, f.kappa, f.gain
    )
    if f.noise_sigma > 0:
        vals = vals + sample_noise(t.size, f.noise_sigma, f.seed, noise_stream)
    return ComplexTrace(t[0], t[1] - t[0] if t.size > 1 else 1.0, vals)


def unfiltered_output(config: DrivenQubitConfig, times) -> ComplexTrace:
    """Piecewise field at the filter input: drive era for ``t < 0``, free decay after.

    Samples at exactly ``t = 0`` take the post-stop value.
    """
    q, d = config.qubit, config.drive
    delta = config.delta_qd
    ss = steady_state(q, d.alpha, delta)
    c = math.sqrt(q.gamma * q.beta / 2)
    t = np.asarray(times, dtype=float)
    before = d.alpha - 1j * c * ss.s0
    after = -1j * c * ss.s0 * np.exp(-(1j * delta + q.gamma / 2) * np.maximum(t, 0.0))
    vals = np.where(t < 0, before, after)
    return ComplexTrace(t[0], t[1] - t[0] if t.size > 1 else 1.0, vals)


def analytic_portrait(config: DrivenQubitConfig, centers, times, normalize: bool = True) -> PortraitGrid:
    """One filtered trace per filter centre; ``centers`` are filter-minus-emitter detunings."""
    if config.filter is None:
        raise ValueError("analytic_portrait needs filter parameters")
    rows = []
    for i, c in enumerate(np.asarray(centers, dtype=float)):
        cfg = DrivenQubitConfig(config.qubit, config.drive, config.filter.with_center(config.qubit.omega_q + c))
        rows.append(analytic_filtered_trace(cfg, times, noise_stream=i))
    grid = PortraitGrid.from_rows(np.asarray(centers, dtype=float), rows)
    return grid.normalized() if normalize else grid


def detuned_fit_model(params: Mapping[str, float], times) -> ComplexTrace:
    """Fit model in the drive frame, with the emitter and the filter each detuned from the drive.

    ``params`` holds alpha, gamma, beta, delta_qd (emitter minus drive),
    delta_da (drive minus filter), kappa, gain, phase and the complex offset
    ``offset_re``/``offset_im``; missing phase/offset entries default to zero.
    """
    t = np.asarray(times, dtype=float)
    vals = filtered_response(
        t,
        params["alpha"],
        params["gamma"],
        params["beta"],
        params["delta_qd"],
        0.0,
        -params["delta_da"],
        params["kappa"],
        params["gain"],
    )
    vals = vals * np.exp(1j * params.get("phase", 0.0)) + complex(params.get("offset_re", 0.0), params.get("offset_im", 0.0))
    return ComplexTrace(t[0], t[1] - t[0] if t.size > 1 else 1.0, vals)
