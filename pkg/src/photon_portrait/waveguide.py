"""TE10 rectangular waveguide: cutoff and emitter decay, Markovian or from the memory kernel.

Geometry is given in SI (metres); returned frequencies and rates are in rad/ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from ._numerics import exp_step_weights, log_slope
from .core import ComplexTrace


class ConfigurationError(ValueError):
    """Numerical settings cannot resolve the requested physics."""


@dataclass(frozen=True)
class WaveguideGeometry:
    a: float
    b: float
    eps_r: float = 1.0
    mu_r: float = 1.0

    def __post_init__(self):
        if not self.a > self.b > 0:
            raise ValueError("need a > b > 0")
        if self.eps_r < 1 or self.mu_r <= 0:
            raise ValueError("need eps_r >= 1 and mu_r > 0")

    @classmethod
    def wr90(cls) -> "WaveguideGeometry":
        return cls(22.86e-3, 10.16e-3)

    @property
    def impedance(self) -> float:
        """Medium impedance sqrt(mu/eps) in ohms."""
        return math.sqrt(constants.mu_0 * self.mu_r / (constants.epsilon_0 * self.eps_r))


@dataclass(frozen=True)
class DipoleConfig:
    d_eg: float
    theta: float = 0.0
    x0: float | None = None

    def __post_init__(self):
        if not self.d_eg > 0:
            raise ValueError("d_eg must be positive")


def cutoff_frequency(geom: WaveguideGeometry) -> float:
    """TE10 cutoff ``(pi/a)/sqrt(eps mu)`` in rad/ns."""
    v = constants.c / math.sqrt(geom.eps_r * geom.mu_r)
    return math.pi / geom.a * v * 1e-9


def _check_above_cutoff(omega, omega_c):
    if np.any(np.asarray(omega) <= omega_c):
        raise ValueError(f"frequency must exceed the cutoff {omega_c:.6g} rad/ns")


def dispersion_factor(omega, geom: WaveguideGeometry, omega_ref: float | None = None):
    """Mode-density weight ``omega^2 / sqrt(eps mu omega^2 - k_c^2)``.

    With ``omega_ref`` the value is normalized to the one at ``omega_ref``;
    otherwise it is returned in SI units (rad/s)^2 * s/m with omega in rad/ns
    converted internally.
    """
    omega_c = cutoff_frequency(geom)
    _check_above_cutoff(omega, omega_c)
    w = np.asarray(omega, dtype=float) * 1e9
    epsmu = constants.epsilon_0 * geom.eps_r * constants.mu_0 * geom.mu_r
    kc = math.pi / geom.a
    raw = w**2 / np.sqrt(epsmu * w**2 - kc**2)
    if omega_ref is not None:
        raw = raw / dispersion_factor(omega_ref, geom)
    return raw if np.ndim(omega) else float(raw)


def dispersion_variation(geom: WaveguideGeometry, omega_center: float, width: float, n: int = 2001) -> float:
    """Peak-to-peak change of the dispersion factor over a window, relative to its centre value."""
    w = np.linspace(omega_center - width / 2, omega_center + width / 2, n)
    f = dispersion_factor(w, geom, omega_ref=omega_center)
    return float(f.max() - f.min())


def _position_factor(geom: WaveguideGeometry, dipole: DipoleConfig) -> float:
    x0 = geom.a / 2 if dipole.x0 is None else dipole.x0
    if not 0 <= x0 <= geom.a:
        raise ValueError("x0 must lie inside the waveguide")
    return math.sin(x0 * math.pi / geom.a) ** 2


def decay_rate(
    geom: WaveguideGeometry,
    dipole: DipoleConfig,
    omega_q: float,
    prefactor: float | None = None,
) -> float:
    """Radiative decay rate (rad/ns) of a dipole into the TE10 mode (both directions).

    ``prefactor`` replaces ``2 |d|^2 cos^2(theta) / (hbar a b)``; it is then in
    1/(ohm ns) with ``omega_q`` in rad/ns.  Use :func:`prefactor_for_rate` to
    calibrate it against a known rate.
    """
    omega_c = cutoff_frequency(geom)
    _check_above_cutoff(omega_q, omega_c)
    shape = _position_factor(geom, dipole) * geom.impedance * omega_q**2 / math.sqrt(omega_q**2 - omega_c**2)
    if prefactor is not None:
        return prefactor * shape
    pref_si = 2 * dipole.d_eg**2 * math.cos(dipole.theta) ** 2 / (constants.hbar * geom.a * geom.b)
    # shape in rad/s would be 1e9 larger and the rate in rad/ns 1e9 smaller
    return pref_si * shape


def prefactor_for_rate(geom: WaveguideGeometry, dipole: DipoleConfig, omega_q: float, gamma: float) -> float:
    """Prefactor that makes :func:`decay_rate` return ``gamma`` at ``omega_q``."""
    return gamma / decay_rate(geom, dipole, omega_q, prefactor=1.0)


def _cell_weight_primitive(w, omega_c):
    # antiderivative of w^2 / sqrt(w^2 - wc^2)
    root = np.sqrt(np.maximum(w**2 - omega_c**2, 0.0))
    return 0.5 * w * root + 0.5 * omega_c**2 * np.log(w + root)


def kernel_decay_check(
    geom: WaveguideGeometry,
    dipole: DipoleConfig,
    omega_q: float,
    t_max: float,
    dt: float | None = None,
    d_omega: float | None = None,
    window: float = 200.0,
    markov: bool = False,
    prefactor: float | None = None,
) -> ComplexTrace:
    """Excited-state amplitude from the full frequency-integral memory kernel.

    Solves ``c'(t) = -int_0^t K(t - s) c(s) ds`` with
    ``K(tau) = int_{w_c}^{w_q + window*gamma} rho(w) exp(i (w_q - w) tau) dw`` and
    ``rho(w) = gamma/(2 pi) * F(w)/F(w_q)``, ``F`` the dispersion factor.  The
    frequency band is cut into cells of width ``d_omega`` whose weights integrate
    ``F`` exactly, so the inverse-square-root edge at cutoff is handled.
    Each cell is one mode amplitude advanced by an exact exponential step; the
    emitter amplitude uses the trapezoidal rule.

    ``markov=True`` freezes ``F`` at ``w_q`` and extends the band to -inf, which
    collapses the kernel to ``gamma/2 * c(t)``.

    Returns ``c_e`` sampled at ``dt`` in the frame rotating at ``omega_q``.
    """
    omega_c = cutoff_frequency(geom)
    _check_above_cutoff(omega_q, omega_c)
    gamma = decay_rate(geom, dipole, omega_q, prefactor=prefactor)
    if gamma == 0:
        step = dt if dt is not None else t_max / 1000
        n = int(round(t_max / step)) + 1
        return ComplexTrace(0.0, step, np.ones(n))
    dt = 1.0 / (100 * gamma) if dt is None else dt
    if dt > 1.0 / (50 * gamma):
        raise ConfigurationError(f"time step {dt} exceeds 1/(50 gamma) = {1 / (50 * gamma)}")
    n_steps = int(math.ceil(t_max / dt))
    c = np.empty(n_steps + 1, dtype=complex)
    c[0] = 1.0

    if markov:
        ratio = (1 - gamma * dt / 4) / (1 + gamma * dt / 4)
        c[1:] = ratio ** np.arange(1, n_steps + 1)
        return ComplexTrace(0.0, dt, c)

    d_omega = gamma / 20 if d_omega is None else d_omega
    if d_omega > gamma / 10:
        raise ConfigurationError(f"frequency grid spacing {d_omega} cannot resolve gamma={gamma} (need <= gamma/10)")
    if n_steps * dt >= 2 * math.pi / d_omega:
        raise ConfigurationError("t_max reaches the recurrence time 2 pi / d_omega of the discretized band")
    w_top = omega_q + window * gamma
    n_cells = int(math.ceil((w_top - omega_c) / d_omega))
    edges = omega_c + d_omega * np.arange(n_cells + 1)
    prim = _cell_weight_primitive(edges, omega_c)
    f_q = omega_q**2 / math.sqrt(omega_q**2 - omega_c**2)
    weights = gamma / (2 * math.pi) * np.diff(prim) / f_q
    mids = 0.5 * (edges[1:] + edges[:-1])
    detune = omega_q - mids

    # A_k' = i detune_k A_k + c ;  c' = -sum_k w_k A_k
    E, b0, b1 = exp_step_weights(-1j * detune, dt)
    wb0 = np.sum(weights * b0)
    Q = np.sum(weights * b1)
    A = np.zeros(n_cells, dtype=complex)
    S = 0.0j
    for n in range(n_steps):
        A_free = E * A
        R = np.dot(weights, A_free) + wb0 * c[n]
        c[n + 1] = (c[n] - 0.5 * dt * (S + R)) / (1 + 0.5 * dt * Q)
        A = A_free + b0 * c[n] + b1 * c[n + 1]
        S = R + Q * c[n + 1]
    return ComplexTrace(0.0, dt, c)


def decay_slope(trace: ComplexTrace, t_lo: float, t_hi: float) -> float:
    """Slope of ``log|c_e|`` over ``[t_lo, t_hi]``."""
    w = trace.window(t_lo, t_hi)
    return log_slope(w.times, w.samples)


def exponential_deviation(trace: ComplexTrace, gamma: float) -> float:
    """Relative L2 distance of ``|c_e(t)|`` from ``exp(-gamma t / 2)``."""
    ref = np.exp(-0.5 * gamma * trace.times)
    return float(np.linalg.norm(np.abs(trace.samples) - ref) / np.linalg.norm(ref))
