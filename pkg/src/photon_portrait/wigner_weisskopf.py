"""Ideal spontaneous emission: per-mode amplitudes and the emitted field envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ComplexTrace, FilterParams, PortraitGrid
from .filter_chain import filter_apply


@dataclass(frozen=True)
class WWModel:
    """Emitter at ``omega_q`` decaying at ``gamma`` into modes with flat coupling ``g``."""

    omega_q: float
    gamma: float
    g: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def t_infinity(self) -> float:
        """Time standing in for t -> inf (residual exp(-20))."""
        return 40.0 / self.gamma


def excited_amplitude(model: WWModel, t):
    """Excited-state amplitude ``exp(-t (gamma/2 - i omega_q))``; zero at t = inf."""
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.exp(-t * (model.gamma / 2 - 1j * model.omega_q))
    out = np.where(np.isinf(t), 0.0, out)
    return out if out.ndim else complex(out)


def mode_amplitude(model: WWModel, detuning, t, carrier_phase: bool = False):
    """Single-photon amplitude ``f_k(t)`` of the mode at ``omega_q + detuning``.

    ``f = g / (i gamma/2 + Delta) * (1 - exp(-t (gamma/2 - i Delta)))``; the
    factor ``exp(-i t omega_k)`` is included only with ``carrier_phase``.
    Broadcasts over ``detuning`` and ``t``; ``t = inf`` gives the Lorentzian limit.
    """
    d = np.asarray(detuning, dtype=float)
    t = np.asarray(t, dtype=float)
    finite_t = np.where(np.isinf(t), 0.0, t)
    bracket = np.where(np.isinf(t), 1.0, -np.expm1(-finite_t * (model.gamma / 2 - 1j * d)))
    f = model.g / (1j * model.gamma / 2 + d) * bracket
    if carrier_phase:
        f = f * np.exp(-1j * finite_t * (model.omega_q + d))
    return f if np.ndim(f) else complex(f)


def ww_portrait(model: WWModel, detunings, times) -> PortraitGrid:
    """Grid of ``f_k(t)`` normalized by ``|f_0(inf)| = 2 g / gamma``.

    Values stay complex (phase flag off); the plotted portrait is their magnitude.
    """
    d = np.asarray(detunings, dtype=float)
    t = np.asarray(times, dtype=float)
    vals = mode_amplitude(model, d[:, None], t[None, :]) / (2 * model.g / model.gamma)
    return PortraitGrid(d, t, vals)


def spectral_fwhm(detunings, column, method: str = "interpolate") -> float:
    """Full width at half maximum of the power ``|column|^2`` around its peak.

    ``method="interpolate"`` locates the half-power crossings by linear
    interpolation walking outward from the peak.  ``method="grid"`` resolves
    the width to whole cells: it spans the cells above half power, bounded
    by the midpoints to their neighbours.  Returns ``inf`` if a crossing lies
    outside the grid and ``nan`` for an all-zero column.
    """
    if method not in ("interpolate", "grid"):
        raise ValueError(f"unknown method {method!r}")
    d = np.asarray(detunings, dtype=float)
    p = np.abs(np.asarray(column)) ** 2
    if not np.any(p > 0):
        return math.nan
    k = int(np.argmax(p))
    half = 0.5 * p[k]
    right = k
    while right < p.size - 1 and p[right + 1] > half:
        right += 1
    left = k
    while left > 0 and p[left - 1] > half:
        left -= 1
    if right == p.size - 1 or left == 0:
        return math.inf
    if method == "grid":
        return 0.5 * (d[right] + d[right + 1]) - 0.5 * (d[left - 1] + d[left])

    def cross(i, j):
        return d[i] + (half - p[i]) * (d[j] - d[i]) / (p[j] - p[i])

    return cross(right, right + 1) - cross(left, left - 1)


def ww_envelope(model: WWModel, times, rotating: bool = True) -> ComplexTrace:
    """Truncated exponential field: 0 before emission, ``exp(-gamma t/2)`` after.

    ``rotating=False`` restores the carrier ``exp(-i omega_q t)``.
    """
    t = np.asarray(times, dtype=float)
    env = np.where(t >= 0, np.exp(-0.5 * model.gamma * np.maximum(t, 0.0)), 0.0).astype(complex)
    if not rotating:
        env = env * np.exp(-1j * model.omega_q * t)
    dt = t[1] - t[0] if t.size > 1 else 1.0
    return ComplexTrace(t[0], dt, env)


class NormalizationResult(NamedTuple):
    total: float
    narrow_grid: bool


def golden_rule_density(model: WWModel) -> float:
    """Mode density (modes per rad/ns) consistent with ``gamma = 2 pi rho g^2``."""
    return model.gamma / (2 * math.pi * model.g**2)


def normalization_check(model: WWModel, detunings, density: float | None = None) -> NormalizationResult:
    """Total photon probability ``sum_k |f_k(inf)|^2`` over a detuning grid.

    The sum over modes becomes ``density * integral dDelta`` (trapezoid on the
    grid).  ``narrow_grid`` flags a span under 100 gamma.
    """
    d = np.asarray(detunings, dtype=float)
    rho = golden_rule_density(model) if density is None else density
    f_inf = mode_amplitude(model, d, math.inf)
    total = rho * float(np.trapezoid(np.abs(f_inf) ** 2, d))
    return NormalizationResult(total, bool(d[-1] - d[0] < 100 * model.gamma))


def mode_summed_field(model: WWModel, detunings, times, density: float | None = None) -> np.ndarray:
    """Field at the emitter from summing ``f_k(t)`` over the detuning grid.

    Computed as ``rho * sum_k f_k(t) exp(-i Delta_k t)`` (trapezoid) and
    rescaled by ``i / (pi rho g)`` so that the ideal continuum limit is the
    unit truncated exponential.
    """
    d = np.asarray(detunings, dtype=float)
    t = np.asarray(times, dtype=float)
    rho = golden_rule_density(model) if density is None else density
    f = mode_amplitude(model, d[:, None], t[None, :]) * np.exp(-1j * d[:, None] * t[None, :])
    field = rho * np.trapezoid(f, d, axis=0)
    return 1j * field / (math.pi * rho * model.g)


def ww_filtered_portrait(
    model: WWModel,
    filt: FilterParams,
    centers,
    times,
) -> PortraitGrid:
    """Ideal envelope passed through the amplifier filter at each centre offset.

    ``centers`` are filter-minus-emitter detunings; row ``i`` is
    :func:`filter_apply` of :func:`ww_envelope` with ``omega_amp = centers[i]``.
    """
    env = ww_envelope(model, times)
    rows = [filter_apply(env, filt.with_center(c), noise_stream=i) for i, c in enumerate(centers)]
    return PortraitGrid.from_rows(np.asarray(centers, dtype=float), rows)
