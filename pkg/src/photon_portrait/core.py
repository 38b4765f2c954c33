"""Shared value types, unit helpers and CSV formats.

Internal units are fixed throughout the package: time in ns, angular
frequency (and every rate) in rad/ns.  Conversion from ordinary frequency
happens only at the edges (CLI, config files).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

_UNIT_SCALE_GHZ = {"hz": 1e-9, "khz": 1e-6, "mhz": 1e-3, "ghz": 1.0}


def angular_frequency(value, unit: str = "MHz"):
    """Ordinary frequency in ``unit`` -> angular frequency in rad/ns."""
    scale = _UNIT_SCALE_GHZ[unit.lower()]
    if np.ndim(value):
        return 2.0 * np.pi * np.asarray(value, dtype=float) * scale
    return 2.0 * math.pi * float(value) * scale


def ordinary_frequency(omega, unit: str = "MHz"):
    """Angular frequency in rad/ns -> ordinary frequency in ``unit``."""
    scale = _UNIT_SCALE_GHZ[unit.lower()]
    if np.ndim(omega):
        return np.asarray(omega, dtype=float) / (2.0 * np.pi * scale)
    return float(omega) / (2.0 * math.pi * scale)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ComplexTrace:
    """Uniformly sampled complex amplitude.

    Sample ``n`` sits at ``t0 + n * dt``; times are derived, never stored.
    """

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        samples = np.asarray(self.samples, dtype=complex).ravel()
        if samples.size == 0:
            raise ValueError("trace must contain at least one sample")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "samples", _frozen(samples))

    @classmethod
    def from_function(cls, func, t0: float, dt: float, n: int) -> "ComplexTrace":
        times = t0 + dt * np.arange(n)
        return cls(t0, dt, func(times))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)

    @property
    def span(self) -> float:
        return self.dt * (self.samples.size - 1)

    def with_samples(self, samples) -> "ComplexTrace":
        return ComplexTrace(self.t0, self.dt, samples)

    def scaled(self, factor) -> "ComplexTrace":
        return self.with_samples(self.samples * factor)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.samples)

    def window(self, t_lo: float, t_hi: float) -> "ComplexTrace":
        """Sub-trace with samples whose times fall in ``[t_lo, t_hi]``."""
        n = np.arange(self.samples.size)
        t = self.times
        keep = n[(t >= t_lo - 1e-9 * self.dt) & (t <= t_hi + 1e-9 * self.dt)]
        if keep.size == 0:
            raise ValueError(f"no samples in [{t_lo}, {t_hi}]")
        return ComplexTrace(self.t0 + keep[0] * self.dt, self.dt, self.samples[keep[0] : keep[-1] + 1])

    def to_lab_frame(self, omega: float) -> "ComplexTrace":
        """Multiply by ``exp(-i omega t)``; stored traces live in the drive frame."""
        return self.with_samples(self.samples * np.exp(-1j * omega * self.times))

    # -- CSV ---------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("t_ns,re,im\n")
        for t, z in zip(self.times, self.samples):
            buf.write(f"{t:.12g},{z.real:.17g},{z.imag:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "ComplexTrace":
        text = _read_text(path_or_text)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["t_ns", "re", "im"]:
            raise ValueError("trace CSV must start with header 't_ns,re,im'")
        body = [r for r in rows[1:] if r]
        if not body:
            raise ValueError("trace CSV has no samples")
        data = np.array([[float(c) for c in r] for r in body])
        t = data[:, 0]
        if t.size == 1:
            return cls(t[0], 1.0, data[:, 1] + 1j * data[:, 2])
        dt = (t[-1] - t[0]) / (t.size - 1)
        if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-9):
            raise ValueError("trace CSV is not uniformly sampled")
        return cls(t[0], dt, data[:, 1] + 1j * data[:, 2])


def trace_resample(trace: ComplexTrace, new_dt: float, method: str = "cubic") -> ComplexTrace:
    """Interpolate ``trace`` onto a grid of step ~``new_dt`` spanning the same interval.

    The step is adjusted to the nearest value that divides the span exactly so
    both endpoints are kept.  ``method`` is ``"cubic"`` (spline) or ``"linear"``.
    """
    if not new_dt > 0:
        raise ValueError("new_dt must be positive")
    span = trace.span
    if new_dt > span:
        raise ValueError(f"new_dt={new_dt} exceeds trace span {span}")
    n_new = int(round(span / new_dt)) + 1
    dt = span / (n_new - 1)
    if abs(dt - trace.dt) <= 1e-12 * trace.dt:
        return trace
    t_new = trace.t0 + dt * np.arange(n_new)
    t_new[-1] = trace.t_end
    t_old = trace.times
    if method == "linear" or len(trace) < 4:
        vals = np.interp(t_new, t_old, trace.samples.real) + 1j * np.interp(t_new, t_old, trace.samples.imag)
    elif method == "cubic":
        vals = CubicSpline(t_old, trace.samples)(t_new)
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    return ComplexTrace(trace.t0, dt, vals)


@dataclass(frozen=True)
class PortraitGrid:
    """Complex amplitudes indexed ``values[detuning_index, time_index]``."""

    detunings: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        det = np.asarray(self.detunings, dtype=float).ravel()
        tim = np.asarray(self.times, dtype=float).ravel()
        val = np.asarray(self.values, dtype=complex)
        if val.shape != (det.size, tim.size):
            raise ValueError(f"values shape {val.shape} != ({det.size}, {tim.size})")
        if det.size == 0 or tim.size == 0:
            raise ValueError("empty portrait grid")
        if np.any(np.diff(det) <= 0) or np.any(np.diff(tim) <= 0):
            raise ValueError("detunings and times must be strictly ascending")
        object.__setattr__(self, "detunings", _frozen(det))
        object.__setattr__(self, "times", _frozen(tim))
        object.__setattr__(self, "values", _frozen(val))

    @classmethod
    def from_rows(cls, detunings, rows: Sequence[ComplexTrace]) -> "PortraitGrid":
        if not rows:
            raise ValueError("no rows")
        times = rows[0].times
        return cls(detunings, times, np.vstack([r.samples for r in rows]))

    @property
    def shape(self):
        return self.values.shape

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def normalized(self, scale: float | None = None) -> "PortraitGrid":
        scale = float(np.max(np.abs(self.values))) if scale is None else scale
        if scale == 0:
            return self
        return PortraitGrid(self.detunings, self.times, self.values / scale)

    def row_index(self, detuning: float) -> int:
        idx = int(np.argmin(np.abs(self.detunings - detuning)))
        tol = 1e-9 * max(1.0, abs(detuning))
        if abs(self.detunings[idx] - detuning) > tol:
            raise KeyError(f"detuning {detuning} not on grid")
        return idx

    def row(self, detuning: float) -> ComplexTrace:
        i = self.row_index(detuning)
        dt = self.times[1] - self.times[0] if self.times.size > 1 else 1.0
        return ComplexTrace(self.times[0], dt, self.values[i])

    def column(self, time_index: int) -> np.ndarray:
        return self.values[:, time_index]

    # -- CSV ---------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("time_ns," + ",".join(f"{t:.12g}" for t in self.times) + "\n")
        for d, row in zip(self.detunings, self.values):
            cells = ",".join(f"{z.real:.17g};{z.imag:.17g}" for z in row)
            buf.write(f"{d:.17g},{cells}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "PortraitGrid":
        text = _read_text(path_or_text)
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split(",")
        if head[0].strip() != "time_ns":
            raise ValueError("portrait CSV must start with 'time_ns'")
        times = np.array([float(c) for c in head[1:]])
        dets, vals = [], []
        for ln in lines[1:]:
            cells = ln.split(",")
            dets.append(float(cells[0]))
            row = []
            for c in cells[1:]:
                re, im = c.split(";")
                row.append(complex(float(re), float(im)))
            vals.append(row)
        return cls(np.array(dets), times, np.array(vals))


def _read_text(path_or_text) -> str:
    if isinstance(path_or_text, Path):
        return path_or_text.read_text()
    s = str(path_or_text)
    if "\n" not in s and Path(s).exists():
        return Path(s).read_text()
    return s


@dataclass(frozen=True)
class QubitParams:
    """Two-level emitter: frequency plus radiative and internal decay (rad/ns)."""

    omega_q: float
    gamma_wg: float
    gamma_int: float = 0.0

    def __post_init__(self):
        if self.gamma_wg < 0 or self.gamma_int < 0:
            raise ValueError("decay rates must be non-negative")
        if not self.gamma_wg + self.gamma_int > 0:
            raise ValueError("total decay rate must be positive")

    @classmethod
    def from_total(cls, omega_q: float, gamma: float, beta: float = 1.0) -> "QubitParams":
        if not 0 < beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        return cls(omega_q, gamma * beta, gamma * (1.0 - beta))

    @property
    def gamma(self) -> float:
        return self.gamma_wg + self.gamma_int

    @property
    def beta(self) -> float:
        return self.gamma_wg / self.gamma


@dataclass(frozen=True)
class DrivePulse:
    """Rectangular coherent drive with optional raised-cosine edges.

    ``alpha`` is the input amplitude in sqrt(photons/ns).
    """

    alpha: float
    omega: float
    t_start: float
    t_stop: float
    edge: float = 0.0

    def __post_init__(self):
        if not self.t_stop > self.t_start:
            raise ValueError("t_stop must exceed t_start")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.edge < 0 or self.edge >= 0.5 * (self.t_stop - self.t_start):
            raise ValueError("edge must lie in [0, duration/2)")

    @property
    def duration(self) -> float:
        return self.t_stop - self.t_start

    def envelope(self, t):
        """Real envelope in [0, alpha] at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        env = np.where((t >= self.t_start) & (t < self.t_stop), 1.0, 0.0)
        if self.edge > 0:
            rise = (t >= self.t_start) & (t < self.t_start + self.edge)
            fall = (t >= self.t_stop - self.edge) & (t < self.t_stop)
            env = np.where(rise, 0.5 * (1 - np.cos(np.pi * (t - self.t_start) / self.edge)), env)
            env = np.where(fall, 0.5 * (1 - np.cos(np.pi * (self.t_stop - t) / self.edge)), env)
        return self.alpha * env

    def breakpoints(self) -> list[float]:
        pts = [self.t_start, self.t_stop]
        if self.edge > 0:
            pts += [self.t_start + self.edge, self.t_stop - self.edge]
        return sorted(pts)


@dataclass(frozen=True)
class FilterParams:
    """One-pole amplifier filter.

    ``kappa`` is the field half-bandwidth, ``gain`` the amplitude gain sqrt(G),
    ``noise_sigma`` the std-dev of complex Gaussian noise added per output sample.
    """

    omega_amp: float
    kappa: float
    gain: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    def with_center(self, omega_amp: float) -> "FilterParams":
        return FilterParams(omega_amp, self.kappa, self.gain, self.noise_sigma, self.seed)


FIT_PARAM_NAMES = (
    "alpha",
    "gamma",
    "beta",
    "delta_qd",
    "delta_da",
    "kappa",
    "gain",
    "phase",
    "offset_re",
    "offset_im",
)


@dataclass
class FitResult:
    params: dict[str, float]
    residual: float
    iterations: int
    converged: bool
    stderr: dict[str, float] = field(default_factory=dict)
    loss_history: list[float] = field(default_factory=list)
    message: str = ""
    rank_deficient: list[str] = field(default_factory=list)
    low_confidence: bool = False

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")

    def to_dict(self) -> dict:
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "stderr": {k: float(v) for k, v in self.stderr.items()},
            "residual_rms": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "message": self.message,
            "rank_deficient": list(self.rank_deficient),
            "low_confidence": bool(self.low_confidence),
            "loss_history": [float(x) for x in self.loss_history],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        return cls(
            params=dict(d["params"]),
            residual=d["residual_rms"],
            iterations=d["iterations"],
            converged=d["converged"],
            stderr=dict(d.get("stderr", {})),
            loss_history=list(d.get("loss_history", [])),
            message=d.get("message", ""),
            rank_deficient=list(d.get("rank_deficient", [])),
            low_confidence=d.get("low_confidence", False),
        )
