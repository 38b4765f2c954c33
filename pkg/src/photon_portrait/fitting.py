"""Parameter extraction from filtered emission traces.

Traces are fitted with :func:`~photon_portrait.input_output.detuned_fit_model`
by a damped Gauss-Newton (Levenberg-Marquardt) iteration with a central
finite-difference Jacobian.  Rates, the amplitude and the gain are
optimized in log coordinates, which keeps them positive without
constrained steps.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import FIT_PARAM_NAMES, ComplexTrace, FitResult, PortraitGrid
from .input_output import detuned_fit_model

LOG_PARAMS = frozenset({"alpha", "gamma", "kappa", "gain"})
FREQUENCY_PARAMS = frozenset({"gamma", "kappa", "delta_qd", "delta_da"})

DEFAULT_BOUNDS = {
    "alpha": (1e-6, 1e3),
    "gamma": (1e-6, 10.0),
    "beta": (1e-3, 1.0),
    "delta_qd": (-10.0, 10.0),
    "delta_da": (-10.0, 10.0),
    "kappa": (1e-6, 10.0),
    "gain": (1e-6, 1e6),
    "phase": (-10.0, 10.0),
    "offset_re": (-1e6, 1e6),
    "offset_im": (-1e6, 1e6),
}
DEFAULT_VALUES = {"beta": 1.0, "delta_qd": 0.0, "delta_da": 0.0, "gain": 1.0, "phase": 0.0, "offset_re": 0.0, "offset_im": 0.0}
DEFAULT_FREE = ("alpha", "gamma", "kappa", "delta_qd", "phase")
GAMMA_LADDER = (1 / 3, 3.0, 10.0)

_UNIT_SCALE = {"rad/ns": 1.0, "MHz": 2 * math.pi * 1e-3}


class DegenerateDataError(ValueError):
    """Data carry no usable signal."""


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass
class FitProblem:
    """A least-squares fit of the closed-form filtered trace to data.

    ``free`` lists the parameters to vary; everything else is taken from
    ``fixed``.  ``initial`` seeds the free parameters (missing ones come from
    :func:`initial_guess`).  Values and bounds are always in rad/ns; the
    ``frequency_unit`` only changes the coordinates the optimizer works in.
    """

    data: ComplexTrace
    free: Sequence[str] = DEFAULT_FREE
    fixed: Mapping[str, float] = field(default_factory=dict)
    initial: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    magnitude_only: bool = False
    weights: np.ndarray | None = None
    frequency_unit: str = "rad/ns"

    def __post_init__(self):
        self.free = tuple(self.free)
        unknown = set(self.free) | set(self.fixed) | set(self.initial) | set(self.bounds)
        unknown -= set(FIT_PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown fit parameters: {sorted(unknown)}")
        if len(set(self.free)) != len(self.free):
            raise ValueError("duplicate free parameter")
        overlap = set(self.free) & set(self.fixed)
        if overlap:
            raise ValueError(f"parameters both free and fixed: {sorted(overlap)}")
        if "beta" in self.free and "gain" in self.free:
            raise ValueError("beta and gain are not jointly identifiable from one trace; fix one of them")
        if self.frequency_unit not in _UNIT_SCALE:
            raise ValueError(f"frequency_unit must be one of {sorted(_UNIT_SCALE)}")
        for name in self.free:
            lo, hi = self.bound(name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"parameter {name} needs finite bounds lo < hi")
            if name in LOG_PARAMS and lo <= 0:
                raise ValueError(f"parameter {name} needs a positive lower bound")
            if name in self.initial and not lo <= self.initial[name] <= hi:
                raise ValueError(f"initial {name}={self.initial[name]} outside bounds {(lo, hi)}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.data),) or np.any(w < 0):
                raise ValueError("weights must be non-negative with one entry per sample")
            self.weights = w

    def bound(self, name: str) -> tuple[float, float]:
        return tuple(self.bounds.get(name, DEFAULT_BOUNDS[name]))

    def full_params(self, free_values: Mapping[str, float]) -> dict[str, float]:
        p = dict(DEFAULT_VALUES)
        p.update(self.fixed)
        p.update(free_values)
        return p

    def residuals(self, params: Mapping[str, float]) -> np.ndarray:
        """Weighted residual vector (real and imaginary parts stacked, or magnitudes)."""
        model = detuned_fit_model(params, self.data.times).samples
        data = self.data.samples
        if self.magnitude_only:
            r = np.abs(model) - np.abs(data)
            return r if self.weights is None else self.weights * r
        d = model - data
        if self.weights is not None:
            d = self.weights * d
        return np.concatenate([d.real, d.imag])

    def loss(self, params: Mapping[str, float]) -> float:
        r = self.residuals(params)
        return float(r @ r)

    # optimizer coordinates
    def _scale(self, name: str) -> float:
        return _UNIT_SCALE[self.frequency_unit] if name in FREQUENCY_PARAMS else 1.0

    def to_internal(self, name: str, value: float) -> float:
        v = value / self._scale(name)
        return math.log(v) if name in LOG_PARAMS else v

    def from_internal(self, name: str, u: float) -> float:
        v = math.exp(u) if name in LOG_PARAMS else u
        return v * self._scale(name)

    def internal_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.to_internal(n, self.bound(n)[0]) for n in self.free])
        hi = np.array([self.to_internal(n, self.bound(n)[1]) for n in self.free])
        return lo, hi

    def unpack(self, u: np.ndarray) -> dict[str, float]:
        return self.full_params({n: self.from_internal(n, x) for n, x in zip(self.free, u)})


def _noise_floor(y: np.ndarray) -> float:
    # sample-to-sample scatter over the last tenth of the record
    d = np.diff(y[-max(8, y.size // 10) :])
    return float(np.sqrt(np.mean(np.abs(d) ** 2) / 2))


def _tail_window(t: np.ndarray, mag: np.ndarray, noise: float) -> np.ndarray:
    post = t > 0
    if post.sum() < 4:
        raise DegenerateDataError("need at least four post-stop samples")
    # prefer late samples, where the filter transient has died out
    for start in (0.25, 0.1, 0.0):
        idx = np.flatnonzero(post & (t >= start * t[-1]) & (mag > 4 * noise))
        if idx.size >= 8:
            return idx
    raise DegenerateDataError("post-stop signal too weak for a tail estimate")


def initial_guess(
    data: ComplexTrace,
    known: Mapping[str, float] | None = None,
    magnitude_only: bool = False,
) -> dict[str, float]:
    """Heuristic starting point for all fit parameters.

    Sources of each estimate:

    - ``gamma``: twice the log-magnitude slope of the tail.
    - ``delta_qd``: phase slope of the tail.
    - ``kappa``: decay of the residual once the tail is subtracted.
    - ``alpha``: the pre-stop plateau.
    - ``phase``: the first sample.

    Entries of ``known`` are passed through untouched.

    Raises
    ------
    DegenerateDataError
        For all-zero or nearly empty data.
    """
    known = dict(known or {})
    t = data.times
    y = data.samples
    mag = np.abs(y)
    if not np.any(mag > 0):
        raise DegenerateDataError("data are identically zero")
    guess = dict(DEFAULT_VALUES)
    guess.update(known)

    tail = _tail_window(t, mag, _noise_floor(y))
    tt, yt, wt = t[tail], y[tail], mag[tail]
    slope, icpt = np.polyfit(tt, np.log(wt), 1, w=wt)
    phase_fit = np.polyfit(tt, np.unwrap(np.angle(yt)), 1, w=wt)
    if "gamma" not in known:
        guess["gamma"] = max(-2.0 * slope, 1e-4)
    if "delta_qd" not in known:
        guess["delta_qd"] = 0.0 if magnitude_only else float(-phase_fit[0])
    gamma = guess["gamma"]

    if "kappa" not in known:
        post = t > 0
        tail_fit = np.exp(icpt + slope * t[post])
        if not magnitude_only:
            tail_fit = tail_fit * np.exp(1j * np.polyval(phase_fit, t[post]))
            excess = np.abs(y[post] - tail_fit)
        else:
            excess = np.abs(mag[post] - tail_fit)
        kappa = 2.0 * gamma
        if excess[0] > 0:
            drop = np.flatnonzero(excess < 0.05 * excess[0])
            stop = drop[0] if drop.size else excess.size
            if stop >= 3:
                ks = -np.polyfit(t[post][:stop], np.log(np.maximum(excess[:stop], 1e-300)), 1)[0]
                if ks > gamma / 2:
                    kappa = float(ks)
        guess["kappa"] = kappa
    kappa = guess["kappa"]

    if "alpha" not in known:
        pre = t < 0
        if pre.sum() >= 1:
            delta_da = guess["delta_da"]
            target = float(np.median(mag[pre][: max(1, pre.sum() // 4)]))
            target *= abs(kappa - 1j * delta_da) / guess["gain"]
            beta, dqd = guess["beta"], guess["delta_qd"]

            def level(a):
                den = a**2 * beta * gamma + gamma**2 / 4 + dqd**2
                return abs(a - a * beta * gamma / 2 * (gamma / 2 - 1j * dqd) / den) - target

            hi = max(10 * target, 10 * math.sqrt(gamma))
            try:
                guess["alpha"] = float(brentq(level, 1e-9, hi)) if level(1e-9) < 0 < level(hi) else target
            except ValueError:
                guess["alpha"] = target
        else:
            guess["alpha"] = math.sqrt(gamma)
        guess["alpha"] = max(guess["alpha"], 1e-6)

    if "phase" not in known and not magnitude_only:
        probe = dict(guess, phase=0.0, offset_re=0.0, offset_im=0.0)
        k = int(np.argmax(mag > 0.1 * mag.max()))
        ref = detuned_fit_model(probe, t[k : k + 2]).samples[0]
        guess["phase"] = float(np.angle(y[k] / ref)) if ref != 0 else 0.0
    return guess


@dataclass
class _LMOutcome:
    u: np.ndarray
    loss_history: list[float]
    iterations: int
    converged: bool
    message: str
    jacobian: np.ndarray
    residual: np.ndarray


def _jacobian(fun, u: np.ndarray, lo, hi) -> np.ndarray:
    cols = []
    for j in range(u.size):
        h = max(1e-6, 1e-4 * abs(u[j]))
        up, dn = u.copy(), u.copy()
        up[j] = min(u[j] + h, hi[j])
        dn[j] = max(u[j] - h, lo[j])
        cols.append((fun(up) - fun(dn)) / (up[j] - dn[j]))
    return np.column_stack(cols)


def levenberg_marquardt(
    fun,
    u0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    max_iter: int = 200,
    gtol: float = 1e-10,
    xtol: float = 1e-13,
    ftol: float = 1e-15,
) -> _LMOutcome:
    """Minimize ``|fun(u)|^2`` inside a box with Marquardt-scaled damping.

    Every accepted step strictly lowers the loss, so ``loss_history`` is
    non-increasing by construction.
    """
    u = np.clip(np.asarray(u0, dtype=float), lo, hi)
    r = fun(u)
    loss = float(r @ r)
    history = [loss]
    lam = None
    message = "maximum iterations reached"
    converged = False
    J = _jacobian(fun, u, lo, hi)
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        col_norm = np.linalg.norm(J, axis=0)
        rn = math.sqrt(loss)
        if rn == 0 or np.max(np.abs(g) / np.where(col_norm > 0, col_norm * rn, np.inf)) <= gtol:
            converged, message = True, "gradient below tolerance"
            break
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-300)
        if lam is None:
            lam = 1e-3 * float(diag.max())
        stepped = False
        while lam < 1e30:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            u_new = np.clip(u + delta, lo, hi)
            r_new = fun(u_new)
            loss_new = float(r_new @ r_new)
            if np.isfinite(loss_new) and loss_new < loss:
                small_step = np.all(np.abs(u_new - u) <= xtol * (np.abs(u) + xtol))
                small_gain = (loss - loss_new) <= ftol * loss
                u, r = u_new, r_new
                loss = loss_new
                history.append(loss)
                lam = max(lam / 3, 1e-300)
                stepped = True
                if small_step or small_gain:
                    converged, message = True, "step below tolerance"
                break
            if np.all(np.abs(u_new - u) <= xtol * (np.abs(u) + xtol)):
                break
            lam *= 4
        if converged:
            break
        if not stepped:
            converged, message = True, "no further decrease possible at working precision"
            break
        J = _jacobian(fun, u, lo, hi)
    return _LMOutcome(u, history, it, converged, message, J, r)


def _rank_deficient_directions(J: np.ndarray, names: Sequence[str], rtol: float = 1e-8) -> list[str]:
    norms = np.linalg.norm(J, axis=0)
    # columns at roundoff level would look full-rank once normalized
    alive = norms > rtol * norms.max() if norms.size and norms.max() > 0 else np.zeros(norms.size, bool)
    dead = [n for n, a in zip(names, alive) if not a]
    Js = J[:, alive] / norms[alive]
    names = [n for n, a in zip(names, alive) if a]
    if not names:
        return dead
    _, s, vt = np.linalg.svd(Js, full_matrices=False)
    weak = vt[s < rtol * s[0]]
    for v in weak:
        dead += [n for n, c in zip(names, v) if abs(c) > 0.1 and n not in dead]
    return dead


def fit(problem: FitProblem, max_iter: int = 200, n_starts: int = 1, seed: int = 0) -> FitResult:
    """Fit ``problem`` and report parameters in rad/ns with linearized standard errors.

    When ``gamma`` is free and has no user-supplied start, the heuristic
    start is joined by starts with ``gamma`` scaled by each factor in
    ``GAMMA_LADDER`` (and ``delta_qd`` reset to zero): the tail-slope guess
    is unreliable once the emission tail sits near the noise floor.
    ``n_starts > 1`` adds deterministic random restarts spread around the
    first start.  The lowest final loss wins.
    """
    start = initial_guess(problem.data, {**problem.fixed, **problem.initial}, problem.magnitude_only)
    lo, hi = problem.internal_bounds()

    def internal(p):
        return np.array([problem.to_internal(n, float(np.clip(p[n], *problem.bound(n)))) for n in problem.free])

    u0 = internal(start)
    starts = [u0]
    if "gamma" in problem.free and "gamma" not in problem.initial:
        for factor in GAMMA_LADDER:
            alt = dict(start, gamma=start["gamma"] * factor)
            if "delta_qd" in problem.free and "delta_qd" not in problem.initial:
                alt["delta_qd"] = 0.0
            starts.append(internal(alt))
    rng = np.random.default_rng(seed)
    for _ in range(max(1, n_starts) - 1):
        starts.append(np.clip(u0 + rng.normal(scale=0.3, size=u0.size) * np.maximum(np.abs(u0), 1.0) * 0.1, lo, hi))

    def fun(u):
        return problem.residuals(problem.unpack(u))

    best = None
    for u_start in starts:
        out = levenberg_marquardt(fun, u_start, lo, hi, max_iter=max_iter)
        if best is None or out.loss_history[-1] < best.loss_history[-1]:
            best = out

    names = problem.free
    params = problem.unpack(best.u)
    m, n = best.residual.size, len(names)
    dead = _rank_deficient_directions(best.jacobian, names)
    if dead:
        warnings.warn(f"rank-deficient fit; unidentifiable directions involve {dead}", RankDeficiencyWarning, stacklevel=2)
    stderr = {}
    if m > n:
        s2 = best.loss_history[-1] / (m - n)
        cov = s2 * np.linalg.pinv(best.jacobian.T @ best.jacobian)
        for j, name in enumerate(names):
            su = math.sqrt(max(cov[j, j], 0.0))
            stderr[name] = params[name] * su if name in LOG_PARAMS else su * problem._scale(name)
    return FitResult(
        params={k: float(params[k]) for k in FIT_PARAM_NAMES},
        residual=math.sqrt(best.loss_history[-1] / max(m, 1)),
        iterations=best.iterations,
        converged=best.converged,
        stderr=stderr,
        loss_history=best.loss_history,
        message=best.message,
        rank_deficient=dead,
    )


def loss_gradient(problem: FitProblem, params: Mapping[str, float]) -> dict[str, float]:
    """Gradient of the loss with respect to the free parameters (rad/ns units), from the Jacobian."""
    u = np.array([problem.to_internal(n, params[n]) for n in problem.free])
    lo, hi = problem.internal_bounds()

    def fun(v):
        return problem.residuals(problem.unpack(v))

    J = _jacobian(fun, u, np.full_like(u, -np.inf), np.full_like(u, np.inf))
    g_u = 2 * J.T @ fun(u)
    out = {}
    for j, name in enumerate(problem.free):
        # chain rule from internal coordinate to physical value
        du_dp = 1 / params[name] if name in LOG_PARAMS else 1 / problem._scale(name)
        out[name] = float(g_u[j] * du_dp)
    return out


def _fit_row(args):
    detuning, trace, free, fixed, initial, magnitude_only, low_conf_factor, max_iter = args
    fixed = dict(fixed, delta_da=-detuning)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            res = fit(FitProblem(trace, free, fixed, initial, magnitude_only=magnitude_only), max_iter=max_iter)
    except Exception as exc:  # per-row failures are recorded, not raised
        return FitResult({k: math.nan for k in FIT_PARAM_NAMES}, math.inf, 0, False, message=f"failed: {exc}", low_confidence=True)
    kappa = res.params["kappa"]
    res.low_confidence = bool(abs(detuning) > low_conf_factor * kappa or not res.converged)
    return res


def fit_portrait(
    grid: PortraitGrid,
    fixed: Mapping[str, float] | None = None,
    free: Sequence[str] = DEFAULT_FREE,
    initial: Mapping[str, float] | None = None,
    magnitude_only: bool = False,
    workers: int = 1,
    low_confidence_factor: float = 10.0,
    max_iter: int = 200,
    anchor: bool = True,
) -> list[FitResult]:
    """Fit every row of a portrait independently.

    Row detunings are filter minus drive (``omega_amp - omega``), so each row
    has ``delta_da`` fixed to minus its detuning while ``delta_qd`` stays free.
    With ``anchor`` the row carrying the most signal energy is fitted first
    and its emitter parameters seed the other rows, whose own heuristic
    guesses degrade once the filter sits far from the emitter.  Rows further
    than ``low_confidence_factor * kappa`` from the drive are flagged
    low-confidence.  Results come back in row order for any ``workers``
    count.
    """
    if "delta_da" in free:
        raise ValueError("delta_da is set per row and cannot be free")
    fixed = dict(fixed or {})
    initial = dict(initial or {})

    def job(i, init):
        d = float(grid.detunings[i])
        return (d, grid.row(d), tuple(free), fixed, init, magnitude_only, low_confidence_factor, max_iter)

    anchor_result = None
    if anchor:
        k = int(np.argmax(np.sum(np.abs(grid.values) ** 2, axis=1)))
        anchor_result = _fit_row(job(k, initial))
        if anchor_result.converged:
            seeded = {n: anchor_result.params[n] for n in free if n in ("alpha", "gamma", "kappa", "delta_qd")}
            initial = {**seeded, **initial}
    jobs = [job(i, initial) for i in range(grid.detunings.size)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fit_row, jobs))
    return [_fit_row(j) for j in jobs]


def detuning_map(results: Sequence[FitResult]) -> tuple[np.ndarray, np.ndarray]:
    """Fitted ``delta_qd`` and its standard error per portrait row."""
    vals = np.array([r.params["delta_qd"] for r in results])
    errs = np.array([r.stderr.get("delta_qd", math.nan) for r in results])
    return vals, errs
