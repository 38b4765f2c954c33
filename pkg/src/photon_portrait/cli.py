"""Command-line entry point.

Every subcommand reads its parameters from built-in defaults, then an
optional flat ``key = value`` config file, then command-line flags (last
wins).  Physical inputs use MHz (ordinary frequency), ns and mm; internal
computation is in rad/ns.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .core import (
    FIT_PARAM_NAMES,
    ComplexTrace,
    DrivePulse,
    FilterParams,
    PortraitGrid,
    QubitParams,
    angular_frequency,
    ordinary_frequency,
)
from .filter_chain import filter_apply
from .fitting import DEFAULT_FREE, FitProblem, detuning_map, fit, fit_portrait
from .input_output import (
    DrivenQubitConfig,
    analytic_filtered_trace,
    analytic_portrait,
    detuned_fit_model,
    unfiltered_output,
)
from .lindblad import (
    IntegratorFailure,
    MultiQubitSystem,
    basis_state,
    bloch_trajectory,
    bright_state,
    dark_state,
    integrate_master_equation,
    output_field,
)
from .svg import export_svg_heatmap, export_svg_lines
from .waveguide import (
    DipoleConfig,
    WaveguideGeometry,
    cutoff_frequency,
    decay_slope,
    exponential_deviation,
    kernel_decay_check,
    prefactor_for_rate,
)
from .wigner_weisskopf import WWModel, spectral_fwhm, ww_envelope, ww_filtered_portrait, ww_portrait

ENV_OUT = "PHOTON_PORTRAIT_OUT"
SVG_MAX_CELLS = 40_000


class ConfigError(ValueError):
    """Bad command line or config file."""


def mhz(x):
    return angular_frequency(x, "MHz")


# -- option registry -----------------------------------------------------------


@dataclass(frozen=True)
class Option:
    key: str
    kind: str  # float | int | str | bool | floats | strs | path
    default: Any
    unit: str
    help: str
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")

    def describe(self) -> str:
        text = f"{self.help} [{self.unit}]"
        if self.default is not None and self.kind != "bool":
            shown = ",".join(str(v) for v in self.default) if isinstance(self.default, (list, tuple)) else self.default
            text += f" (default: {shown})"
        return text

    def convert(self, raw) -> Any:
        if self.kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{self.key}: expected a boolean, got {raw!r}")
        raw = str(raw).strip()
        if raw.lower() in ("", "none") and self.default is None:
            return None
        try:
            if self.kind == "float":
                val = float(raw)
            elif self.kind == "int":
                val = int(raw)
            elif self.kind in ("str", "path"):
                val = raw
            elif self.kind == "floats":
                val = [float(v) for v in raw.split(",") if v.strip()]
            elif self.kind == "strs":
                val = [v.strip() for v in raw.split(",") if v.strip()]
            else:  # pragma: no cover
                raise AssertionError(self.kind)
        except ValueError as exc:
            raise ConfigError(f"{self.key}: cannot parse {raw!r} as {self.kind}") from exc
        self.validate(val)
        return val

    def validate(self, val) -> None:
        if val is None:
            return
        vals = val if isinstance(val, list) else [val]
        for v in vals:
            if self.choices is not None and v not in self.choices:
                raise ConfigError(f"{self.key}: {v!r} not in {list(self.choices)}")
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                if not math.isfinite(v):
                    raise ConfigError(f"{self.key}: value must be finite")
                if self.lo is not None and v < self.lo:
                    raise ConfigError(f"{self.key}: {v} below allowed minimum {self.lo}")
                if self.hi is not None and v > self.hi:
                    raise ConfigError(f"{self.key}: {v} above allowed maximum {self.hi}")
        if self.kind == "path" and not Path(val).is_file():
            raise ConfigError(f"{self.key}: file {val!r} does not exist")


COMMON = [
    Option("out", "str", None, "directory", f"output directory; defaults to ${ENV_OUT} or the working directory"),
    Option("seed", "int", 0, "integer", "seed for all noise streams", lo=0),
    Option("workers", "int", 1, "processes", "worker processes for row-parallel jobs", lo=1, hi=256),
    Option("csv", "bool", True, "toggle", "write CSV outputs"),
    Option("json", "bool", True, "toggle", "write JSON outputs"),
    Option("svg", "bool", True, "toggle", "write SVG outputs"),
]

_EMITTER = [
    Option("qubit_mhz", "float", 7300.0, "MHz", "emitter frequency", lo=1.0),
    Option("gamma_mhz", "float", 1.5, "MHz", "total emitter decay rate gamma/2pi", lo=1e-6, hi=1e4),
    Option("beta", "float", 1.0, "dimensionless", "radiative fraction of the decay", lo=1e-6, hi=1.0),
    Option("alpha", "float", 0.1, "sqrt(photons/ns)", "drive amplitude", lo=0.0, hi=1e3),
    Option("delta_qd_mhz", "float", 0.0, "MHz", "emitter minus drive frequency", lo=-1e4, hi=1e4),
    Option("kappa_mhz", "float", 2.5, "MHz", "filter half-bandwidth kappa/2pi", lo=1e-6, hi=1e4),
    Option("gain_db", "float", 0.0, "dB", "amplifier power gain G", lo=-100, hi=100),
    Option("noise_sigma", "float", 0.0, "output amplitude units", "std-dev of complex noise per sample", lo=0.0),
    Option("drive_ns", "float", 1000.0, "ns", "drive length before the stop at t=0", lo=0.0),
]
_TIME = [
    Option("t_start_ns", "float", -300.0, "ns", "first sample time (drive stops at 0)"),
    Option("t_end_ns", "float", 1500.0, "ns", "last sample time"),
    Option("dt_ns", "float", 1.0, "ns", "sample spacing", lo=1e-6),
]

_FIT_KEYS = {
    "alpha": ("alpha", "sqrt(photons/ns)"),
    "gamma": ("gamma_mhz", "MHz"),
    "beta": ("beta", "dimensionless"),
    "delta_qd": ("delta_qd_mhz", "MHz"),
    "delta_da": ("delta_da_mhz", "MHz"),
    "kappa": ("kappa_mhz", "MHz"),
    "gain": ("gain_db", "dB"),
    "phase": ("phase", "rad"),
    "offset_re": ("offset_re", "amplitude units"),
    "offset_im": ("offset_im", "amplitude units"),
}


def _fit_options(exclude=()) -> list[Option]:
    opts = [
        Option("free", "strs", list(p for p in DEFAULT_FREE if p not in exclude), "names", "free parameters", choices=tuple(p for p in FIT_PARAM_NAMES if p not in exclude)),
        Option("magnitude_only", "bool", False, "toggle", "fit magnitudes instead of complex samples"),
        Option("frequency_unit", "str", "rad/ns", "unit", "optimizer coordinates for frequencies", choices=("rad/ns", "MHz")),
        Option("n_starts", "int", 1, "count", "number of optimizer starts", lo=1, hi=100),
        Option("max_iter", "int", 200, "count", "iteration cap per start", lo=1),
    ]
    for name, (key, unit) in _FIT_KEYS.items():
        if name in exclude:
            continue
        opts.append(Option(key, "float", None, unit, f"{name}: initial value if free, fixed value otherwise"))
        opts.append(Option(f"bounds_{key}", "floats", None, unit, f"{name} bounds as lo,hi"))
    return opts


SCHEMAS: dict[str, tuple[str, list[Option]]] = {
    "ww-portrait": (
        "ideal spontaneous-emission portrait |f_k(t)|",
        [
            Option("gamma_mhz", "float", 1.5, "MHz", "decay rate gamma/2pi", lo=1e-6, hi=1e4),
            Option("span_mhz", "float", 10.0, "MHz", "half-span of the detuning axis", lo=1e-6),
            Option("n_detunings", "int", 201, "count", "detuning samples", lo=2, hi=100_000),
            Option("t_max_ns", "float", 5000.0, "ns", "last time sample", lo=1e-6),
            Option("n_times", "int", 501, "count", "time samples from 0", lo=2, hi=1_000_000),
        ],
    ),
    "analytic-trace": (
        "closed-form filtered output after a long drive",
        _EMITTER + [Option("delta_da_mhz", "float", 0.0, "MHz", "drive minus filter frequency", lo=-1e4, hi=1e4)] + _TIME,
    ),
    "analytic-portrait": (
        "closed-form filtered outputs over a sweep of filter centres",
        _EMITTER
        + [
            Option("span_mhz", "float", 10.0, "MHz", "half-span of filter-minus-emitter detunings", lo=0.0),
            Option("n_centers", "int", 41, "count", "filter centres", lo=1, hi=10_000),
            Option("normalize", "bool", True, "toggle", "scale the grid maximum to 1"),
        ]
        + _TIME,
    ),
    "lindblad-run": (
        "driven multi-qubit master equation and its output field",
        [
            Option("qubit_mhz", "floats", [7300.0], "MHz", "qubit frequencies, one per qubit (1 to 3)"),
            Option("gamma_wg_mhz", "floats", [1.5], "MHz", "radiative rates gamma0_ii/2pi (one value or one per qubit)", lo=0.0),
            Option("gamma_int_mhz", "floats", [0.0], "MHz", "internal loss rates (one value or one per qubit)", lo=0.0),
            Option("x_mm", "floats", [0.0], "mm", "qubit positions along the guide (one value or one per qubit)"),
            Option("direct_mhz", "floats", [], "MHz", "direct couplings G/2pi, upper triangle order 12,13,23"),
            Option("speed_mm_per_ns", "float", 299.792458, "mm/ns", "propagation speed", lo=1e-6),
            Option("alpha", "float", 0.1, "sqrt(photons/ns)", "drive amplitude", lo=0.0, hi=1e3),
            Option("drive_detuning_mhz", "float", 0.0, "MHz", "drive minus first-qubit frequency", lo=-1e4, hi=1e4),
            Option("t_start_ns", "float", -1000.0, "ns", "pulse start and first sample"),
            Option("t_stop_ns", "float", 0.0, "ns", "pulse stop"),
            Option("edge_ns", "float", 0.0, "ns", "raised-cosine edge length (0 = rectangular)", lo=0.0),
            Option("t_end_ns", "float", 1000.0, "ns", "last sample"),
            Option("dt_ns", "float", 1.0, "ns", "sample spacing", lo=1e-6),
            Option("initial", "str", "ground", "state", "initial state: ground, bright, dark or a bit string such as 10"),
            Option("rtol", "float", 1e-9, "relative", "integrator relative tolerance", lo=1e-14, hi=1e-3),
            Option("kappa_mhz", "float", 0.0, "MHz", "filter half-bandwidth; 0 disables the filter", lo=0.0, hi=1e4),
            Option("center_mhz", "float", 0.0, "MHz", "filter minus drive frequency", lo=-1e4, hi=1e4),
            Option("gain_db", "float", 0.0, "dB", "amplifier power gain", lo=-100, hi=100),
            Option("noise_sigma", "float", 0.0, "output amplitude units", "std-dev of complex noise per sample", lo=0.0),
        ],
    ),
    "filter": (
        "pass a trace CSV through the one-pole amplifier filter",
        [
            Option("input", "path", None, "path", "ComplexTrace CSV to filter"),
            Option("kappa_mhz", "float", 2.5, "MHz", "filter half-bandwidth kappa/2pi", lo=1e-6, hi=1e4),
            Option("center_mhz", "float", 0.0, "MHz", "filter centre in the trace frame", lo=-1e4, hi=1e4),
            Option("gain_db", "float", 0.0, "dB", "amplifier power gain", lo=-100, hi=100),
            Option("noise_sigma", "float", 0.0, "output amplitude units", "std-dev of complex noise per sample", lo=0.0),
            Option("prefill", "bool", False, "toggle", "start from the steady response to the first sample"),
        ],
    ),
    "fit": ("fit a trace CSV with the closed-form model", [Option("data", "path", None, "path", "ComplexTrace CSV to fit")] + _fit_options()),
    "fit-portrait": (
        "fit every row of a portrait CSV (rows: filter minus drive, rad/ns)",
        [
            Option("data", "path", None, "path", "PortraitGrid CSV to fit"),
            Option("low_confidence_factor", "float", 10.0, "multiples of kappa", "flag rows beyond this detuning", lo=0.0),
        ]
        + _fit_options(exclude=("delta_da",)),
    ),
    "kernel-check": (
        "emitter decay from the full waveguide memory kernel",
        [
            Option("a_mm", "float", 22.86, "mm", "broad waveguide dimension", lo=1e-3),
            Option("b_mm", "float", 10.16, "mm", "narrow waveguide dimension", lo=1e-3),
            Option("eps_r", "float", 1.0, "dimensionless", "relative permittivity", lo=1.0),
            Option("qubit_mhz", "float", 7300.0, "MHz", "emitter frequency", lo=1.0),
            Option("gamma_mhz", "float", 1.5, "MHz", "decay rate gamma/2pi at the emitter frequency", lo=0.0),
            Option("t_max_ns", "float", 500.0, "ns", "integration length", lo=1e-6),
            Option("dt_ns", "float", None, "ns", "time step; default 1/(100 gamma)", lo=1e-9),
            Option("d_omega_mhz", "float", None, "MHz", "frequency cell width; default gamma/20", lo=1e-9),
            Option("window", "float", 200.0, "multiples of gamma", "band extent above the emitter", lo=1.0),
            Option("markov", "bool", False, "toggle", "use the flat-density (Markov) kernel"),
        ],
    ),
    "demo": (
        "run the built-in example presets",
        [Option("name", "str", "all", "preset", "preset name", choices=("all", "fig1a", "1a", "fig3a", "3a", "fig3b", "3b", "fig4b", "4b", "fig4d", "4d", "fig8a", "8a", "fig8b", "8b"))],
    ),
}


def options_for(command: str) -> list[Option]:
    return SCHEMAS[command][1] + COMMON


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # grammar errors are configuration errors
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photon-portrait", description="Single-photon portrait simulator and fitter.")
    parser.add_argument("--version", action="version", version=__version__, help="print the version and exit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (desc, _) in SCHEMAS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        if name == "demo":
            p.add_argument("name", nargs="?", default=None, help="preset to run [preset] (default: all)")
        p.add_argument("--config", default=None, help="flat key = value file with any of the options below [path]")
        for opt in options_for(name):
            if name == "demo" and opt.key == "name":
                continue
            if opt.kind == "bool":
                p.add_argument(opt.flag, dest=opt.key, action=argparse.BooleanOptionalAction, default=None, help=opt.describe())
            else:
                p.add_argument(opt.flag, dest=opt.key, default=None, metavar=opt.unit.upper().replace(" ", "_"), help=opt.describe())
    return parser


def parse_config_text(text: str, options: Sequence[Option], source: str = "config") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Unknown or repeated keys are errors."""
    known = {o.key: o for o in options}
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = known[key].convert(value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Overlay the config file and then the flags on the defaults of one subcommand."""
    options = options_for(command)
    values = {o.key: o.default for o in options}
    if ns.config:
        path = Path(ns.config)
        if not path.is_file():
            raise ConfigError(f"config file {ns.config!r} does not exist")
        values.update(parse_config_text(path.read_text(), options, source=str(path)))
    for o in options:
        raw = getattr(ns, o.key, None)
        if raw is not None:
            values[o.key] = o.convert(raw)
    for o in options:
        if o.kind == "path" and values[o.key] is None:
            raise ConfigError(f"{o.key} is required ({o.flag})")
    return values


# -- outputs -------------------------------------------------------------------


class Outputs:
    def __init__(self, cfg: dict):
        out = cfg["out"] or os.environ.get(ENV_OUT) or "."
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.enabled = {"csv": cfg["csv"], "json": cfg["json"], "svg": cfg["svg"]}
        self.written: list[Path] = []

    def write(self, name: str, text: str) -> None:
        kind = name.rsplit(".", 1)[-1]
        if not self.enabled.get(kind, True):
            return
        path = self.dir / name
        path.write_text(text)
        self.written.append(path)

    def json(self, name: str, obj) -> None:
        self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _display_grid(grid: PortraitGrid) -> PortraitGrid:
    # keep SVG files small by striding the time axis
    stride = max(1, math.ceil(grid.values.size / SVG_MAX_CELLS))
    if stride == 1:
        return grid
    return PortraitGrid(grid.detunings, grid.times[::stride], grid.values[:, ::stride])


def _time_grid(t0: float, t1: float, dt: float) -> np.ndarray:
    if not t1 > t0:
        raise ConfigError("end time must exceed start time")
    n = int(round((t1 - t0) / dt)) + 1
    return t0 + dt * np.arange(n)


def _gain(db: float) -> float:
    return 10 ** (db / 20)


def _trace_svg(traces: Sequence[tuple[str, ComplexTrace]]) -> str:
    return export_svg_lines([(lab, tr.times, tr.magnitude()) for lab, tr in traces])


# -- subcommands ---------------------------------------------------------------


def _ww_grid(cfg):
    model = WWModel(0.0, mhz(cfg["gamma_mhz"]))
    det = mhz(np.linspace(-cfg["span_mhz"], cfg["span_mhz"], cfg["n_detunings"]))
    times = np.linspace(0.0, cfg["t_max_ns"], cfg["n_times"])
    return model, ww_portrait(model, det, times)


def cmd_ww_portrait(cfg, out: Outputs, prefix: str = "ww_portrait"):
    model, grid = _ww_grid(cfg)
    cols = range(grid.times.size)
    interp = ordinary_frequency(np.array([spectral_fwhm(grid.detunings, grid.column(j)) for j in cols]), "MHz")
    cells = ordinary_frequency(np.array([spectral_fwhm(grid.detunings, grid.column(j), method="grid") for j in cols]), "MHz")
    out.write(f"{prefix}.csv", grid.to_csv())
    out.write(
        f"{prefix}_fwhm.csv",
        "time_ns,fwhm_mhz,fwhm_grid_mhz\n" + "".join(f"{t:.12g},{a:.12g},{b:.12g}\n" for t, a, b in zip(grid.times, interp, cells)),
    )
    env = ww_envelope(model, np.linspace(-0.1 * cfg["t_max_ns"], cfg["t_max_ns"], 1001))
    out.write(f"{prefix}_envelope.csv", env.to_csv())
    out.write(f"{prefix}.svg", export_svg_heatmap(_display_grid(grid.normalized(1.0)), title="|f_k(t)|"))

    def monotone(w):
        w = w[np.isfinite(w)]
        return bool(np.all(np.diff(w) <= 0))

    out.json(
        f"{prefix}.json",
        {
            "gamma_mhz": cfg["gamma_mhz"],
            "fwhm_final_mhz": float(interp[-1]),
            "fwhm_grid_final_mhz": float(cells[-1]),
            "grid_cell_mhz": float(2 * cfg["span_mhz"] / (cfg["n_detunings"] - 1)),
            "fwhm_monotone_non_increasing": monotone(interp),
            "fwhm_grid_monotone_non_increasing": monotone(cells),
        },
    )


def _driven_config(cfg, delta_da_mhz: float = 0.0) -> DrivenQubitConfig:
    w_q = mhz(cfg["qubit_mhz"])
    w_d = w_q - mhz(cfg["delta_qd_mhz"])
    qubit = QubitParams.from_total(w_q, mhz(cfg["gamma_mhz"]), cfg["beta"])
    duration = cfg["drive_ns"] if cfg["drive_ns"] > 0 else 1.0
    drive = DrivePulse(cfg["alpha"], w_d, -duration, 0.0)
    filt = FilterParams(w_d - mhz(delta_da_mhz), mhz(cfg["kappa_mhz"]), _gain(cfg["gain_db"]), cfg["noise_sigma"], cfg["seed"])
    return DrivenQubitConfig(qubit, drive, filt)


def cmd_analytic_trace(cfg, out: Outputs, prefix: str = "analytic_trace"):
    config = _driven_config(cfg, cfg["delta_da_mhz"])
    times = _time_grid(cfg["t_start_ns"], cfg["t_end_ns"], cfg["dt_ns"])
    trace = analytic_filtered_trace(config, times)
    out.write(f"{prefix}.csv", trace.to_csv())
    out.write(f"{prefix}.svg", _trace_svg([("|a_amp|", trace)]))
    return trace


def cmd_analytic_portrait(cfg, out: Outputs, prefix: str = "analytic_portrait"):
    config = _driven_config(cfg)
    times = _time_grid(cfg["t_start_ns"], cfg["t_end_ns"], cfg["dt_ns"])
    centers = mhz(np.linspace(-cfg["span_mhz"], cfg["span_mhz"], cfg["n_centers"]))
    grid = analytic_portrait(config, centers, times, normalize=cfg["normalize"])
    out.write(f"{prefix}.csv", grid.to_csv())
    out.write(f"{prefix}.svg", export_svg_heatmap(_display_grid(grid), title="|a_amp|"))
    return grid


def _per_qubit(values, n, key):
    if len(values) == 1:
        return [values[0]] * n
    if len(values) != n:
        raise ConfigError(f"{key}: expected 1 or {n} values, got {len(values)}")
    return values


def _lindblad_system(cfg) -> MultiQubitSystem:
    freqs = cfg["qubit_mhz"]
    n = len(freqs)
    if not 1 <= n <= 3:
        raise ConfigError("qubit_mhz: between 1 and 3 qubits are supported")
    gw = _per_qubit(cfg["gamma_wg_mhz"], n, "gamma_wg_mhz")
    gi = _per_qubit(cfg["gamma_int_mhz"], n, "gamma_int_mhz")
    x = _per_qubit(cfg["x_mm"], n, "x_mm")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    G = np.zeros((n, n))
    if cfg["direct_mhz"]:
        if len(cfg["direct_mhz"]) != len(pairs):
            raise ConfigError(f"direct_mhz: expected {len(pairs)} values for {n} qubits")
        for (i, j), v in zip(pairs, cfg["direct_mhz"]):
            G[i, j] = G[j, i] = mhz(v)
    return MultiQubitSystem.from_rates(
        mhz(np.array(freqs)), mhz(np.array(gw)), x=np.array(x) * 1e-3, gamma_internal=mhz(np.array(gi)), direct=G, speed=cfg["speed_mm_per_ns"] * 1e-3
    )


def _initial_state(label: str, n: int):
    if label == "ground":
        return None
    if label in ("bright", "dark"):
        if n != 2:
            raise ConfigError("initial: bright and dark states need exactly two qubits")
        return bright_state() if label == "bright" else dark_state()
    if len(label) == n and set(label) <= {"0", "1"}:
        return basis_state(label)
    raise ConfigError(f"initial: {label!r} is not ground, bright, dark or a {n}-bit string")


def cmd_lindblad_run(cfg, out: Outputs, prefix: str = "lindblad"):
    system = _lindblad_system(cfg)
    w_d = system.omegas[0] + mhz(cfg["drive_detuning_mhz"])
    if not cfg["t_stop_ns"] > cfg["t_start_ns"]:
        raise ConfigError("t_stop_ns must exceed t_start_ns")
    drive = DrivePulse(cfg["alpha"], w_d, cfg["t_start_ns"], cfg["t_stop_ns"], cfg["edge_ns"])
    times = _time_grid(cfg["t_start_ns"], cfg["t_end_ns"], cfg["dt_ns"])
    traj = integrate_master_equation(system, drive, times, _initial_state(cfg["initial"], system.n), rtol=cfg["rtol"])
    a_out = output_field(traj, system)
    if cfg["csv"]:
        path = out.dir / f"{prefix}_trajectory.csv"
        traj.to_csv(path)
        out.written.append(path)
    out.write(f"{prefix}_a_out.csv", a_out.to_csv())
    series = [("|a_out|", a_out)]
    if cfg["kappa_mhz"] > 0:
        filt = FilterParams(mhz(cfg["center_mhz"]), mhz(cfg["kappa_mhz"]), _gain(cfg["gain_db"]), cfg["noise_sigma"], cfg["seed"])
        a_amp = filter_apply(a_out, filt)
        out.write(f"{prefix}_a_amp.csv", a_amp.to_csv())
        series.append(("|a_amp|", a_amp))
    out.write(f"{prefix}.svg", _trace_svg(series))
    out.json(
        f"{prefix}.json",
        {
            "max_trace_error": traj.max_trace_error,
            "max_hermiticity_error": traj.max_hermiticity_error,
            "min_eigenvalue": traj.min_eigenvalue,
            "final_bloch": [bloch_trajectory(traj, i)[-1].tolist() for i in range(system.n)],
            "n_qubits": system.n,
        },
    )
    return traj, a_out


def cmd_filter(cfg, out: Outputs, prefix: str = "filtered"):
    trace = ComplexTrace.from_csv(Path(cfg["input"]))
    filt = FilterParams(mhz(cfg["center_mhz"]), mhz(cfg["kappa_mhz"]), _gain(cfg["gain_db"]), cfg["noise_sigma"], cfg["seed"])
    y = filter_apply(trace, filt, prefill=cfg["prefill"])
    out.write(f"{prefix}.csv", y.to_csv())
    out.write(f"{prefix}.svg", _trace_svg([("|input|", trace), ("|output|", y)]))


def _to_internal_value(name: str, value: float) -> float:
    if name in ("gamma", "kappa", "delta_qd", "delta_da"):
        return float(mhz(value))
    if name == "gain":
        return _gain(value)
    return float(value)


def _fit_setup(cfg, exclude=()):
    free = list(cfg["free"])
    fixed, initial, bounds = {}, {}, {}
    for name, (key, _) in _FIT_KEYS.items():
        if name in exclude:
            continue
        v = cfg[key]
        if v is not None:
            (initial if name in free else fixed)[name] = _to_internal_value(name, v)
        b = cfg[f"bounds_{key}"]
        if b is not None:
            if len(b) != 2:
                raise ConfigError(f"bounds_{key}: expected lo,hi")
            bounds[name] = tuple(_to_internal_value(name, x) for x in b)
    return free, fixed, initial, bounds


def cmd_fit(cfg, out: Outputs, prefix: str = "fit"):
    data = ComplexTrace.from_csv(Path(cfg["data"]))
    free, fixed, initial, bounds = _fit_setup(cfg)
    problem = FitProblem(data, free, fixed, initial, bounds, magnitude_only=cfg["magnitude_only"], frequency_unit=cfg["frequency_unit"])
    result = fit(problem, max_iter=cfg["max_iter"], n_starts=cfg["n_starts"], seed=cfg["seed"])
    out.write(f"{prefix}.json", result.to_json())
    model = detuned_fit_model(result.params, data.times)
    out.write(f"{prefix}_residual.csv", data.with_samples(data.samples - model.samples).to_csv())
    out.write(f"{prefix}.svg", _trace_svg([("|data|", data), ("|model|", model)]))
    return result


def cmd_fit_portrait(cfg, out: Outputs, prefix: str = "fit_portrait"):
    grid = PortraitGrid.from_csv(Path(cfg["data"]))
    free, fixed, initial, _ = _fit_setup(cfg, exclude=("delta_da",))
    results = fit_portrait(
        grid, fixed, free, initial, magnitude_only=cfg["magnitude_only"], workers=cfg["workers"], low_confidence_factor=cfg["low_confidence_factor"], max_iter=cfg["max_iter"]
    )
    out.json(f"{prefix}.json", [dict(r.to_dict(), detuning=float(d)) for d, r in zip(grid.detunings, results)])
    vals, errs = detuning_map(results)
    rows = ["detuning_mhz,delta_qd_mhz,stderr_mhz,converged,low_confidence"]
    for d, v, e, r in zip(grid.detunings, vals, errs, results):
        rows.append(f"{ordinary_frequency(d):.12g},{ordinary_frequency(v):.12g},{ordinary_frequency(e):.12g},{int(r.converged)},{int(r.low_confidence)}")
    out.write("detuning_map.csv", "\n".join(rows) + "\n")
    out.write(f"{prefix}.svg", export_svg_lines([("delta_qd", ordinary_frequency(grid.detunings), ordinary_frequency(vals))], xlabel="filter - drive (MHz)", ylabel="delta_qd (MHz)"))
    return results


def cmd_kernel_check(cfg, out: Outputs, prefix: str = "kernel"):
    geom = WaveguideGeometry(cfg["a_mm"] * 1e-3, cfg["b_mm"] * 1e-3, cfg["eps_r"])
    dipole = DipoleConfig(1.0)
    w_q = mhz(cfg["qubit_mhz"])
    gamma = mhz(cfg["gamma_mhz"])
    pref = prefactor_for_rate(geom, dipole, w_q, gamma) if gamma > 0 else 0.0
    dt = cfg["dt_ns"]
    dw = None if cfg["d_omega_mhz"] is None else mhz(cfg["d_omega_mhz"])
    trace = kernel_decay_check(geom, dipole, w_q, cfg["t_max_ns"], dt=dt, d_omega=dw, window=cfg["window"], markov=cfg["markov"], prefactor=pref)
    out.write(f"{prefix}.csv", trace.to_csv())
    ref = trace.with_samples(np.exp(-0.5 * gamma * trace.times))
    out.write(f"{prefix}.svg", _trace_svg([("|c_e|", trace), ("exp(-gamma t/2)", ref)]))
    summary = {"gamma_rad_per_ns": gamma, "cutoff_mhz": ordinary_frequency(cutoff_frequency(geom))}
    if gamma > 0:
        slope = decay_slope(trace, 0.25 * trace.t_end, trace.t_end)
        summary.update(
            slope=slope,
            expected_slope=-gamma / 2,
            slope_ratio=slope / (-gamma / 2),
            exponential_deviation=exponential_deviation(trace, gamma),
            distance_from_cutoff_in_gamma=(w_q - cutoff_frequency(geom)) / gamma,
        )
    out.json(f"{prefix}.json", summary)
    return trace


# -- demo presets --------------------------------------------------------------


def _defaults(command: str, **over) -> dict:
    cfg = {o.key: o.default for o in options_for(command)}
    cfg.update(over)
    return cfg


def _demo_fig1a(base, out):
    cmd_ww_portrait(_defaults("ww-portrait", **base), out, prefix="fig1a")


def _strong_alpha(gamma_mhz=1.5, beta=1.0):
    # alpha^2 beta gamma = gamma^2
    return math.sqrt(mhz(gamma_mhz) / beta)


def _demo_fig3(base, out, center_mhz, prefix):
    cfg = _defaults("analytic-trace", **base)
    cfg.update(alpha=_strong_alpha(), delta_da_mhz=-center_mhz, t_start_ns=-200.0, t_end_ns=1000.0)
    trace = cmd_analytic_trace(cfg, out, prefix=prefix)
    config = _driven_config(cfg, cfg["delta_da_mhz"])
    raw = unfiltered_output(config, trace.times)
    out.write(f"{prefix}_unfiltered.csv", raw.to_csv())


def _demo_fig4(base, out, gamma_mhz, prefix):
    cfg = _defaults("analytic-portrait", **base)
    cfg.update(gamma_mhz=gamma_mhz, alpha=_strong_alpha(), t_start_ns=-200.0, t_end_ns=1000.0, dt_ns=4.0)
    grid = cmd_analytic_portrait(cfg, out, prefix=f"{prefix}_input_output")
    model = WWModel(0.0, mhz(gamma_mhz))
    filt = FilterParams(0.0, mhz(cfg["kappa_mhz"]))
    ww = ww_filtered_portrait(model, filt, grid.detunings, grid.times).normalized()
    out.write(f"{prefix}_wigner_weisskopf.csv", ww.to_csv())
    out.write(f"{prefix}_wigner_weisskopf.svg", export_svg_heatmap(_display_grid(ww), title="filtered WW"))


def _demo_fig8(base, out, with_qubit: bool, prefix: str):
    cfg = _defaults("lindblad-run", **base)
    cfg.update(alpha=_strong_alpha(), dt_ns=2.0, t_end_ns=1000.0, csv=False, json=False, svg=False)
    centers = np.linspace(-10.0, 10.0, 21)
    if with_qubit:
        system = _lindblad_system(cfg)
        drive = DrivePulse(cfg["alpha"], system.omegas[0], cfg["t_start_ns"], cfg["t_stop_ns"])
        times = _time_grid(cfg["t_start_ns"], cfg["t_end_ns"], cfg["dt_ns"])
        traj = integrate_master_equation(system, drive, times)
        a_out = output_field(traj, system)
    else:
        times = _time_grid(cfg["t_start_ns"], cfg["t_end_ns"], cfg["dt_ns"])
        env = DrivePulse(cfg["alpha"], 0.0, cfg["t_start_ns"], cfg["t_stop_ns"]).envelope(times)
        a_out = ComplexTrace(times[0], times[1] - times[0], env.astype(complex))
    rows = [filter_apply(a_out, FilterParams(mhz(c), mhz(2.5), seed=base["seed"]), noise_stream=i) for i, c in enumerate(centers)]
    grid = PortraitGrid.from_rows(mhz(centers), rows).normalized()
    out.write(f"{prefix}.csv", grid.to_csv())
    out.write(f"{prefix}_a_out.csv", a_out.to_csv())
    out.write(f"{prefix}.svg", export_svg_heatmap(_display_grid(grid), title="|a_amp| during and after the pulse"))


DEMOS: dict[str, Callable] = {
    "fig1a": _demo_fig1a,
    "fig3a": lambda b, o: _demo_fig3(b, o, 0.0, "fig3a"),
    "fig3b": lambda b, o: _demo_fig3(b, o, 17.0, "fig3b"),
    "fig4b": lambda b, o: _demo_fig4(b, o, 1.5, "fig4b"),
    "fig4d": lambda b, o: _demo_fig4(b, o, 3.0, "fig4d"),
    "fig8a": lambda b, o: _demo_fig8(b, o, True, "fig8a"),
    "fig8b": lambda b, o: _demo_fig8(b, o, False, "fig8b"),
}


def cmd_demo(cfg, out: Outputs):
    name = cfg["name"]
    if not name.startswith("fig") and name != "all":
        name = "fig" + name
    base = {k: cfg[k] for k in ("out", "seed", "workers", "csv", "json", "svg")}
    for key in DEMOS if name == "all" else [name]:
        DEMOS[key](base, out)


COMMANDS = {
    "ww-portrait": cmd_ww_portrait,
    "analytic-trace": cmd_analytic_trace,
    "analytic-portrait": cmd_analytic_portrait,
    "lindblad-run": cmd_lindblad_run,
    "filter": cmd_filter,
    "fit": cmd_fit,
    "fit-portrait": cmd_fit_portrait,
    "kernel-check": cmd_kernel_check,
    "demo": cmd_demo,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Execute one subcommand; returns the process exit code."""
    try:
        ns = build_parser().parse_args(argv)
        cfg = resolve(ns.command, ns)
        out = Outputs(cfg)
        with np.errstate(all="ignore"):
            COMMANDS[ns.command](cfg, out)
    except (IntegratorFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    for path in out.written:
        print(path)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
