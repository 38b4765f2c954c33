"""Driven N-qubit waveguide master equation with collective decay.

Basis ordering: qubit 1 is the leftmost tensor factor, ``|0> = |g>`` and
``|1> = |e>``, so ``|01>`` has qubit 2 excited.  Equations are solved in
the frame rotating at the drive frequency with an adaptive embedded
Runge-Kutta method on the vectorized density matrix.

Phase convention: the drive enters as ``eps_i sigma+_i + h.c.`` with
``eps_i = sqrt(gamma0_ii w / (2 w_i)) a_in exp(-i w t_i)`` and the output is
``a_out = a_in - i sum_i exp(i w_i t_i) sqrt(gamma0_ii / 2) <sigma-_i>``, so a
single qubit reproduces the coherence ``s`` of the input-output Bloch
equations exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .core import ComplexTrace, DrivePulse

MAX_QUBITS = 3

_SM = np.array([[0, 1], [0, 0]], dtype=complex)
_ID = np.eye(2, dtype=complex)


class IntegratorFailure(RuntimeError):
    """The integrated density matrix stopped being physical."""


def _embed(op: np.ndarray, i: int, n: int) -> np.ndarray:
    return reduce(np.kron, [op if k == i else _ID for k in range(n)])


def lowering_operators(n: int) -> list[np.ndarray]:
    return [_embed(_SM, i, n) for i in range(n)]


@dataclass(frozen=True)
class MultiQubitSystem:
    """Qubits along a waveguide.

    Frequencies and rates in rad/ns, positions in m, ``speed`` in m/ns,
    ``direct`` is the symmetric qubit-qubit coupling matrix in rad/ns.
    """

    omegas: np.ndarray
    g: np.ndarray
    x: np.ndarray
    gamma_internal: np.ndarray
    direct: np.ndarray
    speed: float = 0.299792458

    def __post_init__(self):
        om = np.atleast_1d(np.asarray(self.omegas, dtype=float))
        n = om.size
        if not 1 <= n <= MAX_QUBITS:
            raise ValueError(f"supported qubit count is 1..{MAX_QUBITS}, got {n}")
        g = np.broadcast_to(np.asarray(self.g, dtype=float), (n,)).copy()
        x = np.broadcast_to(np.asarray(self.x, dtype=float), (n,)).copy()
        gi = np.broadcast_to(np.asarray(self.gamma_internal, dtype=float), (n,)).copy()
        G = np.zeros((n, n)) if self.direct is None else np.asarray(self.direct, dtype=float).reshape(n, n)
        if np.any(g < 0) or np.any(gi < 0):
            raise ValueError("couplings and internal rates must be non-negative")
        if not np.allclose(G, G.T) or np.any(np.diag(G) != 0):
            raise ValueError("direct coupling must be symmetric with zero diagonal")
        if not self.speed > 0:
            raise ValueError("propagation speed must be positive")
        for name, val in (("omegas", om), ("g", g), ("x", x), ("gamma_internal", gi), ("direct", G)):
            object.__setattr__(self, name, val)

    @classmethod
    def from_rates(cls, omegas, gamma_wg, x=0.0, gamma_internal=0.0, direct=None, speed=0.299792458):
        """Build from radiative rates, using ``gamma0 = 4 pi g^2 omega``."""
        om = np.atleast_1d(np.asarray(omegas, dtype=float))
        gw = np.broadcast_to(np.asarray(gamma_wg, dtype=float), om.shape)
        return cls(om, np.sqrt(gw / (4 * np.pi * om)), x, gamma_internal, direct, speed)

    @property
    def n(self) -> int:
        return self.omegas.size

    @property
    def delays(self) -> np.ndarray:
        """Pairwise propagation times ``|x_i - x_j| / speed``."""
        return np.abs(self.x[:, None] - self.x[None, :]) / self.speed

    @property
    def radiative_rates(self) -> np.ndarray:
        return 4 * np.pi * self.g**2 * self.omegas


class Couplings(NamedTuple):
    exchange: np.ndarray
    decay: np.ndarray
    drive: np.ndarray


def collective_couplings(system: MultiQubitSystem, drive_omega: float | None = None) -> Couplings:
    """Waveguide-mediated exchange ``J``, decay matrix ``gamma`` and drive weights.

    ``J_ij = 2 pi g_i g_j w_i sin(w_i t_ij)``,
    ``gamma_ij = 4 pi g_i g_j w_i cos(w_i t_ij) + delta_ij gamma_internal_i``.
    ``drive[i]`` is ``eps_i`` per unit input amplitude; ``drive_omega``
    defaults to each qubit's own frequency.
    """
    w = system.omegas
    tij = system.delays
    gg = np.outer(system.g, system.g)
    J = 2 * np.pi * gg * w[:, None] * np.sin(w[:, None] * tij)
    gam = 4 * np.pi * gg * w[:, None] * np.cos(w[:, None] * tij) + np.diag(system.gamma_internal)
    wd = w if drive_omega is None else np.full_like(w, drive_omega)
    ti = system.x / system.speed
    eps = np.sqrt(system.radiative_rates * wd / (2 * w)) * np.exp(-1j * wd * ti)
    return Couplings(J, gam, eps)


def build_hamiltonian(
    system: MultiQubitSystem,
    a_in: complex,
    couplings: Couplings | None = None,
    frame_omega: float = 0.0,
) -> np.ndarray:
    """Hamiltonian (rad/ns) in the frame rotating at ``frame_omega`` for input amplitude ``a_in``."""
    c = collective_couplings(system) if couplings is None else couplings
    n = system.n
    sm = lowering_operators(n)
    dim = 2**n
    H = np.zeros((dim, dim), dtype=complex)
    for i in range(n):
        H += (system.omegas[i] - frame_omega) * sm[i].conj().T @ sm[i]
        drive = c.drive[i] * a_in * sm[i].conj().T
        H += drive + drive.conj().T
        for j in range(i + 1, n):
            hop = (c.exchange[i, j] + system.direct[i, j]) * sm[i] @ sm[j].conj().T
            H += hop + hop.conj().T
    return H


def _superop_left_right(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # row-major vec: vec(A rho B) = (A kron B^T) vec(rho)
    return np.kron(A, B.T)


def liouvillian(H: np.ndarray, decay: np.ndarray, sm: list[np.ndarray]) -> np.ndarray:
    """Superoperator of ``-i[H, rho] + sum_ij gamma_ij (s_i rho s_j^+ - {s_i^+ s_j, rho}/2)``.

    The decay matrix is symmetrized first so the generator preserves the trace.
    """
    dim = H.shape[0]
    eye = np.eye(dim, dtype=complex)
    L = -1j * (_superop_left_right(H, eye) - _superop_left_right(eye, H))
    gam = 0.5 * (decay + decay.T)
    n = len(sm)
    for i in range(n):
        for j in range(n):
            if gam[i, j] == 0:
                continue
            sd_j = sm[j].conj().T
            anti = sm[i].conj().T @ sm[j]
            L += gam[i, j] * (
                _superop_left_right(sm[i], sd_j)
                - 0.5 * _superop_left_right(anti, eye)
                - 0.5 * _superop_left_right(eye, anti)
            )
    return L


def basis_state(label: str) -> np.ndarray:
    """Computational state from a bit string, e.g. ``"01"``."""
    vec = reduce(np.kron, [np.eye(2, dtype=complex)[int(b)] for b in label])
    return vec


def bright_state() -> np.ndarray:
    return (basis_state("01") + basis_state("10")) / math.sqrt(2)


def dark_state() -> np.ndarray:
    return (basis_state("01") - basis_state("10")) / math.sqrt(2)


def as_density_matrix(state) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        state = state / np.linalg.norm(state)
        return np.outer(state, state.conj())
    return state


@dataclass
class Trajectory:
    times: np.ndarray
    sigma_minus: np.ndarray
    sigma_z: np.ndarray
    a_in: np.ndarray
    rho: np.ndarray | None = None
    max_trace_error: float = 0.0
    max_hermiticity_error: float = 0.0
    min_eigenvalue: float = 0.0
    stats: dict = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return self.sigma_minus.shape[1]

    def to_csv(self, path) -> None:
        """Write ``t_ns,re_s1,im_s1,z1,...`` with one row per recorded time."""
        cols = [self.times]
        header = ["t_ns"]
        for i in range(self.n_qubits):
            cols += [self.sigma_minus[:, i].real, self.sigma_minus[:, i].imag, self.sigma_z[:, i]]
            header += [f"re_s{i + 1}", f"im_s{i + 1}", f"z{i + 1}"]
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def integrate_master_equation(
    system: MultiQubitSystem,
    drive: DrivePulse | None,
    times,
    initial_state=None,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    store_rho: bool = False,
    method: str = "DOP853",
) -> Trajectory:
    """Integrate the master equation and record expectations on ``times``.

    The Hamiltonian is constant between pulse breakpoints and the solver is
    restarted at each one, so rectangular pulse edges are resolved exactly.
    Raised-cosine edges are integrated with the time-dependent envelope.

    Raises
    ------
    IntegratorFailure
        If a recorded state has an eigenvalue below -1e-6.
    """
    times = np.asarray(times, dtype=float)
    n = system.n
    dim = 2**n
    sm = lowering_operators(n)
    frame = drive.omega if drive is not None else 0.0
    coup = collective_couplings(system, drive_omega=drive.omega if drive is not None else None)
    H0 = build_hamiltonian(system, 0.0, coup, frame)
    L0 = liouvillian(H0, coup.decay, sm)
    if drive is not None:
        # drive term per unit input amplitude; scaled by the envelope below
        Hd = build_hamiltonian(system, 1.0, coup, frame) - H0
        eye = np.eye(dim)
        L1 = -1j * (_superop_left_right(Hd, eye) - _superop_left_right(eye, Hd))
    else:
        L1 = np.zeros_like(L0)

    rho0 = as_density_matrix(basis_state("0" * n) if initial_state is None else initial_state)
    if rho0.shape != (dim, dim):
        raise ValueError(f"initial state has shape {rho0.shape}, expected {(dim, dim)}")
    y = rho0.reshape(-1).astype(complex)

    cuts = [times[0]]
    if drive is not None:
        cuts += [b for b in drive.breakpoints() if times[0] < b < times[-1]]
    cuts.append(times[-1])
    cuts = sorted(set(cuts))

    states = np.empty((times.size, dim * dim), dtype=complex)
    recorded = np.zeros(times.size, dtype=bool)
    if times[0] == cuts[0]:
        states[0] = y
        recorded[0] = True
    nfev = 0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        env_mid = float(drive.envelope(mid)) if drive is not None else 0.0
        constant = drive is None or drive.edge == 0 or not _in_edge(drive, mid)
        if constant:
            L = L0 + env_mid * L1

            def rhs(t, v, L=L):
                return L @ v
        else:

            def rhs(t, v):
                return (L0 + float(drive.envelope(t)) * L1) @ v

        mask = (times > lo) & (times <= hi) & ~recorded
        t_eval = np.union1d(times[mask], [hi])
        sol = solve_ivp(rhs, (lo, hi), y, method=method, rtol=rtol, atol=atol, t_eval=t_eval)
        if not sol.success:
            raise IntegratorFailure(sol.message)
        nfev += sol.nfev
        if mask.any():
            states[mask] = sol.y.T[np.isin(t_eval, times[mask])]
            recorded |= mask
        y = sol.y[:, -1]

    rhos = states.reshape(times.size, dim, dim)
    traces = np.einsum("tii->t", rhos)
    herm = np.max(np.abs(rhos - np.conj(np.transpose(rhos, (0, 2, 1)))), axis=(1, 2))
    eigs = np.linalg.eigvalsh(0.5 * (rhos + np.conj(np.transpose(rhos, (0, 2, 1)))))
    min_eig = float(eigs.min())
    if min_eig < -1e-6:
        raise IntegratorFailure(f"density matrix lost positivity (eigenvalue {min_eig:.3g})")
    smx = np.stack([np.einsum("ij,tji->t", op, rhos) for op in sm], axis=1)
    sz_ops = [2 * op.conj().T @ op - np.eye(dim) for op in sm]
    szx = np.stack([np.real(np.einsum("ij,tji->t", op, rhos)) for op in sz_ops], axis=1)
    a_in = drive.envelope(times).astype(complex) if drive is not None else np.zeros(times.size, dtype=complex)
    return Trajectory(
        times=times,
        sigma_minus=smx,
        sigma_z=szx,
        a_in=a_in,
        rho=rhos if store_rho else None,
        max_trace_error=float(np.max(np.abs(traces - 1))),
        max_hermiticity_error=float(herm.max()),
        min_eigenvalue=min_eig,
        stats={"nfev": nfev},
    )


def _in_edge(drive: DrivePulse, t: float) -> bool:
    return (drive.t_start <= t < drive.t_start + drive.edge) or (drive.t_stop - drive.edge <= t < drive.t_stop)


def output_field(trajectory: Trajectory, system: MultiQubitSystem) -> ComplexTrace:
    """Waveguide output ``a_in - i sum_i exp(i w_i t_i) sqrt(gamma0_ii/2) <sigma-_i>``."""
    t = trajectory.times
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ValueError("output_field needs a uniform time grid")
    ti = system.x / system.speed
    weights = np.exp(1j * system.omegas * ti) * np.sqrt(system.radiative_rates / 2)
    vals = trajectory.a_in - 1j * trajectory.sigma_minus @ weights
    return ComplexTrace(t[0], dt, vals)


def bloch_trajectory(trajectory: Trajectory, qubit: int = 0) -> np.ndarray:
    """Rows ``(2 Re<s->, 2 Im<s->, <s_z>)`` for one qubit."""
    s = trajectory.sigma_minus[:, qubit]
    return np.column_stack([2 * s.real, 2 * s.imag, trajectory.sigma_z[:, qubit]])


class HybridizedStates(NamedTuple):
    bright: np.ndarray
    dark: np.ndarray
    bright_energy: float
    dark_energy: float


def hybridized_states(g: float) -> HybridizedStates:
    """Single-excitation eigenstates of ``g (s+_1 s-_2 + h.c.)``.

    The symmetric combination is bright and sits at ``+g``; the antisymmetric
    one is dark at ``-g``, so the energy order flips with the sign of ``g``.
    """
    sm = lowering_operators(2)
    H = g * (sm[0].conj().T @ sm[1] + sm[1].conj().T @ sm[0])
    b, d = bright_state(), dark_state()
    eb = float(np.real(b.conj() @ H @ b))
    ed = float(np.real(d.conj() @ H @ d))
    return HybridizedStates(b, d, eb, ed)


def transition_dipole(state, d: float = 1.0) -> float:
    """Dipole matrix element ``<00| d (s-_1 + s-_2) |state>`` of a two-qubit state."""
    sm = lowering_operators(2)
    vec = np.asarray(state, dtype=complex)
    return float(np.real(basis_state("00").conj() @ (d * (sm[0] + sm[1])) @ vec))


def radiative_rate(system: MultiQubitSystem, state) -> float:
    """Emission rate ``sum_ij gamma_ij <s+_i s-_j>`` of a pure state."""
    coup = collective_couplings(system)
    sm = lowering_operators(system.n)
    vec = np.asarray(state, dtype=complex)
    gam = 0.5 * (coup.decay + coup.decay.T) - np.diag(system.gamma_internal)
    return float(
        sum(
            gam[i, j] * np.real(vec.conj() @ sm[i].conj().T @ sm[j] @ vec)
            for i in range(system.n)
            for j in range(system.n)
        )
    )
