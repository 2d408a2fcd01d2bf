"""Driven, dissipative Jaynes-Cummings model in the frame rotating at the laser.

All frequencies and rates are in units of the coupling ``g`` and times in
units of ``1/g`` unless a docstring says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .qspace import EXCITED, GROUND, Operators, SpaceDescriptor, build_operators

NORM_TOL = 1e-9


@dataclass(frozen=True)
class SystemParams:
    """Model parameters in units of ``g``.

    ``delta`` is the cavity-emitter detuning ``w_a - w_sigma`` and
    ``omega_L_detuning`` the laser detuning ``w_L - w_a``.
    """

    gamma_a: float = 0.1
    gamma_sigma: float = 0.01
    delta: float = -60.0
    omega: float = 0.0
    omega_L_detuning: float = 0.0
    g: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.gamma_a <= 0:
            raise ValueError(f"gamma_a must be > 0, got {self.gamma_a}")
        if self.gamma_sigma < 0:
            raise ValueError(f"gamma_sigma must be >= 0, got {self.gamma_sigma}")
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.g < 0:
            raise ValueError(f"g must be >= 0, got {self.g}")

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def on_dressed_resonance(self, N: int) -> "SystemParams":
        """Copy with the laser placed on the dressed-atom resonance ``C_N``."""
        return replace(self, omega_L_detuning=resonance_dressed(N, self.omega, self.delta))

    def as_dict(self) -> dict:
        return asdict(self)


def _kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n, m = A.shape[0], B.shape[0]
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(n * m, n * m)


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation: ``vec(rho)[i + j*d] = rho[i, j]``."""
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    if dim is None:
        dim = math.isqrt(v.size)
    return np.asarray(v).reshape(dim, dim, order="F")


def hamiltonian(params: SystemParams, space: SpaceDescriptor,
                ops: Operators | None = None) -> np.ndarray:
    """Time-independent Hamiltonian in the frame rotating at ``w_L``.

    ``H = (w_a-w_L) a^+a + (w_s-w_L) s^+s + g(a^+s + s^+a) + Omega(s + s^+)``
    """
    ops = ops or build_operators(space)
    cavity = -params.omega_L_detuning
    emitter = -params.delta - params.omega_L_detuning
    coupling = ops.ad @ ops.sigma
    H = (cavity * ops.num + emitter * ops.num_sigma
         + params.g * (coupling + coupling.conj().T)
         + params.omega * (ops.sigma + ops.sd))
    return H


def collapse_operators(params: SystemParams, space: SpaceDescriptor,
                       ops: Operators | None = None) -> list[tuple[float, np.ndarray]]:
    """``(rate, jump operator)`` pairs for cavity and emitter decay."""
    ops = ops or build_operators(space)
    return [(params.gamma_a, ops.a), (params.gamma_sigma, ops.sigma)]


def effective_hamiltonian(params: SystemParams, space: SpaceDescriptor,
                          ops: Operators | None = None) -> np.ndarray:
    """``H - (i/2) sum_c gamma_c c^+c``, the no-jump generator."""
    ops = ops or build_operators(space)
    H = hamiltonian(params, space, ops)
    return H - 0.5j * (params.gamma_a * ops.num + params.gamma_sigma * ops.num_sigma)


def liouvillian(params: SystemParams, space: SpaceDescriptor,
                ops: Operators | None = None) -> np.ndarray:
    """Lindblad generator as a ``dim**2 x dim**2`` matrix acting on ``vec(rho)``.

    Uses ``vec(A X B) = (B^T kron A) vec(X)`` so that
    ``L = I kron K + conj(K) kron I + sum_c gamma_c conj(c) kron c`` with
    ``K = -i H_eff``.
    """
    ops = ops or build_operators(space)
    K = -1j * effective_hamiltonian(params, space, ops)
    eye = np.eye(space.dim)
    L = _kron(eye, K) + _kron(K.conj(), eye)
    for rate, c in collapse_operators(params, space, ops):
        if rate:
            L += rate * _kron(c.conj(), c)
    return L


def apply_liouvillian(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return unvec(L @ vec(rho), rho.shape[0])


def resonance_ladder(N: int, g: float = 1.0, delta: float = -60.0) -> float:
    """Laser detuning ``w_L - w_a`` that drives the ``(N+1)``-th rung at low pump."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be an integer >= 1, got {N!r}")
    n = N + 1
    return (math.sqrt(4 * n * g**2 + delta**2) - delta) / (2 * n)


def resonance_dressed(N: int, omega: float, delta: float = -60.0) -> float:
    """Laser detuning of the ``N``-photon resonance of the laser-dressed emitter.

    ``N = 1`` uses the closed-form limit, valid only for ``delta != 0``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be an integer >= 1, got {N!r}")
    if N == 1:
        if delta == 0:
            raise ValueError("N=1 dressed resonance requires delta != 0 (dispersive regime)")
        return -(2 * omega**2 + delta**2 / 2) / delta
    m = N * N - 1
    return (math.sqrt(4 * m * omega**2 + N * N * delta**2) + delta) / m


def evolve_closed(psi0: np.ndarray, H: np.ndarray, t_grid) -> np.ndarray:
    """Populations ``|<k|psi(t)>|^2`` under ``exp(-iHt)``, shape ``(len(t), dim)``.

    ``H`` must be Hermitian; the propagator is built from its eigenbasis.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    norm = np.vdot(psi0, psi0).real
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"initial state not normalised (|psi|^2 = {norm:.12g})")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be a 1-D ascending sequence")
    E, V = np.linalg.eigh(H)
    coeffs = V.conj().T @ psi0
    psi_t = V @ (np.exp(-1j * np.outer(E, t)) * coeffs[:, None])
    pops = np.abs(psi_t.T) ** 2
    drift = np.max(np.abs(pops.sum(axis=1) - 1.0)) if t.size else 0.0
    if drift > NORM_TOL:
        raise RuntimeError(f"norm drift {drift:.3g} exceeds {NORM_TOL}")
    return pops


def _pair_gap(params: SystemParams, space: SpaceDescriptor, ops: Operators,
              N: int, detuning: float) -> float:
    H = hamiltonian(params.with_(omega_L_detuning=detuning), space, ops)
    E, V = np.linalg.eigh(H)
    i0, i1 = space.index(0, GROUND), space.index(N, EXCITED)
    weight = np.abs(V[i0]) ** 2 + np.abs(V[i1]) ** 2
    j, k = np.argsort(weight)[-2:]
    return abs(E[j] - E[k])


def closed_resonance(params: SystemParams, space: SpaceDescriptor, N: int,
                     ops: Operators | None = None) -> tuple[float, float]:
    """Locate the exact ``|0g> <-> |Ne>`` anticrossing of the driven closed system.

    The laser shifts both states (AC Stark effect) by an amount that scales
    as ``Omega**2`` while the multiphoton coupling scales as ``Omega**(N+1)``,
    so the low-pump ladder formula misses the resonance by far more than its
    width.  The search is centred on the ladder formula plus the pump shift
    of the dressed-atom formula.

    Returns ``(omega_L_detuning, splitting)``; the Rabi period is
    ``2*pi/splitting``.
    """
    ops = ops or build_operators(space)
    centre = resonance_ladder(N, params.g, params.delta)
    if N >= 2:
        centre += (resonance_dressed(N, params.omega, params.delta)
                   - resonance_dressed(N, 0.0, params.delta))
    half = max(0.1 * abs(centre - resonance_ladder(N, params.g, params.delta)), 1e-4)
    res = minimize_scalar(lambda x: _pair_gap(params, space, ops, N, x),
                          bounds=(centre - half, centre + half), method="bounded",
                          options={"xatol": 1e-14, "maxiter": 500})
    return float(res.x), float(res.fun)
