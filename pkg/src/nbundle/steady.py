"""Steady state of the Liouvillian and ensemble-averaged photon correlations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .model import SystemParams, liouvillian, unvec, vec
from .qspace import Operators, SpaceDescriptor, build_operators, build_space, check_density_matrix

RESIDUAL_TOL = 1e-10
LEAKAGE_RATIO = 1e-8
DEFAULT_TAU_POINTS = 400
DEFAULT_TAU_MAX = 10.0  # units of 1/gamma_a


class NonUniqueSteadyState(RuntimeError):
    """The Liouvillian kernel is more than one-dimensional."""


class UndefinedCorrelation(ValueError):
    """A correlation function was requested for a vanishing denominator."""


class TruncationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class CorrelationSeries:
    tau: np.ndarray          # delays, units of 1/gamma_a
    values: np.ndarray
    kind: str
    normalization: float
    stderr: np.ndarray | None = None
    counts: np.ndarray | None = None

    def __len__(self):
        return len(self.tau)


@lru_cache(maxsize=32)
def _ops(n_max: int) -> Operators:
    return build_operators(build_space(n_max))


def ops_for(rho: np.ndarray) -> Operators:
    dim = rho.shape[0]
    if dim % 2 or dim < 4:
        raise ValueError(f"dimension {dim} is not that of a cavity x qubit space")
    return _ops(dim // 2 - 1)


def steady_state(L: np.ndarray, check: bool = True) -> np.ndarray:
    """Solve ``L vec(rho) = 0`` with ``Tr rho = 1`` replacing the first equation."""
    dim2 = L.shape[0]
    dim = int(round(dim2 ** 0.5))
    A = np.array(L, dtype=complex, copy=True)
    A[0, :] = vec(np.eye(dim))
    b = np.zeros(dim2, dtype=complex)
    b[0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            x = scipy.linalg.solve(A, b, check_finite=False)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise NonUniqueSteadyState(
                "steady state is not unique: the trace-constrained system is singular "
                f"({exc})") from None
    rho = unvec(x, dim)
    rho = 0.5 * (rho + rho.conj().T)
    residual = np.max(np.abs(L @ vec(rho)))
    if residual > RESIDUAL_TOL:
        raise NonUniqueSteadyState(f"steady-state residual {residual:.3g} exceeds {RESIDUAL_TOL}")
    if check:
        check_density_matrix(rho)
    return rho


def solve(params: SystemParams, space: SpaceDescriptor) -> tuple[np.ndarray, np.ndarray]:
    """Convenience: ``(L, rho_ss)`` for a parameter point."""
    L = liouvillian(params, space)
    return L, steady_state(L)


def fock_populations(rho: np.ndarray) -> np.ndarray:
    """Photon-number distribution, emitter traced out."""
    return np.real(np.diag(rho)).reshape(-1, 2).sum(axis=1)


def check_truncation(rho: np.ndarray, n_a: float | None = None) -> float:
    """Warn when the top Fock level holds more than ``1e-8 * n_a``; return its population."""
    top = fock_populations(rho)[-1]
    if n_a is None:
        n_a = float(np.real(np.sum(ops_for(rho).num * rho.T)))
    if top > LEAKAGE_RATIO * n_a:
        warnings.warn(f"truncation leakage: top Fock level holds {top:.3g} "
                      f"(> {LEAKAGE_RATIO:g} * n_a = {LEAKAGE_RATIO * n_a:.3g}); "
                      "increase n_max", TruncationWarning, stacklevel=2)
    return float(top)


def _moment(rho: np.ndarray, op: np.ndarray) -> float:
    return float(np.real(np.sum(op * rho.T)))


def photon_number(rho: np.ndarray, check: bool = True) -> float:
    n_a = _moment(rho, ops_for(rho).num)
    if check:
        check_truncation(rho, n_a)
    return n_a


def emitter_population(rho: np.ndarray) -> float:
    return _moment(rho, ops_for(rho).num_sigma)


def normal_moment(rho: np.ndarray, n: int) -> float:
    """``<a^+^n a^n>``."""
    an = np.linalg.matrix_power(ops_for(rho).a, n)
    return _moment(rho, an.conj().T @ an)


def glauber_gn(rho: np.ndarray, n: int) -> float:
    """Zero-delay normalised correlation ``<a^+^n a^n> / <a^+a>^n``."""
    if n < 2:
        raise ValueError(f"correlation order must be >= 2, got {n}")
    n_a = normal_moment(rho, 1)
    if n_a <= 0:
        raise UndefinedCorrelation("g^(n) undefined for zero cavity population")
    return normal_moment(rho, n) / n_a**n


def bundle_gn_zero(rho: np.ndarray, n: int, N: int) -> float:
    """Equal-time bundle correlation: ``n`` bundles of ``N`` photons each.

    Builds the numerator from ``n`` explicit products of ``a^N`` so that, at
    ``N = 1``, it is an independent route to :func:`glauber_gn`.
    """
    a = ops_for(rho).a
    aN = np.linalg.matrix_power(a, N)
    left = np.eye(a.shape[0], dtype=complex)
    for _ in range(n):
        left = left @ aN
    den = _moment(rho, aN.conj().T @ aN)
    if den <= 0:
        raise UndefinedCorrelation(f"<a^+^{N} a^{N}> vanishes")
    return _moment(rho, left.conj().T @ left) / den**n


def default_tau_grid() -> np.ndarray:
    return np.linspace(0.0, DEFAULT_TAU_MAX, DEFAULT_TAU_POINTS)


def propagate(L: np.ndarray, v0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """``exp(L t) v0`` on an ascending grid; one exponential per distinct spacing."""
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ValueError("propagation grid must be ascending and non-negative")
    cache: dict[float, np.ndarray] = {}

    def step(h):
        key = round(h, 12)
        if key not in cache:
            cache[key] = scipy.linalg.expm(L * h)
        return cache[key]

    out = np.empty((times.size, v0.size), dtype=complex)
    v, t = np.asarray(v0, dtype=complex), 0.0
    for i, ti in enumerate(times):
        if ti > t:
            v = step(ti - t) @ v
            t = ti
        out[i] = v
    return out


def bundle_g2_tau(L: np.ndarray, rho_ss: np.ndarray, N: int, gamma_a: float,
                  tau_grid=None) -> CorrelationSeries:
    """Two-bundle correlation ``g^(2)_N(tau)`` from the quantum regression theorem.

    ``tau_grid`` is in units of ``1/gamma_a``; ``L`` is in units of ``g``.
    """
    if N < 1:
        raise ValueError(f"bundle size must be >= 1, got {N}")
    tau = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    aN = np.linalg.matrix_power(ops_for(rho_ss).a, N)
    num = aN.conj().T @ aN
    den = _moment(rho_ss, num)
    if den <= 0:
        raise UndefinedCorrelation(f"<a^+^{N} a^{N}> vanishes in the steady state")
    conditional = vec(aN @ rho_ss @ aN.conj().T)
    states = propagate(L, conditional, tau / gamma_a)
    # Tr(num X) = sum_ij num_ij X_ji = vec(num^T) . vec(X)
    values = np.real(states @ vec(num.T)) / den**2
    return CorrelationSeries(tau, values, f"g2_N{N}", den)


def conditional_traces(L: np.ndarray, rho_ss: np.ndarray, N: int, gamma_a: float,
                       tau_grid) -> np.ndarray:
    """``Tr[exp(L tau)(a^N rho a^+^N)]`` over ``tau``; constant for a Lindblad flow."""
    aN = np.linalg.matrix_power(ops_for(rho_ss).a, N)
    dim = rho_ss.shape[0]
    states = propagate(L, vec(aN @ rho_ss @ aN.conj().T), np.asarray(tau_grid) / gamma_a)
    return np.real(states @ vec(np.eye(dim)))


def observables(params: SystemParams, space: SpaceDescriptor,
                orders=(2, 3, 4, 5)) -> dict:
    """Steady-state ``n_a``, ``n_sigma`` and ``g^(n)(0)`` for one parameter point."""
    _, rho = solve(params, space)
    n_a = photon_number(rho)
    out = {"n_a": n_a, "n_sigma": emitter_population(rho)}
    for n in orders:
        out[f"g{n}"] = normal_moment(rho, n) / n_a**n if n_a > 0 else float("nan")
    return out
