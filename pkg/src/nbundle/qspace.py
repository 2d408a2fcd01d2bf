"""Truncated cavity x two-level-emitter Hilbert space and its operators.

Basis ordering is photon-major, emitter-minor: the state ``|n, s>`` sits at
index ``2*n + s`` with ``s = 0`` (ground) or ``s = 1`` (excited).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GROUND = 0
EXCITED = 1

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True)
class SpaceDescriptor:
    """Cavity Fock space cut at ``n_max`` photons, tensored with a qubit."""

    n_max: int

    @property
    def dim(self) -> int:
        return 2 * (self.n_max + 1)

    def index(self, n: int, s: int) -> int:
        if not 0 <= n <= self.n_max or s not in (GROUND, EXCITED):
            raise ValueError(f"state |{n},{s}> outside the truncated space")
        return 2 * n + s

    def label(self, i: int) -> tuple[int, int]:
        """Inverse of :meth:`index`: ``(n, s)`` for basis index ``i``."""
        if not 0 <= i < self.dim:
            raise ValueError(f"basis index {i} outside 0..{self.dim - 1}")
        return divmod(i, 2)

    def labels(self) -> list[str]:
        return [f"{n}{'ge'[s]}" for n, s in map(self.label, range(self.dim))]

    def basis_state(self, n: int, s: int) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(n, s)] = 1.0
        return psi


@dataclass(frozen=True)
class Operators:
    a: np.ndarray
    sigma: np.ndarray

    @property
    def ad(self) -> np.ndarray:
        return self.a.conj().T

    @property
    def sd(self) -> np.ndarray:
        return self.sigma.conj().T

    @property
    def num(self) -> np.ndarray:
        return self.ad @ self.a

    @property
    def num_sigma(self) -> np.ndarray:
        return self.sd @ self.sigma


def build_space(n_max: int) -> SpaceDescriptor:
    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"n_max must be an integer >= 1, got {n_max!r}")
    return SpaceDescriptor(int(n_max))


def build_operators(space: SpaceDescriptor) -> Operators:
    """Cavity annihilation ``a`` and emitter lowering ``sigma`` on ``space``."""
    n = space.n_max + 1
    a_photon = np.diag(np.sqrt(np.arange(1, n)), k=1)
    lower = np.array([[0.0, 1.0], [0.0, 0.0]])
    a = np.kron(a_photon, np.eye(2)).astype(complex)
    sigma = np.kron(np.eye(n), lower).astype(complex)
    a.setflags(write=False)
    sigma.setflags(write=False)
    return Operators(a, sigma)


def expectation(rho: np.ndarray, op: np.ndarray) -> complex:
    """Return ``Tr(op @ rho)``."""
    rho = np.asarray(rho)
    op = np.asarray(op)
    if rho.shape != op.shape or rho.ndim != 2:
        raise ValueError(f"dimension mismatch: rho {rho.shape} vs operator {op.shape}")
    # Tr(O rho) = sum_ij O_ij rho_ji
    return complex(np.sum(op * rho.T))


def pure_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITICITY_TOL:
        raise ValueError(f"density matrix not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr:.12g} != 1")
    lam_min = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam_min < -POSITIVITY_TOL:
        raise ValueError(f"density matrix not positive (min eigenvalue {lam_min:.3g})")


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of ``rho - sigma``."""
    diff = np.asarray(rho) - np.asarray(sigma)
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
