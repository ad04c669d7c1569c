"""Joint qubit-motion states and the two-qubit figures of merit.

Qubit ordering is |q_j q_k> with flat index ``2*q_j + q_k``; |0> is index 0.
Motional modes follow the qubits in the tensor product, target mode first.
"""

from __future__ import annotations

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

BELL_PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, None or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def basis_state(label: str) -> np.ndarray:
    """Two-qubit computational state from a label such as ``"00"``."""
    if len(label) != 2 or set(label) - {"0", "1"}:
        raise ValueError(f"bad two-qubit label {label!r}")
    v = np.zeros(4, dtype=complex)
    v[int(label, 2)] = 1.0
    return v


def thermal_weights(nbar: float, tol: float = 1e-6) -> np.ndarray:
    """Fock weights of a thermal state, truncated at cumulative weight 1 - tol."""
    if nbar < 0:
        raise ValueError("nbar must be non-negative")
    if nbar == 0:
        return np.ones(1)
    r = nbar / (1.0 + nbar)
    # tail beyond n is r^(n+1)
    nmax = int(np.ceil(np.log(tol) / np.log(r))) - 1
    p = (1.0 - r) * r ** np.arange(max(nmax, 0) + 1)
    return p / p.sum()


def as_density(state) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


def bell_fidelity(rho: np.ndarray) -> float:
    """Phase-optimized overlap with (|00> + e^{i phi}|11>)/sqrt(2)."""
    return float(0.5 * (rho[0, 0].real + rho[3, 3].real) + abs(rho[0, 3]))


def populations(rho: np.ndarray) -> np.ndarray:
    return np.real(np.diag(rho)).copy()


def parity(rho: np.ndarray) -> float:
    p = populations(rho)
    return float(p[0] - p[1] - p[2] + p[3])


def analysis_rotation(phase: float, angle: float = np.pi / 2) -> np.ndarray:
    """Global rotation by ``angle`` about cos(phase) x + sin(phase) y on both qubits."""
    axis = np.cos(phase) * SIGMA_X + np.sin(phase) * SIGMA_Y
    r = np.cos(angle / 2) * ID2 - 1j * np.sin(angle / 2) * axis
    return np.kron(r, r)


def apply_unitary(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    return u @ rho @ u.conj().T


class JointState:
    """Two-qubit state tensored with truncated motional modes.

    Holds either a density operator ``rho`` over the full space, or an
    ensemble of (unnormalized) state vectors with classical weights.  A state
    with ``mode_cutoffs == ()`` is a bare two-qubit state (motion traced out).
    """

    def __init__(self, mode_cutoffs=(), rho=None, vectors=None, weights=None):
        self.mode_cutoffs = tuple(int(c) for c in mode_cutoffs)
        self.dim = 4 * int(np.prod(self.mode_cutoffs, dtype=int))
        if (rho is None) == (vectors is None):
            raise ValueError("give exactly one of rho or vectors")
        self.rho = None if rho is None else np.asarray(rho, dtype=complex)
        if vectors is not None:
            vectors = np.asarray(vectors, dtype=complex)
            if vectors.ndim == 1:
                vectors = vectors[:, None]
            if weights is None:
                weights = np.ones(vectors.shape[1])
            weights = np.asarray(weights, dtype=float)
            if vectors.shape != (self.dim, len(weights)):
                raise ValueError("vectors must be (dim, n_members)")
            self.vectors, self.weights = vectors, weights
        else:
            if self.rho.shape != (self.dim, self.dim):
                raise ValueError("rho has the wrong shape")
            self.vectors = self.weights = None

    @property
    def representation(self) -> str:
        return "density" if self.rho is not None else "ensemble"

    @classmethod
    def qubits(cls, state) -> "JointState":
        return cls((), rho=as_density(state))

    def _member_norms(self):
        return np.sum(np.abs(self.vectors) ** 2, axis=0)

    def trace(self) -> float:
        if self.rho is not None:
            return float(np.trace(self.rho).real)
        return float(np.sum(self.weights))

    def qubit_density(self) -> np.ndarray:
        """Reduced two-qubit density matrix, ensemble members normalized."""
        m = self.dim // 4
        if self.rho is not None:
            r = self.rho.reshape(4, m, 4, m)
            return np.einsum("imjm->ij", r)
        v = self.vectors.reshape(4, m, -1)
        w = self.weights / self._member_norms()
        return np.einsum("imb,jmb,b->ij", v, v.conj(), w)

    def populations(self) -> np.ndarray:
        return populations(self.qubit_density())

    def coherence(self) -> complex:
        return complex(self.qubit_density()[0, 3])

    def bell_fidelity(self) -> float:
        return bell_fidelity(self.qubit_density())

    def top_level_population(self) -> np.ndarray:
        """Population of the highest kept Fock level, one entry per mode."""
        out = []
        for i, c in enumerate(self.mode_cutoffs):
            shape = (4,) + self.mode_cutoffs
            if self.rho is not None:
                diag = np.real(np.diag(self.rho)).reshape(shape)
                total = diag.sum()
            else:
                diag = (np.abs(self.vectors) ** 2 * (self.weights / self._member_norms())).sum(axis=1)
                diag = diag.reshape(shape)
                total = self.weights.sum()
            out.append(float(np.take(diag, c - 1, axis=i + 1).sum() / total))
        return np.array(out)

    def is_physical(self, atol: float = 1e-9) -> bool:
        r = self.qubit_density()
        if abs(np.trace(r).real - self.trace()) > atol:
            return False
        if not np.allclose(r, r.conj().T, atol=atol):
            return False
        return bool(np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min() > -atol)
