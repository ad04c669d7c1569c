"""Axial equilibrium, normal modes and Lamb-Dicke couplings of a linear ion chain.

Everything is solved in dimensionless units: lengths in units of
``l = (e^2 / (4 pi eps0 m wz^2))^(1/3)`` and energies in ``m wz^2 l^2``.  The
dimensionless single-ion potential is ``u^2/2 + q u^4/4`` with ``q`` the
quartic coefficient, and each pair of ions adds ``1/|u_i - u_j|``.

Ion and mode indices in the public API are 1-based, as in the lab notation
(ion 1 at the left end, mode 1 = center of mass).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .constants import (CA40_MASS, ELEMENTARY_CHARGE, HBAR, TWO_PI,
                        VACUUM_PERMITTIVITY, WAVEVECTOR_729)


class ConvergenceError(RuntimeError):
    """Raised when the equilibrium solver fails to reach its tolerance."""


@dataclass(frozen=True)
class TrapConfig:
    ion_count: int
    ion_mass: float
    com_frequency: float  # rad/s, harmonic axial frequency
    laser_wavevector: float = WAVEVECTOR_729  # 1/m, projection on the axis
    quartic_coefficient: float = 0.0

    def __post_init__(self):
        if int(self.ion_count) != self.ion_count or self.ion_count < 1:
            raise ValueError(f"ion_count must be a positive integer, got {self.ion_count}")
        if not self.ion_mass > 0:
            raise ValueError("ion_mass must be positive")
        if not self.com_frequency > 0:
            raise ValueError("com_frequency must be positive")
        if not self.laser_wavevector >= 0:
            raise ValueError("laser_wavevector must be non-negative")

    @property
    def length_scale(self) -> float:
        k = ELEMENTARY_CHARGE**2 / (4 * np.pi * VACUUM_PERMITTIVITY)
        return (k / (self.ion_mass * self.com_frequency**2)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class EquilibriumSolution:
    positions: np.ndarray  # m, ascending
    length_scale: float  # m
    residual_gradient_norm: float  # N
    dimensionless: np.ndarray
    dimensionless_gradient_norm: float


@dataclass(frozen=True)
class ModeStructure:
    frequencies: np.ndarray  # rad/s, ascending
    eigenvectors: np.ndarray  # [ion, mode]
    lamb_dicke: np.ndarray  # [ion, mode]

    @property
    def ion_count(self) -> int:
        return len(self.frequencies)

    def eta(self, ion: int, mode: int) -> float:
        _check_index(ion, self.ion_count, "ion")
        _check_index(mode, self.ion_count, "mode")
        return float(self.lamb_dicke[ion - 1, mode - 1])


@dataclass(frozen=True)
class ModeChoice:
    pair: tuple[int, int]
    mode_index: int
    coupling_product: float


def _check_index(i, n, what):
    if int(i) != i or not 1 <= i <= n:
        raise IndexError(f"{what} index {i} outside 1..{n}")


def _check_pair(pair, n):
    j, k = pair
    _check_index(j, n, "ion")
    _check_index(k, n, "ion")
    if j == k:
        raise ValueError(f"pair needs two distinct ions, got {pair}")


def _gradient(u, q):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return u + q * u**3 - np.sum(np.sign(d) / d**2, axis=1)


def _hessian(u, q):
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    h = -2.0 / d**3
    np.fill_diagonal(h, 0.0)
    h[np.diag_indices_from(h)] = 1.0 + 3.0 * q * u**2 - h.sum(axis=1)
    return h


def _energy(u, q):
    d = np.abs(u[:, None] - u[None, :])
    iu = np.triu_indices(len(u), 1)
    return np.sum(0.5 * u**2 + 0.25 * q * u**4) + np.sum(1.0 / d[iu])


def dimensionless_equilibrium(n: int, quartic: float = 0.0, tol: float = 1e-12,
                              max_iter: int = 200) -> tuple[np.ndarray, float]:
    """Damped Newton solve of the force balance, seeded by uniform spacing.

    Returns the ascending dimensionless positions and the final gradient norm.
    """
    if n < 1:
        raise ValueError("ion_count must be >= 1")
    if n == 1:
        return np.zeros(1), 0.0
    # the outer ions of a harmonic chain sit near +-(n-1)/2 * 2 n^-0.56
    u = np.linspace(-1.0, 1.0, n) * (n - 1) * n**-0.56
    g = _gradient(u, quartic)
    for _ in range(max_iter):
        gnorm = np.linalg.norm(g)
        if gnorm < tol:
            break
        step = np.linalg.solve(_hessian(u, quartic), g)
        e0 = _energy(u, quartic)
        lam = 1.0
        while lam > 1e-8:
            trial = u - lam * step
            if np.all(np.diff(trial) > 0) and _energy(trial, quartic) <= e0 + 1e-14 * abs(e0):
                break
            lam *= 0.5
        else:
            raise ConvergenceError("line search failed; bad seed or unstable potential")
        u = trial
        g = _gradient(u, quartic)
    gnorm = float(np.linalg.norm(g))
    if gnorm >= tol:
        raise ConvergenceError(f"gradient norm {gnorm:.3e} after {max_iter} iterations")
    # remove the antisymmetric rounding so mirror symmetry holds exactly
    u = 0.5 * (u - u[::-1])
    return u, float(np.linalg.norm(_gradient(u, quartic)))


def solve_equilibrium(config: TrapConfig, tol: float = 1e-12) -> EquilibriumSolution:
    u, gnorm = dimensionless_equilibrium(config.ion_count, config.quartic_coefficient, tol)
    l = config.length_scale
    force_unit = config.ion_mass * config.com_frequency**2 * l
    return EquilibriumSolution(positions=u * l, length_scale=l,
                               residual_gradient_norm=gnorm * force_unit,
                               dimensionless=u, dimensionless_gradient_norm=gnorm)


def _fix_signs(vecs):
    # largest-magnitude entry positive; for degenerate +-pairs take the first one
    out = vecs.copy()
    for m in range(out.shape[1]):
        col = out[:, m]
        i = np.argmax(np.abs(col) - 1e-9 * np.arange(len(col)))
        if col[i] < 0:
            out[:, m] = -col
    return out


def compute_modes(config: TrapConfig, eq: EquilibriumSolution | None = None) -> ModeStructure:
    """Diagonalize the equilibrium Hessian; fill frequencies, vectors and eta."""
    if eq is None:
        eq = solve_equilibrium(config)
    if len(eq.dimensionless) != config.ion_count:
        raise ValueError("equilibrium does not match config.ion_count")
    lam, vecs = np.linalg.eigh(_hessian(eq.dimensionless, config.quartic_coefficient))
    if np.any(lam <= 0):
        raise ConvergenceError(f"non-positive Hessian eigenvalue {lam.min():.3e}: unstable equilibrium")
    freqs = config.com_frequency * np.sqrt(lam)
    vecs = _fix_signs(vecs)
    x0 = np.sqrt(HBAR / (2.0 * config.ion_mass * freqs))
    eta = config.laser_wavevector * x0[None, :] * vecs
    return ModeStructure(frequencies=freqs, eigenvectors=vecs, lamb_dicke=eta)


def lamb_dicke_product(modes: ModeStructure, pair, mode_index: int) -> float:
    _check_pair(pair, modes.ion_count)
    j, k = pair
    return modes.eta(j, mode_index) * modes.eta(k, mode_index)


def select_mode(modes: ModeStructure, pair, allowed) -> ModeChoice:
    """Allowed mode with the largest |eta_j eta_k|; ties go to the lower index."""
    allowed = sorted(set(allowed))
    if not allowed:
        raise ValueError("allowed mode set is empty")
    products = [lamb_dicke_product(modes, pair, m) for m in allowed]
    mags = np.abs(products)
    best = int(np.argmax(mags))  # argmax returns the first maximum
    # center-ion zeros come out as ~1e-19 rather than exactly 0
    scale = np.max(np.abs(modes.lamb_dicke)) ** 2
    if mags[best] <= 1e-12 * scale:
        raise ValueError(f"pair {tuple(pair)} has no coupling to modes {allowed}")
    return ModeChoice(pair=tuple(pair), mode_index=allowed[best],
                      coupling_product=float(products[best]))


def fit_quartic(measured: np.ndarray, ion_mass: float = CA40_MASS,
                laser_wavevector: float = WAVEVECTOR_729) -> TrapConfig:
    """Least-squares fit of (com_frequency, quartic_coefficient) to a measured spectrum.

    ``measured`` holds all N axial mode frequencies in rad/s, ascending.
    """
    measured = np.asarray(measured, dtype=float)
    n = len(measured)

    def resid(p):
        wz, q = p
        u, _ = dimensionless_equilibrium(n, q)
        lam = np.linalg.eigvalsh(_hessian(u, q))
        return wz * np.sqrt(lam) / measured - 1.0

    # wz in units of the measured COM line keeps both parameters O(1)
    scaled = least_squares(lambda p: resid((p[0] * measured[0], p[1])), x0=[1.0, 0.0],
                           bounds=([0.5, -0.1], [2.0, 0.5]), xtol=1e-14, ftol=1e-14)
    return TrapConfig(ion_count=n, ion_mass=ion_mass,
                      com_frequency=float(scaled.x[0] * measured[0]),
                      laser_wavevector=laser_wavevector,
                      quartic_coefficient=float(scaled.x[1]))


# Measured axial spectra of the two voltage settings (Hz).
HIGH_VOLTAGE_SPECTRUM_HZ = (0.550e6, 0.971e6, 1.356e6, 1.717e6, 2.065e6)
LOW_VOLTAGE_SPECTRUM_HZ = (0.455e6, 0.814e6, 1.140e6, 1.444e6, 1.733e6)
HIGH_VOLTAGE_POSITIONS_UM = (-11.425, -5.404, 0.0, 5.404, 11.425)
LOW_VOLTAGE_POSITIONS_UM = (-12.839, -6.089, 0.0, 6.089, 12.839)


def reference_trap(setting: str = "high", ion_count: int = 5) -> TrapConfig:
    """Harmonic five-ion 40Ca+ trap at the COM frequency of a voltage setting."""
    spectra = {"high": HIGH_VOLTAGE_SPECTRUM_HZ, "low": LOW_VOLTAGE_SPECTRUM_HZ}
    if setting not in spectra:
        raise ValueError(f"unknown voltage setting {setting!r}")
    return TrapConfig(ion_count=ion_count, ion_mass=CA40_MASS,
                      com_frequency=TWO_PI * spectra[setting][0])


def with_quartic(config: TrapConfig, quartic: float) -> TrapConfig:
    return replace(config, quartic_coefficient=quartic)


def modes_table(modes: ModeStructure) -> dict[str, list]:
    """Column layout for CSV output: index, frequency in Hz, b_l and eta_l per ion."""
    n = modes.ion_count
    cols: dict[str, list] = {
        "mode": list(range(1, n + 1)),
        "frequency_hz": list(modes.frequencies / TWO_PI),
    }
    for i in range(n):
        cols[f"b_{i + 1}"] = list(modes.eigenvectors[i])
    for i in range(n):
        cols[f"eta_{i + 1}"] = list(modes.lamb_dicke[i])
    return cols
