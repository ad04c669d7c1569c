"""Time integration of the bichromatic interaction-picture Hamiltonian.

H(t) = sum_m sum_l A(t) w(t) r (eta_lm Omega / 2) (a_m^+ e^{-i d_m t} e^{i phi_l} + h.c.) sx_l
       + A(t) w(t) r Omega cos(mu t) (sy_j + sy_k)            [carrier, optional]
       + (Delta_s / 2) (sz_j + sz_k)                           [spin detuning]

with d_target = delta + detuning_offset, d_m = mu - omega_m for spectators,
mu = omega_target + delta and r the Rabi scale.  Heating adds jump
operators sqrt(G) a and sqrt(G) a^+ on the target mode.

States are batched as columns so that many noise samples (and thermal Fock
components) share one fixed-step RK4 loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .chain import ModeStructure
from .gate import GateResult, PulseSchedule
from .states import ID2, SIGMA_X, SIGMA_Y, SIGMA_Z, JointState, as_density, basis_state, thermal_weights

TWO_PI = 2.0 * np.pi
DEFAULT_TARGET_CUTOFF = 12
DEFAULT_SPECTATOR_CUTOFF = 5
LEAKAGE_LIMIT = 1e-6


class TruncationError(RuntimeError):
    """Fock cutoff too small: population reached the top kept level."""


def _annihilation(n):
    return sp.diags(np.sqrt(np.arange(1, n)), 1, shape=(n, n), format="csr", dtype=complex)


def _kron_all(mats):
    out = sp.csr_matrix(mats[0])
    for m in mats[1:]:
        out = sp.kron(out, sp.csr_matrix(m), format="csr")
    return out


@dataclass
class BatchParams:
    """Per-column noise parameters; each array has one entry per column."""
    detuning_offset: np.ndarray
    rabi_scale: np.ndarray
    spin_detuning: np.ndarray

    @classmethod
    def uniform(cls, n, detuning_offset=0.0, rabi_scale=1.0, spin_detuning=0.0):
        return cls(np.full(n, float(detuning_offset)), np.full(n, float(rabi_scale)),
                   np.full(n, float(spin_detuning)))


class GateDynamics:
    """Operators and time-dependent coefficients for one gate configuration."""

    def __init__(self, pulse: PulseSchedule, modes: ModeStructure, included_modes=None,
                 include_carrier: bool = False, cutoffs=None, heating_rate: float = 0.0,
                 steps_per_period: int = 64):
        self.pulse = pulse
        target = pulse.target_mode
        included = [target] + sorted(set(included_modes or ()) - {target})
        for m in included:
            if not 1 <= m <= modes.ion_count:
                raise IndexError(f"mode {m} outside 1..{modes.ion_count}")
        self.included = included
        if cutoffs is None:
            cutoffs = [DEFAULT_TARGET_CUTOFF] + [DEFAULT_SPECTATOR_CUTOFF] * (len(included) - 1)
        self.cutoffs = tuple(int(c) for c in cutoffs)
        if len(self.cutoffs) != len(included):
            raise ValueError("one cutoff per included mode")
        self.include_carrier = include_carrier
        self.heating_rate = float(heating_rate)
        self.steps_per_period = int(steps_per_period)
        self.dim = 4 * int(np.prod(self.cutoffs))

        j, k = pulse.target_pair
        om_t = modes.frequencies[target - 1]
        self.mu = om_t + pulse.detuning
        phases = np.exp(1j * np.asarray(pulse.ion_phases, dtype=float))
        sx = [np.kron(SIGMA_X, ID2), np.kron(ID2, SIGMA_X)]
        eyes = [sp.identity(c, dtype=complex, format="csr") for c in self.cutoffs]

        self.raise_ops = []  # A_m = a_m^+ (x) sum_l eta_lm Omega/2 e^{i phi_l} sx_l
        self.mode_detunings = []
        for i, m in enumerate(included):
            spin = sum(modes.lamb_dicke[ion - 1, m - 1] * pulse.rabi_peak / 2 * ph * s
                       for ion, ph, s in zip((j, k), phases, sx))
            factors = [spin] + [(_annihilation(c).T if q == i else eyes[q])
                                for q, c in enumerate(self.cutoffs)]
            self.raise_ops.append(_kron_all(factors))
            self.mode_detunings.append(pulse.detuning if i == 0 else self.mu - modes.frequencies[m - 1])
        self.lower_ops = [a.conj().T.tocsr() for a in self.raise_ops]
        self.carrier_op = _kron_all([pulse.rabi_peak * (np.kron(SIGMA_Y, ID2) + np.kron(ID2, SIGMA_Y))] + eyes)
        self.z_op = _kron_all([0.5 * (np.kron(SIGMA_Z, ID2) + np.kron(ID2, SIGMA_Z))] + eyes)
        a_t = _kron_all([np.eye(4)] + [(_annihilation(c) if q == 0 else eyes[q])
                                       for q, c in enumerate(self.cutoffs)])
        self.a_target = a_t
        self.ad_target = a_t.conj().T.tocsr()
        # L^+L summed over both jump channels: G (2 n + 1), spin independent
        self.jump_norm_op = (self.heating_rate * (self.ad_target @ a_t + a_t @ self.ad_target)).tocsr()

    # --- time grid -----------------------------------------------------------
    def max_frequency(self, params: BatchParams | None = None) -> float:
        off = 0.0 if params is None else float(np.max(np.abs(params.detuning_offset)))
        spin = 0.0 if params is None else float(np.max(np.abs(params.spin_detuning)))
        scale = 1.0 if params is None else float(np.max(np.abs(params.rabi_scale)))
        freqs = [abs(self.mode_detunings[0]) + off, spin]
        freqs += [abs(d) for d in self.mode_detunings[1:]]
        if self.include_carrier:
            freqs.append(abs(self.mu))
            freqs.append(2 * abs(self.pulse.rabi_peak) * scale)
        # coupling rate: Omega eta sqrt(n) for the largest kept Fock level
        coupling = max(abs(op).max() if op.nnz else 0.0 for op in self.raise_ops)
        freqs.append(2 * coupling * scale)
        return max(freqs)

    def time_grid(self, t_stop: float, params=None, steps_per_period=None) -> np.ndarray:
        """Fixed-step grid over [0, t_stop] containing every envelope breakpoint."""
        spp = self.steps_per_period if steps_per_period is None else steps_per_period
        dt_max = TWO_PI / (spp * self.max_frequency(params))
        bp = self.pulse.breakpoints()
        bp = np.unique(np.concatenate([[0.0, t_stop], bp[bp < t_stop]]))
        pieces = [np.zeros(1)]
        for t0, t1 in zip(bp[:-1], bp[1:]):
            n = max(2, int(np.ceil((t1 - t0) / dt_max)))
            pieces.append(np.linspace(t0, t1, n + 1)[1:])
        return np.concatenate(pieces)

    def snapshot_grid(self, t_stop, params=None, snapshots=None, steps_per_period=None):
        """Integration grid with the snapshot times spliced in.

        Returns the grid and, for each distinct snapshot time (ascending), the
        index of its grid point.  Grid points closer than 1e-12 * t_stop to a
        snapshot are replaced by it.
        """
        grid = self.time_grid(t_stop, params, steps_per_period)
        if snapshots is None:
            return grid, []
        snaps = np.unique(np.asarray(snapshots, dtype=float))
        if np.any(snaps < 0) or np.any(snaps > t_stop * (1 + 1e-12)):
            raise ValueError("snapshot times must lie in [0, t_stop]")
        snaps = np.minimum(snaps, t_stop)
        tol = 1e-12 * t_stop
        near = np.any(np.abs(grid[:, None] - snaps[None, :]) <= tol, axis=1)
        keep = ~near
        keep[0] = True
        grid = np.unique(np.concatenate([grid[keep], snaps]))
        return grid, list(np.searchsorted(grid, snaps))

    # --- Hamiltonian action --------------------------------------------------
    def _coefficients(self, t, params: BatchParams, mid=None):
        env = float(self.pulse.envelope(t))
        if mid is not None:
            # Walsh sign from inside the current step, so a stage sitting on a
            # flip does not pick up the next segment's sign
            env = abs(env) * np.sign(float(self.pulse.envelope(mid)))
        amp = env * params.rabi_scale
        coeffs = []
        for i, d in enumerate(self.mode_detunings):
            dd = d + params.detuning_offset if i == 0 else np.full_like(params.rabi_scale, d)
            coeffs.append(amp * np.exp(-1j * dd * t))
        carrier = amp * np.cos(self.mu * t) if self.include_carrier else None
        return coeffs, carrier

    def apply_h(self, t, psi, params: BatchParams, non_hermitian: bool = False, mid=None):
        coeffs, carrier = self._coefficients(t, params, mid)
        out = np.zeros_like(psi)
        for A, Ad, c in zip(self.raise_ops, self.lower_ops, coeffs):
            out += (A @ psi) * c + (Ad @ psi) * np.conj(c)
        if carrier is not None:
            out += (self.carrier_op @ psi) * carrier
        if np.any(params.spin_detuning):
            out += (self.z_op @ psi) * params.spin_detuning
        if non_hermitian and self.heating_rate > 0:
            out -= 0.5j * (self.jump_norm_op @ psi)
        return out

    def dense_h(self, t, params: BatchParams, mid=None):
        """Dense H(t) for a single parameter set (column 0 of ``params``)."""
        coeffs, carrier = self._coefficients(t, params, mid)
        h = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for A, Ad, c in zip(self.raise_ops, self.lower_ops, coeffs):
            h = h + A * c[0] + Ad * np.conj(c[0])
        if carrier is not None:
            h = h + self.carrier_op * carrier[0]
        h = h + self.z_op * params.spin_detuning[0]
        return h.toarray()

    # --- integrators -----------------------------------------------------------
    def propagate(self, psi, params: BatchParams, t_stop: float, snapshots=None,
                  steps_per_period=None, rng_per_column=None):
        """RK4 on a batch of state vectors (dim, n_columns).

        With heating and ``rng_per_column`` given, each column is a quantum
        trajectory (waiting-time jump scheme).  Returns the final batch and the
        list of snapshot batches at the requested times.
        """
        grid, idx = self.snapshot_grid(t_stop, params, snapshots, steps_per_period)
        want = set(idx)
        psi = np.array(psi, dtype=complex, copy=True)
        trajectories = self.heating_rate > 0 and rng_per_column is not None
        if self.heating_rate > 0 and not trajectories:
            raise ValueError("heating with state vectors needs rng_per_column (trajectories)")
        if trajectories:
            norms0 = np.sum(np.abs(psi) ** 2, axis=0)
            thresholds = np.array([g.random() for g in rng_per_column]) * norms0
        snaps = [psi.copy()] if 0 in want else []

        def f(t, y, mid):
            return -1j * self.apply_h(t, y, params, non_hermitian=trajectories, mid=mid)

        for i, (t0, t1) in enumerate(zip(grid[:-1], grid[1:])):
            h = t1 - t0
            m = t0 + h / 2
            k1 = f(t0, psi, m)
            k2 = f(m, psi + h / 2 * k1, m)
            k3 = f(m, psi + h / 2 * k2, m)
            k4 = f(t1, psi + h * k3, m)
            psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if trajectories:
                psi, thresholds = self._jumps(psi, thresholds, rng_per_column)
            if i + 1 in want:
                snaps.append(psi.copy())
        return psi, snaps

    def _jumps(self, psi, thresholds, rngs):
        norms = np.sum(np.abs(psi) ** 2, axis=0)
        hit = np.nonzero(norms < thresholds)[0]
        for col in hit:
            v = psi[:, col]
            down, up = self.a_target @ v, self.ad_target @ v
            w_down, w_up = np.vdot(down, down).real, np.vdot(up, up).real
            g = rngs[col]
            new = down if g.random() * (w_down + w_up) < w_down else up
            new = new / np.linalg.norm(new)
            psi[:, col] = new
            thresholds[col] = g.random()
        return psi, thresholds

    def propagate_density(self, rho, params: BatchParams, t_stop: float, snapshots=None,
                          steps_per_period=None):
        """RK4 on a single density matrix with the heating dissipator."""
        grid, idx = self.snapshot_grid(t_stop, params, snapshots, steps_per_period)
        want = set(idx)
        a = self.a_target.toarray()
        ad = a.conj().T
        g = self.heating_rate
        ops = [(np.sqrt(g) * a), (np.sqrt(g) * ad)] if g > 0 else []
        lind = [(L, L.conj().T @ L) for L in ops]
        snaps = [rho.copy()] if 0 in want else []

        def f(t, r, mid):
            h = self.dense_h(t, params, mid)
            out = -1j * (h @ r - r @ h)
            for L, LdL in lind:
                out += L @ r @ L.conj().T - 0.5 * (LdL @ r + r @ LdL)
            return out

        rho = np.array(rho, dtype=complex, copy=True)
        for i, (t0, t1) in enumerate(zip(grid[:-1], grid[1:])):
            h = t1 - t0
            m = t0 + h / 2
            k1 = f(t0, rho, m)
            k2 = f(m, rho + h / 2 * k1, m)
            k3 = f(m, rho + h / 2 * k2, m)
            k4 = f(t1, rho + h * k3, m)
            rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if i + 1 in want:
                snaps.append(rho.copy())
        return rho, snaps

    # --- initial states ----------------------------------------------------------
    def initial_columns(self, qubit_state, nbar, tol: float = 1e-6):
        """Pure qubit state times thermal motional mixtures, as weighted columns.

        ``nbar`` is one occupation per included mode.  Only the product of the
        per-mode thermal weights is kept, truncated per mode at 1 - tol.
        """
        qubit_state = np.asarray(qubit_state, dtype=complex)
        weights = [thermal_weights(n, tol) for n in nbar]
        for w, c in zip(weights, self.cutoffs):
            if len(w) > c:
                raise TruncationError("cutoff below the thermal occupation support")
        grids = np.meshgrid(*[np.arange(len(w)) for w in weights], indexing="ij")
        fock = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod([weights[i][fock[:, i]] for i in range(len(weights))], axis=0)
        cols = np.zeros((self.dim, len(w)), dtype=complex)
        strides = np.cumprod((1,) + self.cutoffs[::-1])[::-1]
        for c, occ in enumerate(fock):
            motion = int(np.dot(occ, strides[1:]))
            for q in range(4):
                cols[q * strides[0] + motion, c] = qubit_state[q]
        return cols, w / w.sum()

    def initial_density(self, qubit_rho, nbar):
        motion = [np.diag(thermal_weights(n)) for n in nbar]
        mats = [np.asarray(qubit_rho, dtype=complex)]
        for m, c in zip(motion, self.cutoffs):
            if m.shape[0] > c:
                raise TruncationError("cutoff below the thermal occupation support")
            full = np.zeros((c, c), dtype=complex)
            full[:m.shape[0], :m.shape[0]] = m
            mats.append(full / np.trace(full))
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out


def _leakage(state: JointState) -> float:
    return float(np.max(state.top_level_population())) if state.mode_cutoffs else 0.0


def evolve_numeric(pulse: PulseSchedule, modes: ModeStructure, included_modes=None,
                   include_carrier: bool = False, initial=None, detuning_offset: float = 0.0,
                   rabi_scale: float = 1.0, spin_detuning: float = 0.0, nbar=0.0,
                   heating_rate: float = 0.0, cutoffs=None, steps_per_period: int = 64,
                   t_stop: float | None = None, snapshots=None, auto_escalate: bool = True,
                   max_cutoff: int = 40):
    """Integrate the gate numerically and return a GateResult.

    ``nbar`` is a scalar (all included modes) or one value per included mode.
    With ``heating_rate`` > 0 the target mode is evolved as a density operator
    under the heating dissipator; otherwise thermal states are a weighted
    ensemble of Fock-state trajectories.  ``snapshots`` (times) puts the state at
    each distinct requested time, ascending, into ``extras["snapshots"]``.
    """
    t_stop = pulse.gate_time if t_stop is None else float(t_stop)
    qubit = basis_state("00") if initial is None else np.asarray(initial, dtype=complex)
    while True:
        dyn = GateDynamics(pulse, modes, included_modes, include_carrier, cutoffs,
                           heating_rate, steps_per_period)
        nb = np.broadcast_to(np.asarray(nbar, dtype=float), (len(dyn.included),))
        params = BatchParams.uniform(1, detuning_offset, rabi_scale, spin_detuning)
        try:
            if heating_rate > 0 or qubit.ndim == 2:
                rho0 = dyn.initial_density(as_density(qubit), nb)
                rho, snaps = dyn.propagate_density(rho0, params, t_stop, snapshots)
                state = JointState(dyn.cutoffs, rho=rho)
                snap_states = [JointState(dyn.cutoffs, rho=r) for r in snaps]
            else:
                cols, w = dyn.initial_columns(qubit, nb)
                p = BatchParams.uniform(cols.shape[1], detuning_offset, rabi_scale, spin_detuning)
                psi, snaps = dyn.propagate(cols, p, t_stop, snapshots)
                state = JointState(dyn.cutoffs, vectors=psi, weights=w)
                snap_states = [JointState(dyn.cutoffs, vectors=s, weights=w) for s in snaps]
        except TruncationError:
            leak = np.inf
        else:
            leak = max([_leakage(state)] + [_leakage(s) for s in snap_states])
        if leak < LEAKAGE_LIMIT:
            break
        if not auto_escalate or max(dyn.cutoffs) + 4 > max_cutoff:
            raise TruncationError(f"top Fock level population {leak:.2e} exceeds {LEAKAGE_LIMIT:.0e}")
        cutoffs = [c + 4 for c in dyn.cutoffs]
    fid = state.bell_fidelity()
    return GateResult(final_state=state, bell_fidelity_ideal=fid, geometric_phase=float("nan"),
                      extras={"snapshots": snap_states, "cutoffs": dyn.cutoffs,
                              "steps": len(dyn.time_grid(t_stop, params)) - 1})


def population_timescan(pulse: PulseSchedule, modes: ModeStructure, times, **kwargs) -> np.ndarray:
    """(P00, P01+P10, P11) after stopping the gate abruptly at each time."""
    times = np.asarray(times, dtype=float)
    if np.any(times > pulse.gate_time + 1e-15) or np.any(times < 0):
        raise ValueError("scan times must lie in [0, gate_time]")
    res = evolve_numeric(pulse, modes, t_stop=float(times.max()), snapshots=times, **kwargs)
    uniq = np.unique(times)
    rows = []
    for st in res.extras["snapshots"]:
        p = st.populations() / st.trace()
        rows.append((p[0], p[1] + p[2], p[3]))
    return np.array(rows)[np.searchsorted(uniq, times)]
