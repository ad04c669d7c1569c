"""Molmer-Sorensen pulse schedules and the exact single-mode propagator.

For a drive that is linear in a and a^dagger and proportional to sigma_x on
each ion, the propagator is a spin-dependent displacement times
exp(-i theta/2 sx_j sx_k), whatever the envelope.  Square pulses have closed
forms (``displacement``, ``geometric_phase``); shaped pulses go through
``trajectory``, which does the same integrals by quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_simpson

from .states import JointState, as_density, basis_state, bell_fidelity

TWO_PI = 2.0 * np.pi

# sigma_x eigen-sectors (s_j, s_k) in the order ++, +-, -+, --
_SECTORS = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
_H1 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_HX = np.kron(_H1, _H1)  # columns are the sector states in the computational basis


@dataclass(frozen=True)
class PulseSchedule:
    rabi_peak: float  # rad/s, per-tone Rabi rate
    detuning: float  # rad/s, signed, from the target sideband
    loops: int
    gate_time: float  # s
    ramp_time: float = 0.0  # s, sin^2 rise/fall of every Walsh segment
    walsh_order: int = 0
    ion_phases: tuple = (0.0, 0.0)
    target_pair: tuple = (1, 2)
    target_mode: int = 2

    def __post_init__(self):
        if not self.gate_time > 0:
            raise ValueError("gate_time must be positive")
        if self.walsh_order not in (0, 1):
            raise ValueError("walsh_order must be 0 or 1")
        if int(self.loops) != self.loops or self.loops < 1:
            raise ValueError("loops must be a positive integer")
        if self.walsh_order == 1 and self.loops % 2:
            raise ValueError("walsh_order 1 needs an even loop count")
        if not 0 <= 2 * self.ramp_time <= self.segment_time:
            raise ValueError("ramps do not fit inside a Walsh segment")
        if len(self.ion_phases) != 2 or len(self.target_pair) != 2:
            raise ValueError("ion_phases and target_pair need two entries")
        if self.target_pair[0] == self.target_pair[1]:
            raise ValueError("target_pair needs two distinct ions")

    @property
    def segment_count(self) -> int:
        return self.walsh_order + 1

    @property
    def segment_time(self) -> float:
        return self.gate_time / (self.walsh_order + 1)

    def segments(self):
        """(start, stop, sign) for each constant-sign stretch of the drive."""
        tau = self.segment_time
        return [(i * tau, (i + 1) * tau, 1.0 if i % 2 == 0 else -1.0)
                for i in range(self.segment_count)]

    def breakpoints(self) -> np.ndarray:
        """Times where the envelope or its derivative is not smooth."""
        pts = []
        for t0, t1, _ in self.segments():
            pts += [t0, t1]
            if self.ramp_time > 0:
                pts += [t0 + self.ramp_time, t1 - self.ramp_time]
        return np.unique(np.round(np.array(pts), 15))

    def envelope(self, t) -> np.ndarray:
        """Signed amplitude A(t) w(t) in [-1, 1]; zero outside [0, gate_time]."""
        t = np.asarray(t, dtype=float)
        tau = self.segment_time
        idx = np.clip(np.floor(t / tau), 0, self.segment_count - 1)
        s = t - idx * tau
        amp = np.ones_like(s)
        tr = self.ramp_time
        if tr > 0:
            amp = np.where(s < tr, np.sin(np.pi * s / (2 * tr)) ** 2, amp)
            amp = np.where(s > tau - tr, np.sin(np.pi * (tau - s) / (2 * tr)) ** 2, amp)
        sign = np.where(idx % 2 == 0, 1.0, -1.0)
        inside = (t >= 0) & (t <= self.gate_time)
        return np.where(inside, amp * sign, 0.0)

    def truncated(self, t_stop: float) -> "TruncatedPulse":
        return TruncatedPulse(self, t_stop)


@dataclass(frozen=True)
class TruncatedPulse:
    """A schedule stopped abruptly at ``t_stop``."""
    pulse: PulseSchedule
    t_stop: float


@dataclass
class GateResult:
    final_state: JointState
    bell_fidelity_ideal: float
    geometric_phase: float
    phase_space_trajectory: np.ndarray | None = None  # columns: t, alpha_j, alpha_k
    displacements: tuple = (0j, 0j)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        # fidelity is a probability; clip rounding noise only
        if -1e-9 < self.bell_fidelity_ideal < 0:
            self.bell_fidelity_ideal = 0.0
        if 1 < self.bell_fidelity_ideal < 1 + 1e-9:
            self.bell_fidelity_ideal = 1.0


def _require_square(pulse: PulseSchedule):
    if pulse.ramp_time != 0:
        raise ValueError("closed form needs a square pulse; use trajectory() for ramps")


def _segment_sums(t, pulse, delta, coeffs):
    """Closed-form alpha_l(t) and theta(t) for a square, possibly Walsh, drive.

    coeffs are the complex per-ion prefactors c_l = eta_l Omega e^{i phi_l} / 2.
    """
    if delta == 0:
        raise ValueError("detuning is zero; the closed form is singular")
    t = float(t)
    alpha = np.zeros(len(coeffs), dtype=complex)
    theta = 0.0
    c = np.asarray(coeffs, dtype=complex)
    for t0, t1, s in pulse.segments():
        if t <= t0:
            break
        te = min(t, t1)
        e_t, e_0 = np.exp(-1j * delta * te), np.exp(-1j * delta * t0)
        dt = te - t0
        # int_{t0}^{te} g_a^* alpha_b with alpha_b = alpha_b0 + s c_b (e^{-i d t} - e^{-i d t0}) / d
        ph = (np.exp(1j * delta * te) - np.exp(1j * delta * t0)) / (1j * delta)
        kern = (dt - (np.exp(1j * delta * dt) - 1.0) / (1j * delta)) / delta
        if len(c) == 2:
            cross = (s * np.conj(c[0]) * alpha[1] * ph + np.conj(c[0]) * c[1] * kern
                     + s * np.conj(c[1]) * alpha[0] * ph + np.conj(c[1]) * c[0] * kern)
            theta += 2.0 * cross.real
        alpha = alpha + s * c * (e_t - e_0) / delta
    return alpha, theta


def displacement(t, pulse: PulseSchedule, eta: float, ion_phase: float = 0.0,
                 detuning_offset: float = 0.0, rabi_scale: float = 1.0) -> complex:
    """Closed-form alpha_l(t) of one ion; the sign-flipped drive after a Walsh flip."""
    _require_square(pulse)
    c = [eta * pulse.rabi_peak * rabi_scale * np.exp(1j * ion_phase) / 2]
    alpha, _ = _segment_sums(t, pulse, pulse.detuning + detuning_offset, c)
    return complex(alpha[0])


def geometric_phase(t, pulse: PulseSchedule, eta_j: float, eta_k: float,
                    detuning_offset: float = 0.0, rabi_scale: float = 1.0) -> float:
    """Closed-form theta(t) for a square pulse."""
    _require_square(pulse)
    om = pulse.rabi_peak * rabi_scale
    c = [eta_j * om * np.exp(1j * pulse.ion_phases[0]) / 2,
         eta_k * om * np.exp(1j * pulse.ion_phases[1]) / 2]
    _, theta = _segment_sums(t, pulse, pulse.detuning + detuning_offset, c)
    return float(theta)


def closure_phase(pulse: PulseSchedule, eta_j: float, eta_k: float) -> float:
    """theta at closure: 2 pi eta_j eta_k K (Omega/delta)^2 sign(delta)."""
    return float(TWO_PI * eta_j * eta_k * pulse.loops
                 * (pulse.rabi_peak / pulse.detuning) ** 2 * np.sign(pulse.detuning))


def _cumulative(y, t):
    # cumulative_simpson drops imaginary parts
    return (cumulative_simpson(y.real, x=t, initial=0)
            + 1j * cumulative_simpson(y.imag, x=t, initial=0))


def trajectory(pulse: PulseSchedule, eta_j: float, eta_k: float, t_end: float | None = None,
               detuning_offset: float = 0.0, rabi_scale: float = 1.0,
               points_per_piece: int = 2001):
    """alpha_j(t), alpha_k(t), theta(t) by quadrature for any envelope.

    Returns (t, alpha_j, alpha_k, theta) sampled on a grid that contains every
    envelope breakpoint, up to ``t_end`` (default: the full gate).
    """
    t_end = pulse.gate_time if t_end is None else float(t_end)
    bp = pulse.breakpoints()
    bp = np.unique(np.concatenate([bp[bp < t_end], [0.0, t_end]]))
    delta = pulse.detuning + detuning_offset
    om = pulse.rabi_peak * rabi_scale
    cj = eta_j * om * np.exp(1j * pulse.ion_phases[0]) / 2
    ck = eta_k * om * np.exp(1j * pulse.ion_phases[1]) / 2
    ts, aj, ak, th = [np.zeros(1)], [np.zeros(1, complex)], [np.zeros(1, complex)], [np.zeros(1)]
    for t0, t1 in zip(bp[:-1], bp[1:]):
        t = np.linspace(t0, t1, points_per_piece)
        # evaluate the envelope strictly inside the piece so flips land on the right side
        mid = np.clip(t, t0 + 1e-15 * max(1.0, t1), t1 - 1e-15 * max(1.0, t1))
        f = pulse.envelope(mid) * np.exp(-1j * delta * t)
        gj, gk = cj * f, ck * f
        a_j = aj[-1][-1] - 1j * _cumulative(gj, t)
        a_k = ak[-1][-1] - 1j * _cumulative(gk, t)
        integrand = np.real(np.conj(gj) * a_k + np.conj(gk) * a_j)
        theta = th[-1][-1] + 2.0 * cumulative_simpson(integrand, x=t, initial=0)
        ts.append(t[1:]); aj.append(a_j[1:]); ak.append(a_k[1:]); th.append(theta[1:])
    return (np.concatenate(ts), np.concatenate(aj), np.concatenate(ak), np.concatenate(th))


def closure_detuning(gate_time: float, loops: int, ramp_time: float = 0.0,
                     walsh_order: int = 0) -> float:
    """Positive detuning that closes every Walsh segment of a sin^2-ramped pulse.

    A sin^2 edge of length t_r is a flat top of length tau - t_r convolved with
    a unit-area kernel, so the segment spectrum vanishes at 2 pi n / (tau - t_r).
    """
    nseg = walsh_order + 1
    if loops % nseg:
        raise ValueError("loops must divide evenly between Walsh segments")
    tau = gate_time / nseg
    return TWO_PI * (loops // nseg) / (tau - ramp_time)


def calibrate_pulse(t_gate: float, loops: int, eta_j: float, eta_k: float,
                    theta_target: float, ramp_time: float = 0.0, walsh_order: int = 0,
                    ion_phases=(0.0, 0.0), target_pair=(1, 2), target_mode: int = 2) -> PulseSchedule:
    """Closure-calibrated schedule reaching ``theta_target`` at ``t_gate``.

    Square pulses use delta = 2 pi K / t_gate and the closed-form phase.  With
    ramps the closing detuning comes from ``closure_detuning`` and Omega from
    the quadrature phase (theta scales as Omega^2).
    """
    if not t_gate > 0:
        raise ValueError("t_gate must be positive")
    prod = eta_j * eta_k * np.cos(ion_phases[1] - ion_phases[0])
    if prod == 0:
        raise ValueError("eta_j * eta_k is zero; the pair does not couple to this mode")
    sign = 1.0 if np.sign(theta_target) * np.sign(prod) >= 0 else -1.0
    delta = sign * closure_detuning(t_gate, loops, ramp_time, walsh_order)
    base = PulseSchedule(rabi_peak=0.0, detuning=delta, loops=loops, gate_time=t_gate,
                         ramp_time=ramp_time, walsh_order=walsh_order,
                         ion_phases=tuple(ion_phases), target_pair=tuple(target_pair),
                         target_mode=target_mode)
    if theta_target == 0:
        return base
    if ramp_time == 0:
        rabi = abs(delta) * np.sqrt(abs(theta_target) / (TWO_PI * abs(prod) * loops))
        return replace(base, rabi_peak=float(rabi))
    unit = replace(base, rabi_peak=1.0)
    theta_unit = trajectory(unit, eta_j, eta_k)[3][-1]
    return replace(base, rabi_peak=float(np.sqrt(theta_target / theta_unit)))


def _sector_density(rho_x, alpha_j, alpha_k, theta, nbar):
    beta = _SECTORS[:, 0] * alpha_j + _SECTORS[:, 1] * alpha_k
    phase = np.exp(-0.5j * theta * (_SECTORS[:, 0] * _SECTORS[:, 1]))
    db = beta[:, None] - beta[None, :]
    overlap = np.exp(-(nbar + 0.5) * np.abs(db) ** 2
                     + 1j * np.imag(np.conj(beta[None, :]) * beta[:, None]))
    return rho_x * np.outer(phase, phase.conj()) * overlap


def evolve_analytic(pulse: PulseSchedule, eta_j: float, eta_k: float, initial=None,
                    mode_nbar: float = 0.0, t: float | None = None,
                    detuning_offset: float = 0.0, rabi_scale: float = 1.0,
                    trajectory_points: int = 0) -> GateResult:
    """Apply the exact spin-dependent displacement and phase; trace out the mode.

    The mode starts thermal with occupation ``mode_nbar`` and the thermal average
    is done in closed form.  Square pulses use the closed-form alpha and theta;
    shaped pulses use ``trajectory`` quadrature.
    """
    rho0 = as_density(basis_state("00") if initial is None else initial)
    t = pulse.gate_time if t is None else float(t)
    if pulse.rabi_peak == 0 or t == 0:
        aj = ak = 0j
        theta = 0.0
    elif pulse.ramp_time == 0:
        om = pulse.rabi_peak * rabi_scale
        c = [eta_j * om * np.exp(1j * pulse.ion_phases[0]) / 2,
             eta_k * om * np.exp(1j * pulse.ion_phases[1]) / 2]
        (aj, ak), theta = _segment_sums(t, pulse, pulse.detuning + detuning_offset, c)
    else:
        _, a1, a2, th = trajectory(pulse, eta_j, eta_k, t_end=t,
                                   detuning_offset=detuning_offset, rabi_scale=rabi_scale)
        aj, ak, theta = a1[-1], a2[-1], th[-1]
    rho_x = _HX.conj().T @ rho0 @ _HX
    rho = _HX @ _sector_density(rho_x, aj, ak, theta, mode_nbar) @ _HX.conj().T
    path = None
    if trajectory_points and pulse.rabi_peak != 0:
        ts = np.linspace(0, t, trajectory_points)
        if pulse.ramp_time == 0:
            path = np.array([[s, displacement(s, pulse, eta_j, pulse.ion_phases[0], detuning_offset, rabi_scale),
                              displacement(s, pulse, eta_k, pulse.ion_phases[1], detuning_offset, rabi_scale)]
                             for s in ts])
        else:
            tq, a1, a2, _ = trajectory(pulse, eta_j, eta_k, t_end=t,
                                       detuning_offset=detuning_offset, rabi_scale=rabi_scale)
            path = np.column_stack([ts, np.interp(ts, tq, a1.real) + 1j * np.interp(ts, tq, a1.imag),
                                    np.interp(ts, tq, a2.real) + 1j * np.interp(ts, tq, a2.imag)])
    return GateResult(final_state=JointState.qubits(rho), bell_fidelity_ideal=bell_fidelity(rho),
                      geometric_phase=float(theta), phase_space_trajectory=path,
                      displacements=(complex(aj), complex(ak)))


def analytic_populations(pulse: PulseSchedule, eta_j: float, eta_k: float, times,
                         initial=None, mode_nbar: float = 0.0) -> np.ndarray:
    """Rows of (P00, P01+P10, P11) after abruptly stopping the gate at each time."""
    out = []
    for t in np.atleast_1d(times):
        p = evolve_analytic(pulse, eta_j, eta_k, initial, mode_nbar, t=t).final_state.populations()
        out.append((p[0], p[1] + p[2], p[3]))
    return np.array(out)
