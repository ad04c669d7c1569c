"""Shot-to-shot noise sampling, dissipative heating and the per-source error budget.

Low-frequency noise is static within a shot: each shot draws one motional
detuning offset, one common qubit-frequency offset and one Rabi-rate scale.
Heating is a symmetric up/down jump process on the gate mode.

The Bell fidelity of a shot ensemble is that of the shot-averaged two-qubit
state.  Its standard error comes from per-shot fidelities linearized at the
mean state's Bell phase (their mean equals the ensemble fidelity exactly).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import eval_laguerre

from .chain import ModeStructure
from .gate import PulseSchedule, analytic_populations
from .numeric import (DEFAULT_SPECTATOR_CUTOFF, DEFAULT_TARGET_CUTOFF, LEAKAGE_LIMIT,
                      BatchParams, GateDynamics, TruncationError, evolve_numeric)
from .states import JointState, basis_state, seed_sequence, thermal_weights

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class NoiseModel:
    spin_t2star: float = 4.3e-3  # s
    phonon_dephasing_time: dict = field(default_factory=lambda: {2: 1.5e-3, 3: 0.9e-3, 4: 0.5e-3})
    phonon_dephasing_time_echo: dict = field(default_factory=lambda: {2: 13.0e-3, 3: 8.8e-3, 4: 11.2e-3})
    heating_rate: dict = field(default_factory=lambda: {2: 29.0, 3: 104.0, 4: 5.0})  # quanta/s
    rabi_sigma_total: float = 0.008
    rabi_sigma_laser: float = 0.0025
    rabi_sigma_debye_waller: float = 0.0055
    d_state_lifetime: float = 1.168  # s
    initial_nbar: dict = field(default_factory=lambda: {m: 0.05 for m in range(1, 6)})
    ac_stark_shift: float = 0.0  # rad/s, static qubit-frequency offset
    rabi_mismatch: float = 0.0  # fractional, second ion relative to the first

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v.values() if isinstance(v, dict) else [v]
            if f.name in ("ac_stark_shift", "rabi_mismatch"):
                continue
            if any(not x >= 0 for x in vals):
                raise ValueError(f"{f.name} must be non-negative")
        parts = self.rabi_sigma_laser + self.rabi_sigma_debye_waller
        if self.rabi_sigma_total > 0 and abs(parts - self.rabi_sigma_total) > 0.05 * self.rabi_sigma_total:
            raise ValueError("rabi_sigma_total must equal laser + Debye-Waller parts to 5%")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        inf = float("inf")
        return cls(spin_t2star=inf, phonon_dephasing_time={m: inf for m in (2, 3, 4)},
                   heating_rate={m: 0.0 for m in (2, 3, 4)}, rabi_sigma_total=0.0,
                   rabi_sigma_laser=0.0, rabi_sigma_debye_waller=0.0, d_state_lifetime=inf,
                   initial_nbar={m: 0.0 for m in range(1, 6)})

    def nbar(self, mode: int) -> float:
        return float(self.initial_nbar.get(mode, 0.0))

    def heating(self, mode: int) -> float:
        return float(self.heating_rate.get(mode, 0.0))


@dataclass(frozen=True)
class ShotSample:
    detuning_offset: float = 0.0  # rad/s
    spin_detuning: float = 0.0  # rad/s
    rabi_scale: float = 1.0


@dataclass(frozen=True)
class SourceToggles:
    rabi: bool = False
    spin: bool = False
    motional: bool = False
    heating: bool = False
    decay: bool = False
    off_resonant: bool = False

    @classmethod
    def all_on(cls) -> "SourceToggles":
        return cls(True, True, True, True, True, True)

    @classmethod
    def only(cls, name: str) -> "SourceToggles":
        if name not in SOURCES:
            raise ValueError(f"unknown error source {name!r}")
        return cls(**{name: True})


SOURCES = ("rabi", "spin", "motional", "heating", "decay", "off_resonant")
SOURCE_LABELS = {
    "rabi": "Rabi rate fluctuations",
    "spin": "Spin dephasing",
    "motional": "Motional mode dephasing",
    "heating": "Motional mode heating",
    "decay": "Metastable D5/2 decay",
    "off_resonant": "Off-resonant excitation",
}


def sigma_from_t2(t2: float, kind: str = "spin") -> float:
    """Static-offset std (rad/s) for a Gaussian Ramsey decay exp[-(t/t2)^2]."""
    if kind not in ("spin", "phonon"):
        raise ValueError(f"unknown dephasing kind {kind!r}")
    if not t2 > 0:
        raise ValueError("t2 must be positive")
    return float(np.sqrt(2.0) / t2)


def sample_shot(noise: NoiseModel, mode_index: int, rng_seed=None) -> ShotSample:
    """Draw one shot's static offsets; an int or SeedSequence seed is deterministic."""
    if mode_index not in noise.phonon_dephasing_time:
        raise KeyError(f"no phonon dephasing time for mode {mode_index}")
    rng = np.random.default_rng(rng_seed)
    s_ph = sigma_from_t2(noise.phonon_dephasing_time[mode_index], "phonon")
    s_sp = sigma_from_t2(noise.spin_t2star, "spin")
    z = rng.standard_normal(3)
    return ShotSample(detuning_offset=float(s_ph * z[0]), spin_detuning=float(s_sp * z[1]),
                      rabi_scale=float(1.0 + noise.rabi_sigma_total * z[2]))


def simulate_ramsey(sigma: float, times, samples: int, rng_seed=None) -> np.ndarray:
    """Ramsey contrast vs time averaged over static Gaussian offsets."""
    rng = np.random.default_rng(rng_seed)
    d = sigma * rng.standard_normal(samples)
    return np.cos(np.outer(np.asarray(times, dtype=float), d)).mean(axis=1)


def decay_error(t_gate: float, lifetime: float, mean_d_population: float) -> float:
    """Error from spontaneous D5/2 decay: mean D occupation * t_gate / lifetime."""
    if not lifetime > 0:
        raise ValueError("lifetime must be positive")
    if np.isinf(lifetime):
        return 0.0
    return float(mean_d_population * t_gate / lifetime)


def mean_d_population(pulse: PulseSchedule, eta_j: float, eta_k: float, samples: int = 241) -> float:
    """Time-averaged number of target ions in D5/2 during the gate.

    The pair starts in S (|1> in the computational labels here, so the
    symmetric start |00> is relabelled): the count is the number of ions
    flipped away from the initial state.
    """
    t = np.linspace(0.0, pulse.gate_time, samples)
    pops = analytic_populations(pulse, eta_j, eta_k, t)
    flipped = pops[:, 1] + 2.0 * pops[:, 2]
    return float(np.trapezoid(flipped, t) / pulse.gate_time)


def _dw_factors(eta_sq, n):
    # <n| D(i eta) |n> = exp(-eta^2 / 2) L_n(eta^2)
    return np.exp(-eta_sq / 2.0) * eval_laguerre(n, eta_sq)


def debye_waller_sigma(modes: ModeStructure, nbar, target_mode: int, pair=(1, 2),
                       tol: float = 1e-6) -> float:
    """Fractional Rabi spread from thermal spectator occupations.

    The gate's effective Rabi rate scales as sqrt(R_j R_k), with R_l the product
    over spectator modes of the diagonal displacement matrix elements.  The
    spread is its std/mean over the truncated thermal distribution.
    """
    nbar = np.broadcast_to(np.asarray(nbar, dtype=float), (modes.ion_count,))
    if np.any(nbar < 0):
        raise ValueError("occupations must be non-negative")
    j, k = pair
    spect = [m for m in range(1, modes.ion_count + 1) if m != target_mode]
    # product distribution built up one spectator mode at a time
    values = np.ones(1)
    weights = np.ones(1)
    for m in spect:
        w = thermal_weights(nbar[m - 1], tol)
        n = np.arange(len(w))
        if len(w) > 200:
            raise ValueError("thermal truncation exceeds 200 levels")
        f = np.sqrt(_dw_factors(modes.lamb_dicke[j - 1, m - 1] ** 2, n)
                    * _dw_factors(modes.lamb_dicke[k - 1, m - 1] ** 2, n))
        values = np.outer(values, f).ravel()
        weights = np.outer(weights, w).ravel()
    mean = np.sum(weights * values)
    var = np.sum(weights * (values - mean) ** 2)
    return float(np.sqrt(max(var, 0.0)) / mean)


def nbar_for_debye_waller(modes: ModeStructure, sigma: float, target_mode: int,
                          pair=(1, 2), upper: float = 5.0) -> float:
    """Common spectator occupation that reproduces a given Debye-Waller spread."""
    def f(n):
        return debye_waller_sigma(modes, n, target_mode, pair) - sigma
    if f(upper) < 0:
        raise ValueError("spread not reachable below the upper occupation bound")
    return float(brentq(f, 0.0, upper, xtol=1e-10))


def raman_crosstalk_population(rabi_ct: float, detuning: float) -> float:
    """Peak off-resonant two-level population Omega^2 / (Omega^2 + Delta^2)."""
    if rabi_ct == 0 and detuning == 0:
        raise ValueError("Rabi rate and detuning are both zero")
    return float(rabi_ct**2 / (rabi_ct**2 + detuning**2))


def crosstalk_operating_point(rabi=TWO_PI * 35e3, stark_shift=TWO_PI * 35e3,
                              intensity_crosstalk=1e-3) -> float:
    """Neighbour excitation during an addressed Raman pi pulse.

    Raman Rabi rate and light shift both scale with intensity, so the neighbour
    sees rabi * x at a detuning of the uncompensated shift stark * (1 - x).
    """
    x = intensity_crosstalk
    return raman_crosstalk_population(rabi * x, stark_shift * (1.0 - x))


# --- Monte Carlo ---------------------------------------------------------------

@dataclass(frozen=True)
class BudgetEntry:
    error: float
    standard_error: float
    shots: int


def _with_mismatch(modes: ModeStructure, pulse: PulseSchedule, mismatch: float) -> ModeStructure:
    if mismatch == 0:
        return modes
    eta = modes.lamb_dicke.copy()
    eta[pulse.target_pair[1] - 1] *= 1.0 + mismatch
    return replace(modes, lamb_dicke=eta)


def _shot_estimator(rhos: np.ndarray) -> tuple[float, float]:
    """Fidelity of the mean state and the standard error of that mean."""
    mean = rhos.mean(axis=0)
    phase = np.exp(-1j * np.angle(mean[0, 3]))
    f = 0.5 * (rhos[:, 0, 0].real + rhos[:, 3, 3].real) + np.real(rhos[:, 0, 3] * phase)
    fid = 0.5 * (mean[0, 0].real + mean[3, 3].real) + abs(mean[0, 3])
    se = float(np.std(f, ddof=1) / np.sqrt(len(f))) if len(f) > 1 else 0.0
    return float(fid), se


def draw_shots(noise: NoiseModel, mode_index: int, shots: int, seed, toggles: SourceToggles):
    """Per-shot samples from independent child streams of one master seed."""
    children = seed_sequence(seed).spawn(shots)
    samples = [sample_shot(noise, mode_index, c) for c in children]
    off = np.array([s.detuning_offset for s in samples]) * toggles.motional
    spin = np.array([s.spin_detuning for s in samples]) * toggles.spin + noise.ac_stark_shift
    scale = np.array([s.rabi_scale for s in samples]) if toggles.rabi else np.ones(shots)
    return BatchParams(off, scale, spin), children


def _ensemble_run(pulse, modes, noise, toggles, shots, seed, cutoff, steps_per_period):
    target = pulse.target_mode
    params, children = draw_shots(noise, target, shots, seed, toggles)
    heating = noise.heating(target) if toggles.heating else 0.0
    dyn = GateDynamics(pulse, modes, cutoffs=[cutoff], heating_rate=heating,
                       steps_per_period=steps_per_period)
    cols, w = dyn.initial_columns(basis_state("00"), [noise.nbar(target)])
    nth = len(w)
    rep = lambda a: np.repeat(a, nth)
    batch = BatchParams(rep(params.detuning_offset), rep(params.rabi_scale), rep(params.spin_detuning))
    psi0 = np.tile(cols, (1, shots))
    rngs = None
    if heating > 0:
        rngs = [np.random.default_rng(s) for c in children for s in c.spawn(nth)]
    psi, _ = dyn.propagate(psi0, batch, pulse.gate_time, rng_per_column=rngs)
    weights = np.tile(w, shots)
    state = JointState(dyn.cutoffs, vectors=psi, weights=weights)
    leak = float(state.top_level_population()[0])
    m = dyn.dim // 4
    v = psi.reshape(4, m, shots, nth)
    norms = np.sum(np.abs(v) ** 2, axis=(0, 1))
    rhos = np.einsum("imsb,jmsb,b,sb->sij", v, v.conj(), w, 1.0 / norms)
    return rhos, leak


def shot_states(pulse: PulseSchedule, modes: ModeStructure, noise: NoiseModel, shots: int,
                toggles: SourceToggles, seed=0, steps_per_period: int = 64) -> np.ndarray:
    """Per-shot two-qubit density matrices after the gate, shape (shots, 4, 4).

    Sampled sources and heating share one batched integration of the target
    mode.  Heating alone is a deterministic master-equation run (one state is
    returned); heating with sampled sources uses quantum trajectories.
    """
    modes = _with_mismatch(modes, pulse, noise.rabi_mismatch)
    target = pulse.target_mode
    sampled = toggles.rabi or toggles.spin or toggles.motional
    heating = toggles.heating and noise.heating(target) > 0
    if sampled or noise.ac_stark_shift != 0:
        cutoff = DEFAULT_TARGET_CUTOFF
        while True:
            rhos, leak = _ensemble_run(pulse, modes, noise, toggles, shots, seed, cutoff, steps_per_period)
            if leak < LEAKAGE_LIMIT:
                return rhos
            if cutoff >= 40:
                raise TruncationError(f"top Fock level population {leak:.2e}")
            cutoff += 4
    res = evolve_numeric(pulse, modes, nbar=noise.nbar(target),
                         heating_rate=noise.heating(target) if heating else 0.0,
                         steps_per_period=steps_per_period)
    rho = res.final_state.qubit_density() / res.final_state.trace()
    return rho[None]


def deterministic_error(pulse: PulseSchedule, modes: ModeStructure, noise: NoiseModel,
                        toggles: SourceToggles, off_resonant: float | None = None) -> float:
    """D5/2 decay and off-resonant excitation, added at first order."""
    j, k = pulse.target_pair
    target = pulse.target_mode
    out = 0.0
    if toggles.decay:
        out += decay_error(pulse.gate_time, noise.d_state_lifetime,
                           mean_d_population(pulse, modes.eta(j, target), modes.eta(k, target)))
    if toggles.off_resonant:
        out += off_resonant_error(pulse, modes, noise) if off_resonant is None else off_resonant
    return out


def monte_carlo_fidelity(pulse: PulseSchedule, modes: ModeStructure, noise: NoiseModel,
                         shots: int, toggles: SourceToggles, seed=0,
                         steps_per_period: int = 64, off_resonant: float | None = None) -> BudgetEntry:
    """Mean gate error over sampled shots with the selected sources enabled.

    See ``shot_states`` for how the dynamics are run.  D5/2 decay and
    off-resonant excitation are deterministic and add at first order
    (``off_resonant`` may carry a precomputed value).
    """
    if shots < 100:
        raise ValueError("monte_carlo_fidelity needs at least 100 shots")
    rhos = shot_states(pulse, modes, noise, shots, toggles, seed, steps_per_period)
    fid, se = _shot_estimator(rhos)
    error = 1.0 - fid + deterministic_error(pulse, modes, noise, toggles, off_resonant)
    return BudgetEntry(error=float(error), standard_error=float(se), shots=int(shots))


def off_resonant_error(pulse: PulseSchedule, modes: ModeStructure, noise: NoiseModel | None = None,
                       steps_per_period: int = 48, return_scale: bool = False):
    """Excess error from the carrier and the two neighbouring modes.

    The Rabi rate is re-tuned for best fidelity, as in a calibrated experiment,
    and the error is measured against the same run without those terms.
    """
    target = pulse.target_mode
    adjacent = [m for m in (target - 1, target + 1) if 1 <= m <= modes.ion_count]
    nb = [0.0 if noise is None else noise.nbar(target)] + [0.0] * len(adjacent)
    cut = [DEFAULT_TARGET_CUTOFF] + [DEFAULT_SPECTATOR_CUTOFF] * len(adjacent)

    def err(scale):
        r = evolve_numeric(pulse, modes, included_modes=adjacent, include_carrier=True,
                           rabi_scale=scale, nbar=nb, cutoffs=cut, steps_per_period=steps_per_period)
        return 1.0 - r.bell_fidelity_ideal

    opt = minimize_scalar(err, bounds=(0.97, 1.03), method="bounded", options={"xatol": 1e-5})
    base = 1.0 - evolve_numeric(pulse, modes, nbar=nb[0]).bell_fidelity_ideal
    value = max(float(opt.fun) - base, 0.0)
    return (value, float(opt.x)) if return_scale else value


@dataclass
class ErrorBudget:
    pair: tuple
    contributions: dict  # source -> BudgetEntry
    total_simulated: float
    mc_uncertainty: float
    sum_of_sources: float = 0.0

    def table(self) -> dict[str, list]:
        return {
            "source": [SOURCE_LABELS[s] for s in SOURCES] + ["Total (all sources)"],
            "key": list(SOURCES) + ["total"],
            "error": [self.contributions[s].error for s in SOURCES] + [self.total_simulated],
            "standard_error": [self.contributions[s].standard_error for s in SOURCES] + [self.mc_uncertainty],
        }

    def format_table(self) -> str:
        t = self.table()
        width = max(len(s) for s in t["source"])
        lines = [f"Error budget for ion pair {self.pair}",
                 f"{'Error source':<{width}}  {'x1e-3':>8}  {'+-':>7}"]
        for s, e, u in zip(t["source"], t["error"], t["standard_error"]):
            lines.append(f"{s:<{width}}  {1e3 * e:8.3f}  {1e3 * u:7.3f}")
        return "\n".join(lines)


def error_budget(pulse: PulseSchedule, modes: ModeStructure, noise: NoiseModel, shots: int = 2000,
                 seed=0, steps_per_period: int = 64) -> ErrorBudget:
    """One run per source with the others off, plus an all-on run."""
    seeds = seed_sequence(seed).spawn(len(SOURCES) + 1)
    off_res = off_resonant_error(pulse, modes, noise)
    contrib = {}
    for name, ss in zip(SOURCES, seeds):
        contrib[name] = monte_carlo_fidelity(pulse, modes, noise, shots, SourceToggles.only(name),
                                             seed=ss, steps_per_period=steps_per_period,
                                             off_resonant=off_res)
    total = monte_carlo_fidelity(pulse, modes, noise, shots, SourceToggles.all_on(), seed=seeds[-1],
                                 steps_per_period=steps_per_period, off_resonant=off_res)
    return ErrorBudget(pair=tuple(pulse.target_pair), contributions=contrib,
                       total_simulated=total.error, mc_uncertainty=total.standard_error,
                       sum_of_sources=float(sum(c.error for c in contrib.values())))
