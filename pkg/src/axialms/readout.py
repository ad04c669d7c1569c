"""Dual-detection readout, post-selection and population/parity estimation.

Level codes used by the shot simulator, per ion:

    ZERO  |0>, a D5/2 sublevel (dark)
    ONE   |1>, S1/2 (bright)
    G     S1/2 left over after a failed optical pumping step (bright, not
          touched by the pi pulse)
    AUX   shelved D5/2 sublevel (dark, not touched by the pi pulse)

The analytic maps follow the same readout steps one fault at a time and
renormalize over the post-selected subspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .states import JointState, analysis_rotation, apply_unitary, as_density, seed_sequence

ZERO, ONE, G, AUX = 0, 1, 2, 3
BRIGHT, DARK = "bright", "dark"
STATE_NAMES = {0: "zero", 1: "one-or-g", 2: "aux", 3: "invalid"}
STAGES = ("E2", "E3", "E4", "E5", "E6")


@dataclass(frozen=True)
class ReadoutModel:
    eps_d: float = 0.002  # false bright of a D5/2 ion per detection
    eps_c: float = 0.0055  # D5/2 decay during the cooling window
    eps_p: float = 0.001  # optical pumping failure
    eps_pi: float = 0.005  # global pi-pulse failure per ion
    detection_window: float = 2.5e-3  # s, documentation only

    def __post_init__(self):
        for name in ("eps_d", "eps_c", "eps_p", "eps_pi"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")

    @classmethod
    def ideal(cls) -> "ReadoutModel":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ShotRecord:
    first_detection: tuple  # per ion, True = bright
    second_detection: tuple
    verdict: str  # "accepted" or "discarded"
    inferred_state: tuple  # per target ion, a STATE_NAMES value


def _classify_arrays(first, second, pair):
    """Per-ion class codes (0 zero, 1 one-or-g, 2 aux, 3 invalid) and acceptance."""
    first = np.asarray(first, dtype=bool)
    second = np.asarray(second, dtype=bool)
    cls = np.where(~first & second, 0, np.where(first & ~second, 1, np.where(~first & ~second, 2, 3)))
    t = [p - 1 for p in pair]
    spect = np.ones(first.shape[-1], dtype=bool)
    spect[t] = False
    targets_ok = np.all((cls[..., t] == 0) | (cls[..., t] == 1), axis=-1)
    spect_ok = np.all(cls[..., spect] == 2, axis=-1)
    return cls, targets_ok & spect_ok


def classify_shot(first, second, pair=(1, 2)) -> ShotRecord:
    """Post-selection verdict for one shot; detections are per-ion booleans (True = bright)."""
    if len(first) != len(second):
        raise ValueError("both detections need one entry per ion")
    cls, ok = _classify_arrays(first, second, pair)
    return ShotRecord(first_detection=tuple(bool(x) for x in first),
                      second_detection=tuple(bool(x) for x in second),
                      verdict="accepted" if ok else "discarded",
                      inferred_state=tuple(STATE_NAMES[int(cls[p - 1])] for p in pair))


class ShotRecords:
    """Array-backed stream of ShotRecord (shots x ions)."""

    def __init__(self, first, second, pair=(1, 2)):
        self.first = np.asarray(first, dtype=bool)
        self.second = np.asarray(second, dtype=bool)
        self.pair = tuple(pair)
        self.classes, self.accepted = _classify_arrays(self.first, self.second, self.pair)

    def __len__(self):
        return len(self.first)

    def __getitem__(self, i) -> ShotRecord:
        return ShotRecord(tuple(bool(x) for x in self.first[i]), tuple(bool(x) for x in self.second[i]),
                          "accepted" if self.accepted[i] else "discarded",
                          tuple(STATE_NAMES[int(self.classes[i, p - 1])] for p in self.pair))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_records(cls, records, pair=(1, 2)) -> "ShotRecords":
        records = list(records)
        if not records:
            return cls(np.zeros((0, 0)), np.zeros((0, 0)), pair)
        return cls([r.first_detection for r in records], [r.second_detection for r in records], pair)

    def table(self) -> dict:
        n = self.first.shape[1]
        out = {"shot": list(range(len(self)))}
        for i in range(n):
            out[f"first_{i + 1}"] = [BRIGHT if b else DARK for b in self.first[:, i]]
            out[f"second_{i + 1}"] = [BRIGHT if b else DARK for b in self.second[:, i]]
        out["verdict"] = ["accepted" if a else "discarded" for a in self.accepted]
        return out

    @classmethod
    def from_table(cls, table: dict, pair=(1, 2)) -> "ShotRecords":
        n = sum(1 for k in table if k.startswith("first_"))
        first = np.column_stack([[v == BRIGHT for v in table[f"first_{i + 1}"]] for i in range(n)])
        second = np.column_stack([[v == BRIGHT for v in table[f"second_{i + 1}"]] for i in range(n)])
        return cls(first, second, pair)


def _qubit_rho(true_state):
    if isinstance(true_state, JointState):
        return true_state.qubit_density() / true_state.trace()
    return as_density(true_state)


def simulate_readout(true_state, prep, readout: ReadoutModel, shots: int,
                     analysis_phase: float | None = None, rng_seed=None,
                     pair=(1, 2), ion_count: int = 5) -> ShotRecords:
    """Sample the preparation, optional pi/2 analysis pulse and two detections.

    ``prep`` holds the per-target probability that preparation succeeded; a
    failure leaves that ion shelved (AUX) and the other target idle in ONE.
    """
    rng = np.random.default_rng(rng_seed)
    rho = _qubit_rho(true_state)
    if analysis_phase is not None:
        rho = apply_unitary(rho, analysis_rotation(analysis_phase))
    p = np.clip(np.real(np.diag(rho)), 0.0, None)
    p = p / p.sum()
    prep = np.broadcast_to(np.asarray(prep, dtype=float), (2,))
    if np.any((prep < 0) | (prep > 1)):
        raise ValueError("prep probabilities must lie in [0, 1]")
    j, k = (i - 1 for i in pair)
    level = np.full((shots, ion_count), AUX)
    outcome = rng.choice(4, size=shots, p=p)
    ok = rng.random((shots, 2)) < prep
    both = ok[:, 0] & ok[:, 1]
    level[:, j] = np.where(both, outcome // 2, np.where(ok[:, 0], ONE, AUX))
    level[:, k] = np.where(both, outcome % 2, np.where(ok[:, 1], ONE, AUX))

    def hit(eps):
        return rng.random((shots, ion_count)) < eps

    dark = (level == ZERO) | (level == AUX)
    # first detection: a D ion may decay and scatter
    decay = dark & hit(readout.eps_d)
    first = ~dark | decay
    level = np.where(decay, G, level)
    # cooling: D decay to S, with S ions scrambled into G
    decay = ((level == ZERO) | (level == AUX)) & hit(readout.eps_c)
    level = np.where(decay | (level == ONE), G, level)
    # optical pumping G -> ONE
    level = np.where((level == G) & ~hit(readout.eps_p), ONE, level)
    # global pi pulse on ZERO <-> ONE
    flip = ((level == ZERO) | (level == ONE)) & ~hit(readout.eps_pi)
    level = np.where(flip & (level == ZERO), ONE, np.where(flip & (level == ONE), ZERO, level))
    dark = (level == ZERO) | (level == AUX)
    second = ~dark | (dark & hit(readout.eps_d))
    return ShotRecords(first, second, pair)


# --- analytic maps ---------------------------------------------------------------

def _n_ones(i):
    return (i >> 1) + (i & 1)


def distortion_e2(eps_d):
    e = eps_d
    return np.array([[(1 - e) ** 2, 0, 0, 0],
                     [(1 - e) * e, 1 - e, 0, 0],
                     [e * (1 - e), 0, 1 - e, 0],
                     [e**2, e, e, 1]])


def _survival(p, factors):
    q = np.asarray(p, dtype=float) * factors
    return q / q.sum()


def apply_stage(p, readout: ReadoutModel, stage: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    ones = np.array([_n_ones(i) for i in range(4)])
    if stage == "E2":
        return distortion_e2(readout.eps_d) @ p
    if stage == "E3":
        return _survival(p, (1 - readout.eps_c) ** (2 - ones))
    if stage == "E4":
        return _survival(p, (1 - readout.eps_p) ** ones)
    if stage == "E5":
        return _survival(p, np.full(4, (1 - readout.eps_pi) ** 2))
    if stage == "E6":
        return _survival(p, (1 - readout.eps_d) ** ones)
    raise ValueError(f"unknown distortion stage {stage!r}")


@dataclass(frozen=True)
class PopulationEstimate:
    p: np.ndarray  # (P00, P01, P10, P11)
    n_total: int
    uncertainties: np.ndarray
    shots: int = 0

    @property
    def p00(self): return float(self.p[0])

    @property
    def p01(self): return float(self.p[1])

    @property
    def p10(self): return float(self.p[2])

    @property
    def p11(self): return float(self.p[3])

    @property
    def discard_rate(self) -> float:
        return 1.0 - self.n_total / self.shots if self.shots else 0.0

    @classmethod
    def exact(cls, p, n_total: int = 0) -> "PopulationEstimate":
        p = np.asarray(p, dtype=float)
        return cls(p, n_total, binomial_uncertainty(p, n_total), n_total)


def binomial_uncertainty(p, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if n <= 0:
        return np.zeros_like(p)
    return np.sqrt(p * (1 - p) / n)


def apply_distortion_chain(p, readout: ReadoutModel, stage_mask=STAGES):
    """Apply the selected maps in the fixed readout order.

    Accepts a PopulationEstimate or a plain length-4 vector and returns the
    same kind.
    """
    unknown = set(stage_mask) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    vec = p.p if isinstance(p, PopulationEstimate) else np.asarray(p, dtype=float)
    for s in STAGES:
        if s in stage_mask:
            vec = apply_stage(vec, readout, s)
    if isinstance(p, PopulationEstimate):
        return PopulationEstimate(vec, p.n_total, binomial_uncertainty(vec, p.n_total), p.shots)
    return vec


def first_order_bias(readout: ReadoutModel) -> float:
    """Bell-fidelity underestimate 3 eps_D / 2 from readout errors."""
    if not readout.eps_d < 0.1:
        raise ValueError("first-order bias needs eps_d < 0.1")
    return 1.5 * readout.eps_d


def chain_bell_fidelity(readout: ReadoutModel, stage_mask=STAGES) -> float:
    """Fidelity an ideal Bell state shows after the exact readout chain.

    The contrast is half the spread between the maximum-parity populations
    (1/2, 0, 0, 1/2) and the minimum-parity ones (0, 1/2, 1/2, 0).
    """
    sign = np.array([1, -1, -1, 1])
    hi = apply_distortion_chain([0.5, 0, 0, 0.5], readout, stage_mask)
    lo = apply_distortion_chain([0, 0.5, 0.5, 0], readout, stage_mask)
    c = 0.5 * (sign @ hi - sign @ lo)
    return float(0.5 * (hi[0] + hi[3] + c))


def estimate_populations(records) -> PopulationEstimate:
    """Accepted-shot frequencies of 00, 01, 10, 11 with binomial errors."""
    if not isinstance(records, ShotRecords):
        records = ShotRecords.from_records(records)
    n = int(records.accepted.sum())
    if n == 0:
        raise ValueError("no accepted shots")
    j, k = (i - 1 for i in records.pair)
    c = records.classes[records.accepted]
    idx = 2 * c[:, j] + c[:, k]
    p = np.bincount(idx, minlength=4) / n
    return PopulationEstimate(p, n, binomial_uncertainty(p, n), len(records))


def parity_from_estimate(est: PopulationEstimate) -> tuple[float, float]:
    par = est.p00 - est.p01 - est.p10 + est.p11
    return par, float(np.sqrt(max(1 - par**2, 0.0) / est.n_total))


@dataclass(frozen=True)
class ParityFit:
    contrast: float
    phase_offset: float
    contrast_uncertainty: float
    phase_uncertainty: float
    residual_norm: float
    covariance: np.ndarray  # of the linear coefficients (a, b)


def fit_parity(phases, parities, weights=None) -> ParityFit:
    """Weighted linear fit of parity = a sin 2phi + b cos 2phi.

    ``weights`` are inverse variances.  With no weights the covariance is
    scaled by the residual variance.
    """
    phases = np.asarray(phases, dtype=float)
    y = np.asarray(parities, dtype=float)
    X = np.column_stack([np.sin(2 * phases), np.cos(2 * phases)])
    if len(phases) < 3 or np.linalg.matrix_rank(X, tol=1e-9) < 2:
        raise ValueError("degenerate phase set: need >= 3 phases not all equal mod pi/2")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    a, b = coef
    resid = y - X @ coef
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    if weights is None:
        dof = max(len(y) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    c = float(np.hypot(a, b))
    if c > 0:
        jc = np.array([a, b]) / c
        jp = 0.5 * np.array([-b, a]) / c**2
        sc = float(np.sqrt(jc @ cov @ jc))
        sp = float(np.sqrt(jp @ cov @ jp))
    else:
        sc = float(np.sqrt(np.trace(cov) / 2))
        sp = float("inf")
    return ParityFit(contrast=c, phase_offset=float(0.5 * np.arctan2(b, a)), contrast_uncertainty=sc,
                     phase_uncertainty=sp, residual_norm=float(np.linalg.norm(resid * sw)),
                     covariance=cov)


def fit_parity_binomial(phases, parities, counts, iterations: int = 3) -> ParityFit:
    """Parity fit with binomial weights n / (1 - Pi^2) taken from the fitted curve.

    Weights built from the measured parities favour points that scattered
    toward |Pi| = 1 and shrink the reported uncertainty; reweighting from the
    model removes that bias.
    """
    phases = np.asarray(phases, dtype=float)
    counts = np.asarray(counts, dtype=float)
    w = counts.copy()
    for _ in range(iterations):
        fit = fit_parity(phases, parities, w)
        a, b = fit.contrast * np.cos(2 * fit.phase_offset), fit.contrast * np.sin(2 * fit.phase_offset)
        model = a * np.sin(2 * phases) + b * np.cos(2 * phases)
        w = counts / np.maximum(1 - model**2, 1.0 / counts)
    return fit_parity(phases, parities, w)


def bell_fidelity(pop: PopulationEstimate, fit: ParityFit, correct_bias: bool = False,
                  readout: ReadoutModel | None = None) -> tuple[float, float]:
    """F = (P00 + P11 + C) / 2, optionally plus the 3 eps_D / 2 readout bias."""
    s = pop.p00 + pop.p11
    f = 0.5 * (s + fit.contrast)
    if correct_bias:
        f += first_order_bias(readout or ReadoutModel())
    s_err = float(np.sqrt(s * (1 - s) / pop.n_total)) if pop.n_total else 0.0
    return float(f), float(0.5 * np.hypot(s_err, fit.contrast_uncertainty))


def standard_parity_plan(phi0_guess: float = 0.0):
    """Eight phases over [0, pi) at 300 shots plus the two extrema at 1000 each."""
    phases = list(np.arange(8) * np.pi / 8)
    shots = [300] * 8
    # extrema of sin 2(phi + phi0)
    phases += [np.pi / 4 - phi0_guess, 3 * np.pi / 4 - phi0_guess]
    shots += [1000, 1000]
    return np.mod(phases, np.pi), shots


def parity_scan(true_state, phases, shots, prep, readout: ReadoutModel, rng_seed=None,
                pair=(1, 2), ion_count: int = 5):
    """Simulated post-selected parity at each analysis phase.

    Returns (parities, inverse-variance weights, accepted counts, total shots).
    """
    shots = np.broadcast_to(np.asarray(shots, dtype=int), (len(phases),))
    children = seed_sequence(rng_seed).spawn(len(phases))
    par, wts, acc = [], [], []
    for ph, n, ss in zip(phases, shots, children):
        rec = simulate_readout(true_state, prep, readout, int(n), analysis_phase=ph,
                               rng_seed=ss, pair=pair, ion_count=ion_count)
        est = estimate_populations(rec)
        v, e = parity_from_estimate(est)
        par.append(v)
        # floor the variance so all-agreeing points do not get infinite weight
        wts.append(1.0 / max(e**2, 1.0 / est.n_total**2))
        acc.append(est.n_total)
    return np.array(par), np.array(wts), np.array(acc), int(shots.sum())
