"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary
(and immediately with ``-s``).  Long Monte-Carlo criteria are marked slow.
"""

import time

import numpy as np
import pytest

from axialms.chain import (CA40_MASS, HIGH_VOLTAGE_POSITIONS_UM, HIGH_VOLTAGE_SPECTRUM_HZ,
                           TrapConfig, compute_modes, fit_quartic, reference_trap, solve_equilibrium)
from axialms.cli import main
from axialms.config import ScenarioConfig
from axialms.gate import calibrate_pulse, evolve_analytic
from axialms.noise import SOURCES, SourceToggles, error_budget, monte_carlo_fidelity
from axialms.numeric import evolve_numeric
from axialms.pairs import all_pairs
from axialms.readout import (binomial_uncertainty, chain_bell_fidelity, estimate_populations,
                             first_order_bias, fit_parity, simulate_readout)
from axialms.scenarios import (parity_pipeline, noisy_bell_state, pair_setup, readout_check_table,
                               stage_seed, trap_modes, walsh_scan_table)

from test_chain import brute_force_ratios

TWO_PI = 2 * np.pi
RESULTS = []

# single-source errors for pair (1, 2), in the order of SOURCES
BUDGET_REFERENCE = dict(zip(SOURCES, (0.2e-3, 0.2e-3, 0.6e-3, 1.1e-3, 0.05e-3, 0.03e-3)))
# measured (uncorrected) Bell fidelity of pair (1, 2) and its uncertainty
MEASURED_F, MEASURED_F_ERR = 0.993, 0.002


def report(n, title, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_criterion_1_mode_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 9):
        m = compute_modes(TrapConfig(n, CA40_MASS, TWO_PI * 1e6))
        worst = max(worst, np.max(np.abs(m.frequencies / m.frequencies[0] - brute_force_ratios(n))))
    m5 = compute_modes(TrapConfig(5, CA40_MASS, TWO_PI * 1e6))
    r5 = m5.frequencies / m5.frequencies[0]
    ref = np.array([1, 1.7321, 2.4104, 3.0547, 3.6703])
    t_model = time.perf_counter()
    for n in range(2, 9):
        compute_modes(TrapConfig(n, CA40_MASS, TWO_PI * 1e6))
    t_model = time.perf_counter() - t_model
    dev5 = np.max(np.abs(r5 / ref - 1))
    ok = worst < 1e-9 and dev5 < 1e-3 and t_model < 1.0
    assert report(1, "mode-structure oracle", ok,
                  f"max |ratio - oracle| {worst:.1e}, N=5 max rel dev {dev5:.1e}, "
                  f"model runtime {t_model:.3f} s (with oracle {time.perf_counter() - t0:.2f} s)")


def test_criterion_2_measured_spectrum():
    t0 = time.perf_counter()
    target = np.array(HIGH_VOLTAGE_SPECTRUM_HZ)
    harm = compute_modes(reference_trap("high")).frequencies / TWO_PI
    dev_h = np.max(np.abs(harm / target - 1))
    cfg = fit_quartic(TWO_PI * target)
    dev_q = np.max(np.abs(compute_modes(cfg).frequencies / TWO_PI / target - 1))
    outer = solve_equilibrium(reference_trap("high")).positions[-1] * 1e6
    dev_x = abs(outer / HIGH_VOLTAGE_POSITIONS_UM[-1] - 1)
    runtime = time.perf_counter() - t0
    ok = dev_h < 0.03 and dev_q < 0.005 and dev_x < 0.02 and runtime < 1.0
    assert report(2, "measured spectrum", ok,
                  f"harmonic max dev {100 * dev_h:.2f}% (<3%), quartic fit {100 * dev_q:.3f}% (<0.5%, "
                  f"q = {cfg.quartic_coefficient:.4f}), outer ion {outer:.3f} um ({100 * dev_x:.2f}% <2%), "
                  f"{runtime:.2f} s")


def test_criterion_3_ideal_gate():
    t0 = time.perf_counter()
    modes = compute_modes(reference_trap("high"))
    ej, ek = modes.eta(1, 2), modes.eta(2, 2)
    p = calibrate_pulse(120e-6, 2, ej, ek, np.pi / 2, target_pair=(1, 2), target_mode=2)
    fa = evolve_analytic(p, ej, ek).bell_fidelity_ideal
    fn = evolve_numeric(p, modes).bell_fidelity_ideal
    runtime = time.perf_counter() - t0
    ok = abs(1 - fa) < 1e-10 and abs(fn - fa) < 1e-5 and runtime < 10
    assert report(3, "ideal gate", ok,
                  f"1 - F analytic {abs(1 - fa):.1e}, |numeric - analytic| {abs(fn - fa):.1e}, {runtime:.1f} s")


def _curvature(offsets, err, span):
    sel = np.abs(offsets) <= span * (1 + 1e-9)
    return np.polyfit(offsets[sel], err[sel], 2)[0]


def test_criterion_4_walsh_robustness():
    t0 = time.perf_counter()
    cfg = ScenarioConfig()
    offsets = np.linspace(-TWO_PI * 1e3, TWO_PI * 1e3, 21)
    a = walsh_scan_table(cfg, offsets, steps_per_period=64)
    b = walsh_scan_table(cfg, offsets, steps_per_period=128)
    ea, eb = 1 - np.array(a["fidelity"]), 1 - np.array(b["fidelity"])
    n = len(offsets)
    e0, e1 = ea[:n], ea[n:]
    zero = np.argmin(np.abs(offsets))
    half_step = float(np.max(np.abs(ea - eb)))
    # grid points are compared to within the integrator's own resolution
    dominated = bool(np.all(e1 <= e0 + half_step))
    at_zero = max(e0[zero], e1[zero])
    c0 = _curvature(offsets, e0, TWO_PI * 200)
    c1 = _curvature(offsets, e1, TWO_PI * 200)
    runtime = time.perf_counter() - t0
    ok = dominated and at_zero < 1e-5 and 0 < c1 < c0 and half_step < 1e-5 and runtime < 300
    assert report(4, "Walsh robustness", ok,
                  f"order1 <= order0 at all {n} points: {dominated}, error at 0 {at_zero:.1e}, "
                  f"curvature ratio {c1 / c0:.3f}, half-step agreement {half_step:.1e}, {runtime:.0f} s")


@pytest.mark.slow
def test_criterion_5_error_budget():
    t0 = time.perf_counter()
    cfg = ScenarioConfig()
    s = pair_setup(cfg, (1, 2))
    b = error_budget(s.pulse, s.modes, cfg.noise, shots=2000, seed=stage_seed(cfg.seed, "budget"))
    runtime = time.perf_counter() - t0
    parts, ok = [], runtime < 1800
    for name in SOURCES:
        e = b.contributions[name]
        ref = BUDGET_REFERENCE[name]
        tol = max(2 * e.standard_error, 0.5 * ref)
        good = abs(e.error - ref) <= tol
        ok &= good
        parts.append(f"{name} {1e3 * e.error:.3f}(+-{1e3 * e.standard_error:.3f}) vs {1e3 * ref:.2f}"
                     f"{'' if good else ' X'}")
    assert report(5, "error budget (x1e-3)", ok,
                  ", ".join(parts) + f"; total {1e3 * b.total_simulated:.2f}, {runtime:.0f} s")


@pytest.mark.slow
def test_criterion_6_all_pairs():
    t0 = time.perf_counter()
    cfg = ScenarioConfig()
    tm = trap_modes(cfg)
    errors = {}
    for p in all_pairs(cfg.ion_count):
        s = pair_setup(cfg, p, tm=tm)
        errors[p] = monte_carlo_fidelity(s.pulse, s.modes, cfg.noise, cfg.shots["allpairs"],
                                         SourceToggles.all_on(),
                                         seed=stage_seed(cfg.seed, f"allpairs{p}")).error
    runtime = time.perf_counter() - t0
    adjacent = max(e for (j, k), e in errors.items() if k - j == 1)
    worst = max(errors.values())
    ok = adjacent < 0.01 and worst < 0.02 and runtime < 3600
    cells = " ".join(f"{j}{k}:{100 * e:.2f}%" for (j, k), e in errors.items())
    assert report(6, "all-pairs matrix", ok,
                  f"max adjacent {100 * adjacent:.2f}% (<1%), max any {100 * worst:.2f}% (<2%); {cells}; "
                  f"{runtime:.0f} s")


def test_criterion_7_readout_calculus():
    t0 = time.perf_counter()
    cfg = ScenarioConfig()
    t = readout_check_table(cfg.readout, 1_000_000, stage_seed(cfg.seed, "readout"))
    zmax = float(np.max(np.abs(t["z"])))
    deficit = 1 - chain_bell_fidelity(cfg.readout)
    runtime = time.perf_counter() - t0
    ok = zmax < 3 and abs(deficit - 0.003) < 1e-4 and abs(first_order_bias(cfg.readout) - 0.003) < 1e-12 \
        and runtime < 120
    assert report(7, "readout calculus", ok,
                  f"max |z| {zmax:.2f} over {len(t['z'])} cells (<3), Bell deficit {deficit:.6f} vs 0.003, "
                  f"{runtime:.0f} s")


@pytest.mark.slow
def test_criterion_8_parity_pipeline():
    t0 = time.perf_counter()
    cfg = ScenarioConfig()
    _, s = parity_pipeline(cfg)
    sigma = np.hypot(s["fidelity_err"], MEASURED_F_ERR)
    bias = first_order_bias(cfg.readout)
    # like with like: the raw estimate against the measured value, the
    # corrected estimate against the measured value plus the same bias
    raw_ok = abs(s["fidelity_raw"] - MEASURED_F) <= 2 * sigma
    cor_ok = abs(s["fidelity_corrected"] - (MEASURED_F + bias)) <= 2 * sigma
    # discard rate over the per-ion preparation range
    ps = pair_setup(cfg, cfg.pair)
    rho = noisy_bell_state(cfg, ps, 100, stage_seed(cfg.seed, "discard"))
    rates = []
    for prep in (0.94, 0.95):
        rec = simulate_readout(rho, prep, cfg.readout, 1000, rng_seed=stage_seed(cfg.seed, f"prep{prep}"))
        rates.append(estimate_populations(rec).discard_rate)
    rates_ok = all(0.04 <= r <= 0.12 for r in rates) and 0.04 <= s["discard_rate"] <= 0.12
    runtime = time.perf_counter() - t0
    ok = raw_ok and cor_ok and rates_ok and runtime < 600
    assert report(8, "end-to-end parity pipeline", ok,
                  f"P00+P11 {s['p00_plus_p11']:.4f}({s['p00_plus_p11_err']:.4f}), "
                  f"C {s['contrast']:.4f}({s['contrast_err']:.4f}), F raw {s['fidelity_raw']:.4f} vs "
                  f"{MEASURED_F}, corrected {s['fidelity_corrected']:.4f} vs {MEASURED_F + bias:.4f} "
                  f"(2 sigma = {2 * sigma:.4f}), true {s['fidelity_true']:.4f}, "
                  f"discard {s['discard_rate']:.3f} / prep 0.94 {rates[0]:.3f} / 0.95 {rates[1]:.3f}, "
                  f"{runtime:.0f} s")


def test_criterion_9_statistics(tmp_path, capsys):
    # binomial formula against direct sampling
    rng = np.random.default_rng(2024)
    p, n = np.array([0.499, 0.002, 0.001, 0.498]), 933
    draws = rng.multinomial(n, p, size=20_000) / n
    binom_ok = np.allclose(binomial_uncertainty(p, n), draws.std(axis=0), rtol=0.03)
    # parity-fit coverage on its own model with Gaussian noise
    phases = np.linspace(0, np.pi, 8, endpoint=False)
    sig, c_true, p_true = 0.03, 0.987, 0.1
    hit_c = hit_p = 0
    trials = 500
    for _ in range(trials):
        y = c_true * np.sin(2 * (phases + p_true)) + rng.normal(0, sig, phases.size)
        f = fit_parity(phases, y, np.full(phases.size, sig**-2))
        hit_c += abs(f.contrast - c_true) <= f.contrast_uncertainty
        hit_p += abs(f.phase_offset - p_true) <= f.phase_uncertainty
    band = 3 * np.sqrt(0.6827 * 0.3173 / trials)
    cov_ok = abs(hit_c / trials - 0.6827) < band and abs(hit_p / trials - 0.6827) < band
    # seeded determinism through the CLI
    runs = []
    for d in ("a", "b"):
        out = tmp_path / d
        assert main(["readout-check", "--shots", "20000", "--seed", "5", "--out", str(out)]) == 0
        runs.append((out / "readout_check.csv").read_bytes())
    det_ok = runs[0] == runs[1]
    ok = binom_ok and cov_ok and det_ok
    assert report(9, "statistical invariants", ok,
                  f"binomial formula {binom_ok}, coverage C {hit_c / trials:.3f} phi0 {hit_p / trials:.3f} "
                  f"(0.683 +- {band:.3f}), byte-identical rerun {det_ok}")
