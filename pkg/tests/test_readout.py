import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axialms.readout import (STAGES, ParityFit, PopulationEstimate, ReadoutModel, ShotRecords,
                             apply_distortion_chain, apply_stage, bell_fidelity, binomial_uncertainty,
                             chain_bell_fidelity, classify_shot, distortion_e2, estimate_populations,
                             first_order_bias, fit_parity, fit_parity_binomial, standard_parity_plan,
                             parity_scan, simulate_readout)
from axialms.states import BELL_PHI_PLUS

B, D = True, False
simplex = st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v))
eps = st.floats(0, 0.05)


def shot(targets, spectators=((D, D),) * 3):
    """Per-ion (first, second) outcomes with the targets on ions 1 and 2."""
    ions = list(targets) + list(spectators)
    return [i[0] for i in ions], [i[1] for i in ions]


def test_classify_accepted():
    r = classify_shot(*shot([(B, D), (D, B)]))
    assert r.verdict == "accepted"
    assert r.inferred_state == ("one-or-g", "zero")


def test_classify_spectator_bright_discarded():
    r = classify_shot(*shot([(B, D), (D, B)], [(B, D), (D, D), (D, D)]))
    assert r.verdict == "discarded"


@pytest.mark.parametrize("bad", [(B, B), (D, D)])
def test_classify_target_invalid_or_aux(bad):
    r = classify_shot(*shot([bad, (D, B)]))
    assert r.verdict == "discarded"
    assert r.inferred_state[0] == {(B, B): "invalid", (D, D): "aux"}[bad]


def test_classify_other_pair():
    first = [D, B, D, D, B]
    second = [D, D, D, D, D]
    assert classify_shot(first, second, pair=(2, 5)).verdict == "accepted"
    assert classify_shot(first, second, pair=(1, 2)).verdict == "discarded"


def test_ideal_readout_bell_state():
    rec = simulate_readout(BELL_PHI_PLUS, 1.0, ReadoutModel.ideal(), 10_000, rng_seed=1)
    est = estimate_populations(rec)
    assert est.n_total == 10_000
    assert est.p00 + est.p11 == 1.0
    assert est.discard_rate == 0.0


@pytest.mark.parametrize("prep", [0.94, 0.95])
def test_discard_rate_from_preparation(prep):
    est = estimate_populations(simulate_readout(BELL_PHI_PLUS, prep, ReadoutModel.ideal(), 100_000, rng_seed=2))
    expected = 1 - prep**2
    assert est.discard_rate == pytest.approx(expected, abs=3 * np.sqrt(expected * (1 - expected) / 1e5))
    assert 0.09 <= est.discard_rate <= 0.12


def test_simulate_readout_deterministic():
    a = simulate_readout(BELL_PHI_PLUS, 0.95, ReadoutModel(), 2000, analysis_phase=0.3, rng_seed=9)
    b = simulate_readout(BELL_PHI_PLUS, 0.95, ReadoutModel(), 2000, analysis_phase=0.3, rng_seed=9)
    assert np.array_equal(a.first, b.first) and np.array_equal(a.second, b.second)
    with pytest.raises(ValueError):
        simulate_readout(BELL_PHI_PLUS, 1.2, ReadoutModel(), 10)


def test_records_table_round_trip():
    rec = simulate_readout(BELL_PHI_PLUS, 0.9, ReadoutModel(eps_d=0.05), 300, rng_seed=4)
    back = ShotRecords.from_table(rec.table())
    assert np.array_equal(back.accepted, rec.accepted)
    assert [r.verdict for r in back] == [r.verdict for r in rec]
    assert ShotRecords.from_records(list(rec)).accepted.sum() == rec.accepted.sum()


def test_distortion_identity_at_zero_error():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    for s in STAGES:
        assert np.allclose(apply_stage(p, ReadoutModel.ideal(), s), p, atol=1e-15)


def test_e2_matrix_entries():
    e = 0.002
    m = distortion_e2(e)
    assert m[0, 0] == (1 - e) ** 2
    assert np.allclose(m.sum(axis=0), 1)


def test_bell_through_chain_first_order():
    ro = ReadoutModel()
    out = apply_distortion_chain(np.array([0.5, 0, 0, 0.5]), ro)
    assert out[0] + out[3] == pytest.approx(1 - ro.eps_d, abs=2e-4)


def test_min_parity_e2_only():
    out = apply_distortion_chain(np.array([0, 0.5, 0.5, 0]), ReadoutModel(), {"E2"})
    assert out[3] == pytest.approx(0.002, rel=1e-12)


def test_first_order_bias_values():
    assert first_order_bias(ReadoutModel()) == pytest.approx(0.003)
    assert first_order_bias(ReadoutModel(eps_d=0.0)) == 0
    assert 1 - chain_bell_fidelity(ReadoutModel()) == pytest.approx(0.003, abs=1e-4)
    with pytest.raises(ValueError):
        first_order_bias(ReadoutModel(eps_d=0.2))


def test_unknown_stage():
    with pytest.raises(ValueError):
        apply_distortion_chain([1, 0, 0, 0], ReadoutModel(), {"E7"})


@settings(max_examples=60, deadline=None)
@given(p=simplex, d=eps, c=eps, pp=eps, pi=eps)
def test_map_normalization_and_e5_neutrality(p, d, c, pp, pi):
    ro = ReadoutModel(d, c, pp, pi)
    for s in STAGES:
        assert abs(apply_stage(p, ro, s).sum() - 1) < 1e-12
    assert np.allclose(apply_stage(p, ro, "E5"), p, atol=1e-15)
    assert abs(apply_distortion_chain(p, ro).sum() - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(p=simplex)
def test_double_faults_negligible(p):
    # all channels together vs the sum of single-channel first-order shifts
    ro = ReadoutModel()
    names = ("eps_d", "eps_c", "eps_p", "eps_pi")
    together = apply_distortion_chain(p, ro) - p
    single = sum(apply_distortion_chain(p, ReadoutModel(**{n: (getattr(ro, n) if n == k else 0.0)
                                                           for n in names})) - p for k in names)
    assert np.max(np.abs(together - single)) < 1e-4


def test_population_estimate_bookkeeping():
    est = PopulationEstimate(np.array([0.2, 0.3, 0.1, 0.4]), 933, binomial_uncertainty([0.2, 0.3, 0.1, 0.4], 933),
                             1000)
    assert est.discard_rate == pytest.approx(0.067)
    assert est.uncertainties[3] == pytest.approx(np.sqrt(0.4 * 0.6 / 933))


def test_all_ones_records():
    rec = ShotRecords.from_records([classify_shot(*shot([(B, D), (B, D)]))] * 50)
    est = estimate_populations(rec)
    assert est.p11 == 1.0 and est.uncertainties[3] == 0.0


def test_uniform_records_within_binomial():
    rec = simulate_readout(np.full(4, 0.5), 1.0, ReadoutModel.ideal(), 40_000, rng_seed=8)
    est = estimate_populations(rec)
    assert np.all(np.abs(est.p - 0.25) < 3 * np.sqrt(0.25 * 0.75 / est.n_total))


def test_no_accepted_records():
    rec = ShotRecords.from_records([classify_shot(*shot([(B, B), (D, B)]))])
    with pytest.raises(ValueError):
        estimate_populations(rec)


def test_fit_parity_exact_recovery():
    phases = np.linspace(0, np.pi, 8, endpoint=False)
    y = 0.987 * np.sin(2 * (phases + 0.1))
    fit = fit_parity(phases, y)
    assert fit.contrast == pytest.approx(0.987, abs=1e-10)
    assert fit.phase_offset == pytest.approx(0.1, abs=1e-10)
    assert fit_parity(phases, np.zeros(8)).contrast == 0


def test_fit_parity_degenerate():
    with pytest.raises(ValueError):
        fit_parity([0.1, 0.1 + np.pi / 2, 0.1 + np.pi], [0, 0, 0])
    with pytest.raises(ValueError):
        fit_parity([0.1, 0.5], [0, 0])


def test_standard_plan_contrast_uncertainty():
    # standard shot plan with ideal readout: the fitted contrast error is ~0.004
    # (this Bell phase puts the parity at -cos 2 phi, i.e. phi0 = -pi / 4)
    phases, shots = standard_parity_plan(-np.pi / 4)
    rho = np.outer(BELL_PHI_PLUS, BELL_PHI_PLUS.conj()) * 0.987 + (1 - 0.987) * np.diag([0.5, 0, 0, 0.5])
    par, w, acc, _ = parity_scan(rho, phases, shots, 1.0, ReadoutModel.ideal(), rng_seed=3)
    fit = fit_parity_binomial(phases, par, acc)
    assert fit.phase_offset == pytest.approx(-np.pi / 4, abs=0.02)
    assert 0.002 < fit.contrast_uncertainty < 0.006


def test_parity_fit_bootstrap_agrees_with_covariance():
    rng = np.random.default_rng(12)
    phases, shots = standard_parity_plan(0.0)
    n = np.asarray(shots)
    p_plus = 0.5 * (1 + 0.987 * np.sin(2 * phases))
    fits = [fit_parity_binomial(phases, 2 * rng.binomial(n, p_plus) / n - 1, n) for _ in range(400)]
    boot = np.std([f.contrast for f in fits])
    assert boot == pytest.approx(0.004, abs=0.001)
    assert np.median([f.contrast_uncertainty for f in fits]) == pytest.approx(boot, rel=0.15)


def test_bell_fidelity_examples():
    pop = PopulationEstimate.exact([0.499, 0, 0, 0.499], 933)
    fit = ParityFit(0.987, 0.0, 0.004, 0.01, 0.0, np.eye(2))
    f, sig = bell_fidelity(pop, fit)
    assert f == pytest.approx(0.9925)
    fc, _ = bell_fidelity(pop, fit, correct_bias=True, readout=ReadoutModel())
    assert fc == pytest.approx(0.9955)
    assert 1 - fc == pytest.approx(0.0045)
    assert sig == pytest.approx(0.5 * np.hypot(np.sqrt(0.998 * 0.002 / 933), 0.004))
    perfect = bell_fidelity(PopulationEstimate.exact([0.5, 0, 0, 0.5], 10),
                            ParityFit(1.0, 0.0, 0.0, 0.0, 0.0, np.eye(2)))
    assert perfect[0] == 1.0


def test_readout_model_validation():
    with pytest.raises(ValueError):
        ReadoutModel(eps_d=1.0)
    with pytest.raises(ValueError):
        ReadoutModel(eps_c=-0.1)
