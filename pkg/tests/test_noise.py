import numpy as np
import pytest
from dataclasses import replace
from scipy.linalg import expm
from scipy.optimize import curve_fit

from axialms.chain import TrapConfig, CA40_MASS, compute_modes
from axialms.noise import (NoiseModel, SourceToggles, _dw_factors, crosstalk_operating_point,
                           debye_waller_sigma, decay_error, draw_shots, mean_d_population,
                           monte_carlo_fidelity, nbar_for_debye_waller, raman_crosstalk_population,
                           sample_shot, sigma_from_t2, simulate_ramsey)
from axialms.states import thermal_weights

TWO_PI = 2 * np.pi
OFF = SourceToggles()


def test_sigma_from_t2_values():
    assert sigma_from_t2(float("inf")) == 0
    assert sigma_from_t2(4.3e-3) / TWO_PI == pytest.approx(52.3, abs=0.05)
    assert sigma_from_t2(2e-3) == pytest.approx(2 * sigma_from_t2(4e-3))
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            sigma_from_t2(bad)
    with pytest.raises(ValueError):
        sigma_from_t2(1e-3, "laser")


def test_ramsey_round_trip():
    t2 = 4.3e-3
    times = np.linspace(0, 3 * t2, 40)
    contrast = simulate_ramsey(sigma_from_t2(t2), times, 200_000, rng_seed=3)
    (fit,), _ = curve_fit(lambda t, T: np.exp(-(t / T) ** 2), times, contrast, p0=[3e-3])
    assert fit == pytest.approx(t2, rel=0.05)


def test_sample_shot_noiseless_and_deterministic():
    assert sample_shot(NoiseModel.noiseless(), 2, 5) == sample_shot(NoiseModel.noiseless(), 2, 6)
    s = sample_shot(NoiseModel.noiseless(), 2, 5)
    assert (s.detuning_offset, s.spin_detuning, s.rabi_scale) == (0.0, 0.0, 1.0)
    assert sample_shot(NoiseModel(), 3, 11) == sample_shot(NoiseModel(), 3, 11)
    with pytest.raises(KeyError):
        sample_shot(NoiseModel(), 5, 0)


def test_rabi_scale_spread():
    params, _ = draw_shots(NoiseModel(), 2, 100_000, 1, SourceToggles(rabi=True))
    assert np.std(params.rabi_scale) == pytest.approx(0.008, rel=0.01)
    assert np.all(params.detuning_offset == 0) and np.all(params.spin_detuning == 0)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(spin_t2star=-1.0)
    with pytest.raises(ValueError):
        NoiseModel(heating_rate={2: -3.0})
    with pytest.raises(ValueError):
        NoiseModel(rabi_sigma_total=0.02)
    # ac Stark shift is a signed knob
    assert NoiseModel(ac_stark_shift=-1.0).ac_stark_shift == -1.0


def test_decay_error_examples():
    assert decay_error(0.0, 1.168, 0.5) == 0
    assert decay_error(120e-6, 1.168, 0.5) == pytest.approx(5.1e-5, abs=0.05e-5)
    assert decay_error(240e-6, 1.168, 0.5) == pytest.approx(2 * decay_error(120e-6, 1.168, 0.5))
    with pytest.raises(ValueError):
        decay_error(1e-4, 0.0, 0.5)


def test_mean_d_population_near_one_half_per_ion(pair12):
    j, k = pair12.pair
    m = pair12.modes
    d = mean_d_population(pair12.pulse, m.eta(j, 2), m.eta(k, 2))
    # ends in an equal superposition of zero and two flips, starts with none
    assert 0.3 < d < 1.0


def test_dw_factor_matches_displacement_matrix_elements():
    eta = 0.07
    n = 30
    a = np.diag(np.sqrt(np.arange(1, n)), 1)
    d = expm(1j * eta * (a + a.T))
    for k in range(5):
        assert _dw_factors(eta**2, k) == pytest.approx(d[k, k].real, abs=1e-12)


def two_ion_modes():
    return compute_modes(TrapConfig(2, CA40_MASS, TWO_PI * 0.55e6))


def test_debye_waller_zero_occupation():
    assert debye_waller_sigma(two_ion_modes(), 0.0, 1) == 0.0


def test_debye_waller_enumeration_oracle():
    m = two_ion_modes()
    nbar = 0.4
    w = thermal_weights(nbar)
    e1, e2 = m.lamb_dicke[0, 1], m.lamb_dicke[1, 1]
    vals = []
    for n in range(len(w)):
        ef = np.exp(-e1**2 / 2) * np.polynomial.laguerre.lagval(e1**2, [0] * n + [1])
        ek = np.exp(-e2**2 / 2) * np.polynomial.laguerre.lagval(e2**2, [0] * n + [1])
        vals.append(np.sqrt(ef * ek))
    vals = np.array(vals)
    mean = np.sum(w * vals)
    ref = np.sqrt(np.sum(w * (vals - mean) ** 2)) / mean
    assert debye_waller_sigma(m, [0.0, nbar], 1) == pytest.approx(ref, rel=1e-10)


def test_debye_waller_inverse_lookup(high_modes):
    n = nbar_for_debye_waller(high_modes, 0.0055, 2)
    assert debye_waller_sigma(high_modes, n, 2) == pytest.approx(0.0055, rel=1e-6)
    assert debye_waller_sigma(high_modes, n / 2, 2) < 0.0055
    with pytest.raises(ValueError):
        debye_waller_sigma(high_modes, -0.1, 2)


def test_raman_crosstalk():
    assert raman_crosstalk_population(1.0, 0.0) == 1.0
    assert raman_crosstalk_population(1e-3, 1.0) == pytest.approx(1e-6, rel=1e-5)
    assert crosstalk_operating_point() < 2e-6
    with pytest.raises(ValueError):
        raman_crosstalk_population(0.0, 0.0)


def test_noiseless_limit(pair12):
    e = monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel.noiseless(), 100, OFF)
    assert e.error < 1e-4
    quiet = monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel.noiseless(), 100,
                                 SourceToggles(rabi=True, spin=True, motional=True, heating=True))
    assert quiet.error < 1e-4


def test_shot_floor(pair12):
    with pytest.raises(ValueError):
        monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel(), 99, OFF)


def test_seeded_reproducibility(pair12):
    tog = SourceToggles(rabi=True, motional=True)
    a = monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel(), 100, tog, seed=4, steps_per_period=32)
    b = monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel(), 100, tog, seed=4, steps_per_period=32)
    c = monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel(), 100, tog, seed=5, steps_per_period=32)
    assert a == b
    assert a != c


def test_heating_monotone_in_rate(pair12):
    errs = []
    for g in (0.0, 30.0, 300.0):
        noise = replace(NoiseModel(), heating_rate={2: g, 3: g, 4: g})
        errs.append(monte_carlo_fidelity(pair12.pulse, pair12.modes, noise, 100,
                                         SourceToggles(heating=True)).error)
    assert errs[0] <= errs[1] <= errs[2]


def test_heating_trajectories_match_master_equation(pair12):
    # a loud heating rate so 400 trajectories resolve it against the Lindblad result
    noise = replace(NoiseModel.noiseless(), heating_rate={2: 2000.0, 3: 0.0, 4: 0.0},
                    rabi_sigma_total=0.008, rabi_sigma_laser=0.0025, rabi_sigma_debye_waller=0.0055)
    me = monte_carlo_fidelity(pair12.pulse, pair12.modes, noise, 100, SourceToggles(heating=True)).error
    # rabi noise is switched on only to force the trajectory path; sigma is tiny next to heating
    tiny = replace(noise, rabi_sigma_total=1e-6, rabi_sigma_laser=0.4e-6, rabi_sigma_debye_waller=0.6e-6)
    tr = monte_carlo_fidelity(pair12.pulse, pair12.modes, tiny, 400,
                              SourceToggles(heating=True, rabi=True), seed=2, steps_per_period=32)
    assert abs(tr.error - me) < 3 * tr.standard_error + 2e-4


@pytest.mark.slow
def test_standard_error_scaling(pair12):
    se = [monte_carlo_fidelity(pair12.pulse, pair12.modes, NoiseModel(), n, SourceToggles(motional=True),
                               seed=n, steps_per_period=32).standard_error for n in (100, 400, 1600)]
    assert se[0] / se[1] == pytest.approx(2.0, rel=0.3)
    assert se[1] / se[2] == pytest.approx(2.0, rel=0.3)


def test_toggles():
    assert SourceToggles.only("spin") == SourceToggles(spin=True)
    with pytest.raises(ValueError):
        SourceToggles.only("laser")
