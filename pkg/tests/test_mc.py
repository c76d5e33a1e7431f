import math

import numpy as np
import pytest

from smbm.curve import CurveState, TenorGrid, deflated_annuities
from smbm.experiment import MARKET_RATES
from smbm.mc import SimConfig, SimulationError, generate_increments, simulate, time_grid
from smbm.model import FactorStructure, ModelState, SMBModel, VarianceParams, ou_variance

GRID = TenorGrid.uniform(10)


def make_model(sigma0=0.0066, omega=0.3, kappa=0.1, rho_rv=0.2, theta=0.0):
    params = VarianceParams.common(9, sigma0, theta, omega, kappa)
    return SMBModel(GRID, params, FactorStructure.from_canary(GRID, 1, 0.9, rho_rv))


STATE0 = ModelState.initial(CurveState.from_p1(GRID, MARKET_RATES, 0.975))


def test_config_round_trip_and_validation():
    cfg = SimConfig.from_dict({"paths": 1024, "steps_per_year": 12, "seq": "pseudorandom", "seed": 7, "measure": "annuity:3"})
    assert cfg.annuity_index == 3
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"paths": 1}, {"steps_per_year": 0}, {"seq": "halton"}, {"measure": "spot"}):
        with pytest.raises(ValueError):
            SimConfig.from_dict(bad)


def test_increments_deterministic_and_read_only():
    cfg = SimConfig(n_paths=1024, seed=3)
    a = generate_increments(cfg, 5, 3)
    b = generate_increments(SimConfig(n_paths=1024, seed=3), 5, 3)
    assert np.array_equal(a, b)
    assert not a.flags.writeable
    c = generate_increments(SimConfig(n_paths=1024, seed=4), 5, 3)
    assert not np.array_equal(a, c)


def test_pseudorandom_fallback_reproducible():
    cfg = SimConfig(n_paths=512, sequence="pseudorandom", seed=11)
    assert np.array_equal(generate_increments(cfg, 4, 3), generate_increments(cfg, 4, 3))


def test_increment_moments():
    n = 2**14
    z = generate_increments(SimConfig(n_paths=n), 24, 3)
    assert np.all(np.isfinite(z))
    assert np.abs(z.mean(axis=0)).max() < 4.0 / math.sqrt(n)
    assert np.abs(z.var(axis=0) - 1.0).max() < 0.05


def test_dimension_limit():
    with pytest.raises(SimulationError):
        generate_increments(SimConfig(n_paths=16), 8000, 3)


def test_time_grid_hits_observations():
    times, idx = time_grid(0.0, [1.0, 4.0], 24)
    assert times[idx[0]] == 1.0 and times[idx[1]] == 4.0
    assert len(times) == 1 + 24 + 72
    times, idx = time_grid(0.01, [1.0], 24)
    assert len(times) - 1 == 24 and times[-1] == 1.0


def test_zero_vol_paths_are_constant():
    block = simulate(make_model(sigma0=0.0), STATE0, SimConfig(n_paths=256), [1.0, 3.0])
    for k in range(3):
        np.testing.assert_array_equal(block.rates(k), np.broadcast_to(STATE0.curve.swap_rates, (256, 9)))


def test_initial_row_is_input_state():
    block = simulate(make_model(), STATE0, SimConfig(n_paths=128), [2.0])
    np.testing.assert_array_equal(block.rates(0)[5], STATE0.curve.swap_rates)
    np.testing.assert_array_equal(block.x(0)[5], 0.0)
    assert block.index(2.0) == 1
    with pytest.raises(KeyError):
        block.index(1.5)


def test_simulation_deterministic():
    cfg = SimConfig(n_paths=512)
    a = simulate(make_model(), STATE0, cfg, [1.0, 2.0])
    b = simulate(make_model(), STATE0, cfg, [1.0, 2.0])
    assert np.array_equal(a.values, b.values)


def test_horizon_guard():
    with pytest.raises(ValueError):
        simulate(make_model(), STATE0, SimConfig(n_paths=16), [11.0])


def test_annuity_measure_gaussian_oracle():
    # deterministic variance and a single moving rate: S_T is exactly Gaussian
    i, T = 4, 4.0
    model = make_model(omega=0.0, rho_rv=0.0, theta=0.05)
    block = simulate(model, STATE0, SimConfig(n_paths=2**15, measure=f"annuity:{i}"), [T])
    s_t = block.rates(1)[:, i - 1]
    # only S^4 moved
    others = np.delete(block.rates(1), i - 1, axis=1)
    np.testing.assert_array_equal(others, np.broadcast_to(np.delete(STATE0.curve.swap_rates, i - 1), others.shape))
    n = s_t.size
    # Euler with left-point variance on the 24/yr grid
    steps = np.arange(96) / 24.0
    var_ref = np.sum(0.0066**2 * np.exp(0.05 * steps)) / 24.0
    sample_var = s_t.var(ddof=1)
    se = sample_var * math.sqrt(2.0 / (n - 1))
    assert abs(sample_var - var_ref) < 3 * se
    assert abs(s_t.mean() - STATE0.curve.swap_rates[i - 1]) < 3 * s_t.std() / math.sqrt(n)


def test_annuity_measure_martingales():
    i, T, T_star = 5, 3.0, 5.0
    model = make_model()
    block = simulate(model, STATE0, SimConfig(n_paths=2**15, measure=f"annuity:{i}"), [T])
    s_t = block.rates(1)[:, i - 1]
    x_t = block.x(1)[:, i - 1]
    n = s_t.size
    assert abs(s_t.mean() - STATE0.curve.swap_rates[i - 1]) < 3 * s_t.std() / math.sqrt(n)
    w = 0.3 * math.exp(-0.1 * (T_star - T))
    xi_t = 0.0066**2 * np.exp(w * x_t - 0.5 * w * w * float(ou_variance(0.1, T)))
    assert abs(xi_t.mean() - 0.0066**2) < 3 * xi_t.std() / math.sqrt(n)


def test_terminal_measure_deflated_bonds_are_martingales():
    model = make_model()
    block = simulate(model, STATE0, SimConfig(n_paths=2**14), [1.0, 3.0, 5.0])
    rates0 = STATE0.curve.swap_rates
    ref = 1.0 + rates0 * deflated_annuities(rates0, GRID.accruals)
    for k in (1, 2, 3):
        r = block.rates(k)
        ratio = 1.0 + r * deflated_annuities(r, GRID.accruals)
        se = ratio.std(axis=0) / math.sqrt(ratio.shape[0])
        assert np.all(np.abs(ratio.mean(axis=0) - ref) < 3 * se + 1e-15)
    assert block.clamp_count == 0


def test_clamp_is_counted():
    model = make_model(sigma0=0.5, omega=0.0)
    block = simulate(model, STATE0, SimConfig(n_paths=256, steps_per_year=4), [1.0])
    assert block.clamp_count > 0
    assert 0.0 < block.clamp_fraction <= 1.0
    assert np.all(1.0 + block.rates(1) > 0.0)
