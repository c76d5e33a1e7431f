import math

import numpy as np
import pytest

from smbm.canary import (
    CanarySpec,
    LSMCPricer,
    PricingError,
    SemiNestedPricer,
    SplineGridConfig,
    VolSurfaceGrid,
    build_vol_spline,
    european_value,
    fit_exercise_rule,
    node_vol,
    poly_basis,
    price_canary_lsmc,
    price_canary_semi_nested,
)
from smbm.curve import CurveState, TenorGrid, annuity
from smbm.experiment import MARKET_RATES, MARKET_VOLS
from smbm.mc import SimConfig
from smbm.model import FactorStructure, ModelState, SMBModel, VarianceParams
from smbm.swaption import SwaptionQuote, calibrate, mixture_accumulators

GRID = TenorGrid.uniform(10)
STATE0 = ModelState.initial(CurveState.from_p1(GRID, MARKET_RATES, 0.975))
SPEC = CanarySpec(1, 4, 0.03)
CFG = SimConfig(n_paths=2**14)
SMALL_GRID = SplineGridConfig(n_s=11, n_x=11, inner_paths=2**12)


def make_model(omega=0.3, rho_rv=0.2):
    params = VarianceParams.common(9, 0.0066, 0.0, omega, 0.1)
    model = SMBModel(GRID, params, FactorStructure.from_canary(GRID, 1, 0.9, rho_rv))
    quotes = [SwaptionQuote(i + 1, float(i + 1), 0.03, v) for i, v in enumerate(MARKET_VOLS)]
    return calibrate(model, STATE0, quotes, SimConfig(n_paths=2**13))


@pytest.fixture(scope="module")
def model():
    return make_model()


@pytest.fixture(scope="module")
def surface(model):
    return build_vol_spline(model, STATE0, SPEC, SMALL_GRID, CFG)


def test_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        CanarySpec(3, 3, 0.03)
    with pytest.raises(ValueError):
        CanarySpec.from_dict({"i1": 1, "i2": 4, "strike": 0.03, "type": "straddle"})
    spec = CanarySpec.from_dict({"i1": 1, "i2": 4, "strike": 0.03, "type": "payer"})
    assert spec.payer and CanarySpec.from_dict(spec.to_dict()) == spec


def test_surface_interpolates_nodes(surface):
    for a in (0, 4, 10):
        for b in (0, 7, 10):
            assert surface(surface.s_nodes[a], surface.x_nodes[b]) == pytest.approx(surface.vols[a, b], abs=1e-12)


def test_surface_flat_extrapolation(surface):
    s_hi, x_lo = surface.s_nodes[-1], surface.x_nodes[0]
    assert surface(s_hi + 0.05, x_lo - 3.0) == surface(s_hi, x_lo)


def test_surface_rejects_bad_nodes():
    with pytest.raises(PricingError):
        VolSurfaceGrid(np.linspace(0, 1, 4), np.linspace(0, 1, 4), -np.ones((4, 4)))


def test_surface_flat_in_x_without_vol_of_vol():
    flat = build_vol_spline(make_model(omega=0.0), STATE0, SPEC, SMALL_GRID, CFG)
    np.testing.assert_allclose(flat.vols, np.repeat(flat.vols[:, :1], 11, axis=1), rtol=1e-12)


def test_surface_refinement(model, surface):
    # vols priced directly at cell centres agree with the spline to 0.1 bp
    inner = CFG.replace(n_paths=SMALL_GRID.inner_paths)
    t1 = GRID.expiry(1)
    s_mid = 0.5 * (surface.s_nodes[3:8] + surface.s_nodes[4:9])
    x_mid = 0.5 * (surface.x_nodes[3:8] + surface.x_nodes[4:9])
    for xv in x_mid:
        x = np.zeros(9)
        x[3] = xv
        acc = mixture_accumulators(model, ModelState(t1, STATE0.curve, x), 4, inner)
        for sv in s_mid:
            direct = node_vol(model, SPEC, sv, acc)
            assert abs(surface(sv, xv) - direct) < 0.1e-4


def test_deep_in_the_money_receiver_is_the_swap(model):
    spec = CanarySpec(1, 4, 0.5)
    surface = build_vol_spline(model, STATE0, spec, SMALL_GRID, CFG)
    est = price_canary_semi_nested(model, STATE0, spec, surface, CFG)
    swap = annuity(GRID, STATE0.curve, 1) * (0.5 - MARKET_RATES[0])
    assert abs(est.value - swap) < 3 * est.stderr + 1e-12 * swap


def test_semi_nested_bounds(model, surface):
    est = price_canary_semi_nested(model, STATE0, SPEC, surface, CFG)
    e1 = european_value(model, STATE0, SPEC, 1, CFG)
    e4 = european_value(model, STATE0, SPEC, 4, CFG)
    assert est.value >= max(e1.value, e4.value) - 3 * math.hypot(est.stderr, max(e1.stderr, e4.stderr))
    assert est.value <= e1.value + e4.value + 3 * math.hypot(est.stderr, e1.stderr, e4.stderr)


def _bumped(indices, size=1e-4):
    rates = STATE0.curve.swap_rates.copy()
    rates[indices] += size
    return ModelState(0.0, CurveState(STATE0.curve.terminal_discount, rates), STATE0.x)


def test_semi_nested_monotone_in_underlying_rates(model, surface):
    pricer = SemiNestedPricer(model, SPEC, surface, CFG)
    base = pricer(STATE0)
    assert pricer(_bumped([0])) < base
    assert pricer(_bumped([3])) < base
    assert pricer(_bumped(slice(None))) < base


def test_receiver_value_rises_with_later_rates(model, surface):
    # at fixed P^e a higher S^2 raises every earlier annuity, so the receiver is not
    # monotone in each co-terminal coordinate separately
    pricer = SemiNestedPricer(model, SPEC, surface, CFG)
    assert pricer(_bumped([1])) > pricer(STATE0)


def test_poly_basis_columns():
    b = poly_basis(np.array([2.0]), np.array([3.0]), 3)
    assert b.shape == (1, 10)
    assert sorted(b[0].tolist()) == sorted([1, 2, 3, 4, 6, 9, 8, 12, 18, 27])


def test_lsmc_always_exercise_equals_swap():
    model = make_model(omega=0.0)
    spec = CanarySpec(1, 4, -0.5, payer=True)
    res = price_canary_lsmc(model, STATE0, spec, CFG)
    swap = annuity(GRID, STATE0.curve, 1) * (MARKET_RATES[0] + 0.5)
    assert res.exercise_fraction == 1.0
    assert abs(res.price - swap) < 3 * res.stderr + 1e-12 * swap


def test_lsmc_without_continuation_equals_first_european():
    model = make_model(omega=0.0)
    spec = CanarySpec(1, 4, -0.5)  # receiver far out of the money: nothing at either date
    res = price_canary_lsmc(model, STATE0, spec, CFG)
    e1 = european_value(model, STATE0, spec, 1, CFG)
    assert abs(res.price - e1.value) <= 3 * math.hypot(res.stderr, e1.stderr)


def test_lsmc_reports_fit(model):
    res = price_canary_lsmc(model, STATE0, SPEC, CFG)
    assert 0.0 < res.r2 <= 1.0
    assert res.degree == 3
    assert 0.0 < res.exercise_fraction < 1.0


def test_lsmc_close_to_semi_nested(model, surface):
    sn = price_canary_semi_nested(model, STATE0, SPEC, surface, SimConfig(n_paths=2**15))
    ls = price_canary_lsmc(model, STATE0, SPEC, SimConfig(n_paths=2**15))
    assert abs(sn.value - ls.price) < 1.0e-4


def test_lsmc_path_convergence(model):
    # doubling from the production path count
    a = price_canary_lsmc(model, STATE0, SPEC, SimConfig(n_paths=2**17)).price
    b = price_canary_lsmc(model, STATE0, SPEC, SimConfig(n_paths=2**18)).price
    assert abs(a - b) < 0.3e-4


def test_lsmc_realized_continuation_convergence(model):
    cfg16, cfg17 = SimConfig(n_paths=2**16), SimConfig(n_paths=2**17)
    a = price_canary_lsmc(model, STATE0, SPEC, cfg16, continuation="realized").price
    b = price_canary_lsmc(model, STATE0, SPEC, cfg17, continuation="realized").price
    assert abs(a - b) < 0.3e-4


def test_lsmc_continuation_variants_agree(model):
    cfg = SimConfig(n_paths=2**15)
    fitted = price_canary_lsmc(model, STATE0, SPEC, cfg)
    realized = price_canary_lsmc(model, STATE0, SPEC, cfg, continuation="realized")
    assert fitted.exercise_fraction == realized.exercise_fraction
    assert abs(fitted.price - realized.price) < 1.0e-4
    with pytest.raises(ValueError):
        price_canary_lsmc(model, STATE0, SPEC, cfg, continuation="max")


def test_frozen_rule_reproduces_refit_at_base(model):
    cfg = SimConfig(n_paths=2**13)
    rule = fit_exercise_rule(model, STATE0, SPEC, cfg)
    assert price_canary_lsmc(model, STATE0, SPEC, cfg, rule=rule).price == price_canary_lsmc(model, STATE0, SPEC, cfg).price
    pricer = LSMCPricer(model, SPEC, cfg, base_state=STATE0)
    assert pricer(STATE0) == price_canary_lsmc(model, STATE0, SPEC, cfg).price
    bumped = _bumped([0])
    assert pricer(bumped) == price_canary_lsmc(model, bumped, SPEC, cfg, rule=rule).price


def test_frozen_rule_gives_smooth_revaluation(model):
    # with a fixed rule and fitted continuation the value is continuous in the state:
    # second differences shrink like h^2
    cfg = SimConfig(n_paths=2**13)
    pricer = LSMCPricer(model, SPEC, cfg, base_state=STATE0)
    v0 = pricer(STATE0)
    d2 = [abs(pricer(_bumped([0], h)) - 2 * v0 + pricer(_bumped([0], -h))) for h in (1e-4, 0.5e-4)]
    assert d2[1] < 0.4 * d2[0]


def test_pricers_are_deterministic(model, surface):
    assert SemiNestedPricer(model, SPEC, surface, CFG)(STATE0) == SemiNestedPricer(model, SPEC, surface, CFG)(STATE0)
    assert LSMCPricer(model, SPEC, CFG)(STATE0) == LSMCPricer(model, SPEC, CFG)(STATE0)
