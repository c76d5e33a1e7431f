"""Run configuration and the calibrate -> price -> hedge -> explain pipeline.

A run configuration is one JSON document whose sections may be given inline
or as paths (relative to the document) to separate JSON files::

    {"market": "market.json", "model": {...}, "sim": {...},
     "product": {...}, "pnl": {...}, "spline": {...}, "tolerances": {...}}

The default configuration reproduces the hedged Canary experiment: a
1y/4y receiver Canary on a 10y annual grid, struck at 3%.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .canary import (
    CONTINUATIONS,
    CanarySpec,
    LSMCPricer,
    SemiNestedPricer,
    SplineGridConfig,
    build_vol_spline,
    price_canary_lsmc,
    price_canary_semi_nested,
)
from .curve import CurveState, TenorGrid
from .hedge import Bumps, HedgedContract, HedgeInstruments, PnLReport, build_hedge, fd_gradient, gamma_h, pnl_report
from .mc import SimConfig, simulate
from .model import FactorStructure, ModelState, SMBModel, VarianceParams, loading_vectors
from .swaption import SwaptionQuote, calibrate_sigma0, model_implied_vol

log = logging.getLogger(__name__)

MARKET_RATES = [0.0253, 0.0257, 0.0257, 0.0257, 0.0258, 0.0259, 0.0260, 0.0260, 0.0262]
MARKET_VOLS = [0.00658, 0.00698, 0.00718, 0.00729, 0.00739, 0.00740, 0.00739, 0.00736, 0.00724]

MAX_CLAMP_FRACTION = 1e-4

# reference gamma column (fractions of notional) in cell order (1,1),(2,2),(3,3),(1,2),(1,3),(2,3)
REFERENCE_GAMMA = {
    "semi-nested": [-0.00765, 0.00124, -0.00011, -0.00199, -0.00084, -0.00017],
    "lsmc": [-0.00801, 0.00133, -0.00011, -0.00211, -0.00088, -0.00018],
}
REFERENCE_PNL = {
    "semi-nested": {"explained": -0.45e-4, "realized": -0.48e-4},
    "lsmc": {"explained": -0.48e-4, "realized": -0.58e-4},
}

DEFAULT_CONFIG = {
    "market": {
        "times": [float(t) for t in range(11)],
        "swap_rates": MARKET_RATES,
        "p1": 0.975,
        "quotes": [
            {"i": i + 1, "expiry": float(i + 1), "strike": 0.03, "vol": v} for i, v in enumerate(MARKET_VOLS)
        ],
    },
    "model": {"theta": 0.0, "omega": 0.3, "kappa": 0.1, "rho_rr": 0.9, "rho_rv": 0.2},
    "sim": {"paths": 131072, "steps_per_year": 24, "seq": "sobol", "seed": 1, "measure": "terminal"},
    "product": {"i1": 1, "i2": 4, "strike": 0.03, "type": "receiver"},
    "pnl": {"dh": [0.12, 0.08, 0.08], "dt": 0.01, "gamma_bump": 0.02, "rate_bump": 1e-4, "x_bump": 1e-2},
    "spline": {"n_s": 15, "n_x": 15, "width": 6.0, "inner_paths": 8192},
    "lsmc": {"degree": 3, "continuation": "fitted"},
    "tolerances": {
        "calibration_bp": 0.01,
        "hedge_residual": 1e-6,
        "semi-nested": {"gamma_pp": 0.10, "explained": 0.10e-4, "realized": 0.10e-4},
        "lsmc": {"gamma_pp": 0.15, "explained": 0.15e-4, "realized": 0.15e-4},
        "quick_factor": 3.0,
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MarketData:
    grid: TenorGrid
    swap_rates: np.ndarray
    p1: float
    quotes: tuple

    @classmethod
    def from_dict(cls, d: dict) -> "MarketData":
        try:
            if "times" in d:
                grid = TenorGrid(d["times"])
            else:
                grid = TenorGrid.from_accruals(d["accruals"])
            rates = np.asarray(d["swap_rates"], dtype=float)
            quotes = tuple(SwaptionQuote.from_dict(q) for q in d.get("quotes", []))
            p1 = float(d["p1"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad market data: {exc}") from exc
        if rates.size != grid.n_rates:
            raise ConfigError(f"{rates.size} swap rates for a grid with {grid.n_rates} rates")
        return cls(grid, rates, p1, quotes)

    def curve(self) -> CurveState:
        return CurveState.from_p1(self.grid, self.swap_rates, self.p1)

    def quote_for(self, i: int) -> SwaptionQuote:
        for q in self.quotes:
            if q.rate_index == i:
                return q
        raise ConfigError(f"no swaption quote for rate {i}")


def _continuation(section: dict) -> str:
    value = section.get("continuation", "fitted")
    if value not in CONTINUATIONS:
        raise ConfigError(f"lsmc continuation must be one of {CONTINUATIONS}, got {value!r}")
    return value


@dataclass
class RunConfig:
    raw: dict
    market: MarketData
    sim: SimConfig
    product: CanarySpec
    spline: SplineGridConfig
    model_section: dict
    pnl: dict
    tolerances: dict
    lsmc_degree: int = 3
    lsmc_continuation: str = "fitted"
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        raw = copy.deepcopy(DEFAULT_CONFIG)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            base = path.parent
            user = _read_json(path)
            for key, value in user.items():
                if isinstance(value, str) and key in DEFAULT_CONFIG:
                    value = _read_json(base / value)
                if isinstance(value, dict) and isinstance(raw.get(key), dict):
                    raw[key] = {**raw[key], **value}
                else:
                    raw[key] = value
        for key, value in (overrides or {}).items():
            raw[key] = {**raw.get(key, {}), **value}
        return cls.from_dict(raw, base)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "RunConfig":
        try:
            return cls(
                raw=raw,
                market=MarketData.from_dict(raw["market"]),
                sim=SimConfig.from_dict(raw["sim"]),
                product=CanarySpec.from_dict(raw["product"]),
                spline=SplineGridConfig.from_dict(raw.get("spline", {})),
                model_section=raw["model"],
                pnl=raw.get("pnl", {}),
                tolerances=raw.get("tolerances", {}),
                lsmc_degree=int(raw.get("lsmc", {}).get("degree", 3)),
                lsmc_continuation=_continuation(raw.get("lsmc", {})),
                base_dir=base_dir or Path.cwd(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def uncalibrated_model(self) -> SMBModel:
        m = self.model_section
        grid = self.market.grid
        n = grid.n_rates
        try:
            params = VarianceParams.common(n, m.get("sigma0", 0.0), m["theta"], m["omega"], m["kappa"])
            factors = FactorStructure.from_canary(grid, self.product.i1, m["rho_rr"], m["rho_rv"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad model parameters: {exc}") from exc
        return SMBModel(grid, params, factors)

    @property
    def bumps(self) -> Bumps:
        return Bumps(float(self.pnl.get("rate_bump", 1e-4)), float(self.pnl.get("x_bump", 1e-2)))


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


@dataclass
class Calibration:
    model: SMBModel
    state: ModelState
    residuals_bp: dict


def calibrate_market(cfg: RunConfig) -> Calibration:
    """``sigma0`` for every rate from the quote sheet; residuals in normal bp."""
    model = cfg.uncalibrated_model()
    state = ModelState.initial(cfg.market.curve())
    params = model.params
    residuals = {}
    for i in range(1, model.grid.n_rates + 1):
        quote = cfg.market.quote_for(i)
        sigma0 = calibrate_sigma0(model, state, quote, cfg.sim)
        params = params.with_sigma0(i, sigma0)
    model = model.with_params(params)
    for i in range(1, model.grid.n_rates + 1):
        quote = cfg.market.quote_for(i)
        residuals[i] = (model_implied_vol(model, state, i, quote.strike, cfg.sim) - quote.vol) * 1e4
    return Calibration(model, state, residuals)


def calibration_from_sigma0(cfg: RunConfig, sigma0) -> Calibration:
    model = cfg.uncalibrated_model()
    model = model.with_params(VarianceParams(np.asarray(sigma0, float), *(getattr(model.params, n) for n in ("theta", "omega", "kappa"))))
    return Calibration(model, ModelState.initial(cfg.market.curve()), {})


def make_pricer(cfg: RunConfig, cal: Calibration, method: str):
    if method == "semi-nested":
        surface = build_vol_spline(cal.model, cal.state, cfg.product, cfg.spline, cfg.sim)
        return SemiNestedPricer(cal.model, cfg.product, surface, cfg.sim)
    if method == "lsmc":
        return LSMCPricer(cal.model, cfg.product, cfg.sim, cfg.lsmc_degree, cal.state, cfg.lsmc_continuation)
    raise ConfigError(f"unknown method {method!r}")


def clamp_fraction(cfg: RunConfig, cal: Calibration) -> float:
    """Fraction of rate updates clamped on the outer stream up to ``T_{i2}``."""
    t2 = cfg.market.grid.expiry(cfg.product.i2)
    block = simulate(cal.model, cal.state, cfg.sim.replace(measure="terminal"), [t2])
    return block.clamp_fraction


def price_summary(cfg: RunConfig, cal: Calibration, method: str) -> dict:
    if method == "semi-nested":
        surface = build_vol_spline(cal.model, cal.state, cfg.product, cfg.spline, cfg.sim)
        est = price_canary_semi_nested(cal.model, cal.state, cfg.product, surface, cfg.sim)
        return {"method": method, "price": est.value, "stderr": est.stderr}
    res = price_canary_lsmc(
        cal.model, cal.state, cfg.product, cfg.sim, cfg.lsmc_degree, continuation=cfg.lsmc_continuation
    )
    return {
        "method": method,
        "price": res.price,
        "stderr": res.stderr,
        "r2": res.r2,
        "degree": res.degree,
        "exercise_fraction": res.exercise_fraction,
    }


@dataclass
class HedgeRun:
    pricer: object
    instruments: HedgeInstruments
    hedge: object
    contract: HedgedContract
    residual_delta: np.ndarray
    relative_residual: float


def run_hedge(cfg: RunConfig, cal: Calibration, method: str, pricer=None) -> HedgeRun:
    pricer = pricer or make_pricer(cfg, cal, method)
    strikes = float(cfg.pnl.get("hedge_strike", cfg.product.strike))
    instruments = HedgeInstruments(cal.model, strikes, cfg.sim)
    hedge = build_hedge(cal.model, pricer, cal.state, instruments, cfg.bumps)
    contract = HedgedContract(pricer, hedge)
    residual = fd_gradient(cal.model, contract, cal.state, cfg.bumps)
    scale = float(np.max(np.abs(hedge.contract_delta * cfg.bumps.vector(cal.model.grid.n_rates))))
    rel = float(np.max(np.abs(residual * cfg.bumps.vector(cal.model.grid.n_rates)))) / scale
    return HedgeRun(pricer, instruments, hedge, contract, residual, rel)


def run_pnl(cfg: RunConfig, cal: Calibration, hedge_run: HedgeRun, dh=None, dt=None) -> PnLReport:
    m = loading_vectors(cal.model, cal.state)
    dh = cfg.pnl.get("dh", [0.12, 0.08, 0.08]) if dh is None else dh
    dt = float(cfg.pnl.get("dt", 0.01)) if dt is None else dt
    bump = float(cfg.pnl.get("gamma_bump", 0.02))
    gam = gamma_h(cal.model, hedge_run.contract, cal.state, m, bump)
    return pnl_report(cal.model, hedge_run.contract, cal.state, m, cal.model.factors, dt, dh=dh, gamma=gam)


def table2_checks(report: PnLReport, method: str, tolerances: dict, widen: float = 1.0) -> list[dict]:
    """Compare a report with the reference column; one record per criterion."""
    tol = tolerances.get(method, {})
    out = []
    gamma_tol = float(tol.get("gamma_pp", 0.1)) * widen / 100.0
    from .hedge import CELL_ORDER

    for (i, j), ref in zip(CELL_ORDER, REFERENCE_GAMMA[method]):
        got = float(report.gamma[i, j])
        out.append(_check(f"gamma({i+1},{j+1})", got, ref, gamma_tol))
    ref = REFERENCE_PNL[method]
    out.append(_check("explained", report.explained, ref["explained"], float(tol.get("explained", 0.1e-4)) * widen))
    out.append(_check("realized", report.realized_total, ref["realized"], float(tol.get("realized", 0.1e-4)) * widen))
    return out


def _check(name, got, ref, tol):
    return {"name": name, "value": got, "reference": ref, "tolerance": tol, "pass": bool(abs(got - ref) <= tol)}
