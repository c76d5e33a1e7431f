"""Co-terminal swap market model with Bergomi-type stochastic volatility.

Monte Carlo simulation, swaption calibration, Canary (two-date Bermudan)
pricing and second-order hedged-PnL attribution.
"""

from .canary import CanarySpec, LSMCPricer, SemiNestedPricer, price_canary_lsmc, price_canary_semi_nested
from .curve import CurveState, TenorGrid, annuities, compute_s_factors, discount_factors
from .hedge import HedgeInstruments, PnLReport, build_hedge, gamma_h, pnl_report, project_dh
from .mc import SimConfig, simulate
from .model import FactorStructure, ModelState, SMBModel, VarianceParams, loading_vectors
from .swaption import SwaptionQuote, calibrate, implied_normal_vol, mixture_swaption_price, nbs

__all__ = [
    "CanarySpec",
    "CurveState",
    "FactorStructure",
    "HedgeInstruments",
    "LSMCPricer",
    "ModelState",
    "PnLReport",
    "SMBModel",
    "SemiNestedPricer",
    "SimConfig",
    "SwaptionQuote",
    "TenorGrid",
    "VarianceParams",
    "annuities",
    "build_hedge",
    "calibrate",
    "compute_s_factors",
    "discount_factors",
    "gamma_h",
    "implied_normal_vol",
    "loading_vectors",
    "mixture_swaption_price",
    "nbs",
    "pnl_report",
    "price_canary_lsmc",
    "price_canary_semi_nested",
    "project_dh",
    "simulate",
]
