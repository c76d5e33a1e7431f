"""Normal (Bachelier) option formulas, conditional mixture swaption pricing
and the two calibration modes.

Under its annuity measure ``A^i`` the pair ``(S^i, X^i)`` is a closed
two-factor system.  Conditional on the vol-factor path ``Z`` the swap rate at
expiry is Gaussian with mean ``S + int sqrt(xi) rho dZ`` and variance
``int xi (1 - rho^2) du``, so a European swaption is an average of normal
Black-Scholes values over vol-factor paths only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .curve import annuity
from .mc import SimConfig, generate_increments, n_steps_between, simulate
from .model import ModelState, SMBModel, ou_variance

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float

    @classmethod
    def from_samples(cls, samples) -> "MCEstimate":
        samples = np.asarray(samples, dtype=float)
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)))


@dataclass(frozen=True)
class SwaptionQuote:
    """Market European swaption on ``S^i`` quoted as a normal implied vol."""

    rate_index: int
    expiry: float
    strike: float
    vol: float

    def __post_init__(self):
        if not self.vol > 0.0:
            raise ValueError("implied normal vol must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SwaptionQuote":
        return cls(int(d["i"]), float(d["expiry"]), float(d["strike"]), float(d["vol"]))

    def to_dict(self) -> dict:
        return {"i": self.rate_index, "expiry": self.expiry, "strike": self.strike, "vol": self.vol}


def _npdf(d):
    return INV_SQRT_2PI * np.exp(-0.5 * d * d)


def nbs(S, sigma, K, t, call: bool = True):
    """Undiscounted normal Black-Scholes value ``(S-K)N(d) + s N'(d)``, ``s = sigma sqrt(t)``.

    ``call=False`` gives the put ``(K-S)N(-d) + s N'(d)``.  A zero total
    standard deviation returns intrinsic value.  Broadcasts over arrays.
    """
    S, sigma, K, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (S, sigma, K, t)))
    sd = sigma * np.sqrt(t)
    m = S - K if call else K - S
    live = sd > 0.0
    safe = np.where(live, sd, 1.0)
    d = m / safe
    value = np.where(live, m * ndtr(d) + safe * _npdf(d), np.maximum(m, 0.0))
    return value[()] if value.ndim == 0 else value


def implied_normal_vol(price: float, S: float, K: float, t: float, call: bool = True) -> float:
    """Invert :func:`nbs` for ``sigma`` by bracketed root finding."""
    if not (math.isfinite(price) and t > 0.0):
        raise ValueError("price must be finite and time to expiry positive")
    intrinsic = max(S - K if call else K - S, 0.0)
    if price <= intrinsic:
        raise ValueError(f"price {price!r} is not above intrinsic value {intrinsic!r}")
    # the time value of nbs is symmetric in S - K; invert it on the out-of-the-money side
    moneyness = abs(S - K)
    otm = price - intrinsic
    root_t = math.sqrt(t)

    def f(sig):
        sd = sig * root_t
        d = moneyness / sd
        with np.errstate(over="ignore"):
            return float(sd * _npdf(d) - moneyness * ndtr(-d)) - otm

    if moneyness == 0.0:
        return otm * math.sqrt(2.0 * math.pi) / root_t
    lo = 1e-300
    hi = max(otm * math.sqrt(2.0 * math.pi) / root_t, 1e-12)
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("could not bracket the implied volatility")
    return brentq(f, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def mixture_accumulators(model: SMBModel, state: ModelState, i: int, config: SimConfig, expiry: float | None = None):
    """Per-path conditional moments of ``S^i`` at expiry, per unit ``sigma0``.

    Returns ``(shift, var, tau)`` so that, for initial vol ``sigma0``, the
    conditional mean is ``S + sigma0 * shift`` and the conditional variance is
    ``sigma0^2 * var``.  Euler steps use left-point forward variance.
    """
    grid = model.grid
    grid.check_rate_index(i)
    expiry = grid.expiry(i) if expiry is None else expiry
    tau = expiry - state.t
    if tau <= 0.0:
        raise ValueError("valuation time must precede the swaption expiry")
    k = i - 1
    p = model.params
    theta, omega, kappa = p.theta[k], p.omega[k], p.kappa[k]
    rho = model.factors.rate_vol_correlation()[k]
    if omega == 0.0:
        # deterministic variance: S^i_T is exactly Gaussian, no vol-factor mixing needed
        rho = 0.0
    n_steps = n_steps_between(state.t, expiry, config.steps_per_year)
    dt = tau / n_steps
    z = generate_increments(config, n_steps, 1)[:, :, 0]
    sq = math.sqrt(dt)
    x = np.full(config.n_paths, state.x[k])
    shift = np.zeros(config.n_paths)
    var = np.zeros(config.n_paths)
    perp = 1.0 - rho * rho
    for step in range(n_steps):
        u = state.t + step * dt
        scale = math.exp(theta * u - 0.5 * omega * omega * float(ou_variance(kappa, u)))
        f = scale * np.exp(omega * x)
        dz = z[:, step] * sq
        if rho != 0.0:
            shift += np.sqrt(f) * (rho * dz)
        var += f * (perp * dt)
        x = x - kappa * x * dt + dz
    return shift, var, tau


def _mixture_samples(S, sigma0, shift, var, tau, K, call):
    return nbs(S + sigma0 * shift, sigma0 * np.sqrt(var / tau), K, tau, call=call)


def mixture_swaption_estimate(
    model: SMBModel, state: ModelState, i: int, K: float, config: SimConfig, call: bool = True, expiry=None
) -> MCEstimate:
    """``E^{A^i}[(S^i_{T_i} - K)^+]`` (or the receiver) from ``state``, with its standard error."""
    shift, var, tau = mixture_accumulators(model, state, i, config, expiry)
    S = state.curve.swap_rates[i - 1]
    return MCEstimate.from_samples(_mixture_samples(S, model.params.sigma0[i - 1], shift, var, tau, K, call))


def mixture_swaption_price(
    model: SMBModel, state: ModelState, i: int, K: float, config: SimConfig, call: bool = True, expiry=None
) -> float:
    """Undiscounted annuity-measure expectation; multiply by ``A^i`` for a price."""
    return mixture_swaption_estimate(model, state, i, K, config, call, expiry).value


def full_mc_swaption_estimate(
    model: SMBModel, state: ModelState, i: int, K: float, config: SimConfig, call: bool = True
) -> MCEstimate:
    """Reference price by simulating ``(S^i, X^i)`` jointly under ``A^i``."""
    cfg = config.replace(measure=f"annuity:{i}")
    block = simulate(model, state, cfg, [model.grid.expiry(i)])
    s_t = block.rates(1)[:, i - 1]
    payoff = np.maximum(s_t - K, 0.0) if call else np.maximum(K - s_t, 0.0)
    return MCEstimate.from_samples(payoff)


def calibrate_sigma0(model: SMBModel, state: ModelState, quote: SwaptionQuote, config: SimConfig) -> float:
    """Solve for ``sigma0^i`` so the mixture price at ``X = 0`` matches the quote.

    Uses one frozen increment stream for every trial value; the accumulators
    do not depend on ``sigma0`` so each trial only re-averages ``nbs``.
    """
    i = quote.rate_index
    if abs(quote.expiry - model.grid.expiry(i)) > 1e-12:
        raise CalibrationError(f"quote expiry {quote.expiry} does not match T_{i}")
    if state.x[i - 1] != 0.0:
        raise CalibrationError("initial calibration assumes X = 0")
    S = float(state.curve.swap_rates[i - 1])
    K = quote.strike
    shift, var, tau = mixture_accumulators(model, state, i, config)
    target = float(nbs(S, quote.vol, K, tau))

    def objective(sig):
        return float(np.mean(_mixture_samples(S, sig, shift, var, tau, K, True))) - target

    lo, hi = 1e-6, 10.0 * quote.vol
    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo * f_hi > 0.0:
        raise CalibrationError(f"sigma0 for rate {i} not bracketed in [{lo}, {hi}]")
    return brentq(objective, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)


def calibrate(model: SMBModel, state: ModelState, quotes, config: SimConfig) -> SMBModel:
    """Calibrate every quoted ``sigma0``; returns the updated model."""
    params = model.params
    for quote in quotes:
        sigma0 = calibrate_sigma0(model.with_params(params), state, quote, config)
        params = params.with_sigma0(quote.rate_index, sigma0)
    return model.with_params(params)


def model_implied_vol(model: SMBModel, state: ModelState, i: int, K: float, config: SimConfig) -> float:
    """Normal implied vol of the model's European swaption on ``S^i``."""
    S = float(state.curve.swap_rates[i - 1])
    call = S <= K  # invert on the out-of-the-money side
    price = mixture_swaption_price(model, state, i, K, config, call=call)
    return implied_normal_vol(price, S, K, model.grid.expiry(i) - state.t, call=call)


def imply_x(model: SMBModel, state: ModelState, quote: SwaptionQuote, config: SimConfig, bounds=(-10.0, 10.0)) -> float:
    """Variance state ``X^i_t`` that reproduces a time-``t`` quote with ``sigma0`` held fixed.

    Only ``S^i`` and ``X^i`` of ``state`` are read.
    """
    i = quote.rate_index
    k = i - 1
    S = float(state.curve.swap_rates[k])
    K = quote.strike
    tau = model.grid.expiry(i) - state.t
    target = float(nbs(S, quote.vol, K, tau))
    sigma0 = model.params.sigma0[k]

    def objective(x):
        trial = ModelState(state.t, state.curve, np.where(np.arange(state.x.size) == k, x, state.x))
        shift, var, _ = mixture_accumulators(model, trial, i, config)
        return float(np.mean(_mixture_samples(S, sigma0, shift, var, tau, K, True))) - target

    lo, hi = bounds
    if objective(lo) * objective(hi) > 0.0:
        raise CalibrationError(f"X for rate {i} not bracketed in [{lo}, {hi}]")
    return brentq(objective, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=200)


def swaption_value(model: SMBModel, state: ModelState, i: int, K: float, config: SimConfig) -> float:
    """Payer swaption price ``A^i E^{A^i}[(S^i - K)^+]``."""
    return annuity(model.grid, state.curve, i) * mixture_swaption_price(model, state, i, K, config)


def variance_swap_rate(model: SMBModel, state: ModelState, i: int, k: int, l: int, config: SimConfig) -> MCEstimate:
    """Discrete variance-swap rate on ``S^i`` over ``[T_k, T_l]`` under ``A^i``.

    ``psi = (1 / (T_l - T_k)) sum_{u=k}^{l-1} E[(S_{u+1} - S_u)^2]``.
    """
    grid = model.grid
    grid.check_rate_index(i)
    if not (0 <= k < l <= i):
        raise ValueError("need 0 <= k < l <= i")
    t_k, t_l = grid.times[k], grid.times[l]
    if t_k < state.t:
        raise ValueError("variance swap observation window has already started")
    obs = [float(t) for t in grid.times[k : l + 1] if t > state.t]
    block = simulate(model, state, config.replace(measure=f"annuity:{i}"), obs)
    path = np.stack([block.rates(j)[:, i - 1] for j in range(block.times.size)], axis=0)
    if t_k > state.t:
        path = path[1:]
    sq = np.sum(np.diff(path, axis=0) ** 2, axis=0) / (t_l - t_k)
    return MCEstimate.from_samples(sq)
