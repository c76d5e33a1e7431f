"""Model state, forward variance, terminal-measure drifts and factor structure.

Each co-terminal swap rate ``S^i`` carries a one-factor lognormal forward
variance curve driven by an Ornstein-Uhlenbeck state ``X^i``:

    xi_t^{i,T} = xi_0^{i,T} exp(w e^{-k(T-t)} X_t - 0.5 w^2 e^{-2k(T-t)} v(t)),
    xi_0^{i,T} = sigma0^2 exp(theta T),    v(t) = (1 - e^{-2kt}) / (2k).

All rates and variance states are driven by three Brownian factors: two
rate factors loaded through an angle ``alpha^(i)`` and one vol factor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .curve import CurveState, TenorGrid, suffix_sums

KAPPA_EPS = 1e-8


def _per_rate(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    arr.setflags(write=False)
    if arr.shape != (n,):
        raise ValueError(f"{name} must be scalar or length {n}")
    return arr


@dataclass(frozen=True)
class VarianceParams:
    """Static per-rate variance-curve parameters."""

    sigma0: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        n = np.size(self.sigma0)
        for name in ("sigma0", "theta", "omega", "kappa"):
            object.__setattr__(self, name, _per_rate(getattr(self, name), n, name))
        if np.any(self.sigma0 < 0.0):
            raise ValueError("sigma0 must be non-negative")
        if np.any(self.kappa < 0.0):
            raise ValueError("kappa must be non-negative")

    @classmethod
    def common(cls, n_rates: int, sigma0, theta=0.0, omega=0.0, kappa=0.0) -> "VarianceParams":
        return cls(_per_rate(sigma0, n_rates, "sigma0"), theta, omega, kappa)

    @property
    def n_rates(self) -> int:
        return self.sigma0.size

    def with_sigma0(self, i: int, value: float) -> "VarianceParams":
        sigma0 = self.sigma0.copy()
        sigma0[i - 1] = value
        return replace(self, sigma0=sigma0)


@dataclass(frozen=True)
class FactorStructure:
    """Three-factor loading: rate ``i`` loads ``(cos a_i, sin a_i, 0)``, vols load ``(0, 0, 1)``.

    Factor correlation is ``rho^{C,12} = rho^{C,23} = 0`` and
    ``rho^{C,13} = rho_rv``.
    """

    alpha: np.ndarray
    rho_rv: float

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        if not -1.0 <= self.rho_rv <= 1.0:
            raise ValueError("rho_rv must lie in [-1, 1]")

    @classmethod
    def from_canary(cls, grid: TenorGrid, i1: int, rho_rr: float, rho_rv: float) -> "FactorStructure":
        """Angles interpolated linearly in ``T_j`` from ``arccos(rho_rr)`` at ``i1``
        to ``-arccos(rho_rr)`` at ``e-1``; rates before ``i1`` share the ``i1`` angle."""
        grid.check_rate_index(i1)
        if not -1.0 <= rho_rr <= 1.0:
            raise ValueError("rho_rr must lie in [-1, 1]")
        a1 = float(np.arccos(rho_rr))
        last = grid.n_rates
        times = grid.times[1 : last + 1]
        alpha = np.full(last, a1)
        if last > i1:
            t1, tl = grid.times[i1], grid.times[last]
            w = (times - t1) / (tl - t1)
            alpha = np.where(times >= t1, (1.0 - w) * a1 - w * a1, a1)
        return cls(alpha, rho_rv)

    @property
    def n_rates(self) -> int:
        return self.alpha.size

    @property
    def factor_correlation(self) -> np.ndarray:
        rc = np.eye(3)
        rc[0, 2] = rc[2, 0] = self.rho_rv
        return rc

    @property
    def factor_cholesky(self) -> np.ndarray:
        """Lower-triangular ``L`` with ``L L^T = rho^C``; valid for ``|rho_rv| <= 1``."""
        r = self.rho_rv
        return np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [r, 0.0, np.sqrt(max(1.0 - r * r, 0.0))]])

    @property
    def rate_loadings(self) -> np.ndarray:
        """``(N_R, 2)`` array of ``(cos a_i, sin a_i)``."""
        return np.column_stack([np.cos(self.alpha), np.sin(self.alpha)])

    def loading_matrix(self) -> np.ndarray:
        """``(N_S, 3)`` loadings of every state Brownian on the three factors."""
        n = self.n_rates
        out = np.zeros((2 * n, 3))
        out[:n, :2] = self.rate_loadings
        out[n:, 2] = 1.0
        return out

    def rate_vol_correlation(self) -> np.ndarray:
        """``rho^{Y, i(i+N_R)} = cos(a_i) rho_rv``."""
        return np.cos(self.alpha) * self.rho_rv


def correlation_matrix(factors: FactorStructure) -> np.ndarray:
    """State correlation ``rho^Y`` (``N_S x N_S``), written out block by block."""
    n = factors.n_rates
    a = factors.alpha
    out = np.empty((2 * n, 2 * n))
    out[:n, :n] = np.cos(a[:, None] - a[None, :])
    cross = np.repeat((np.cos(a) * factors.rho_rv)[:, None], n, axis=1)
    out[:n, n:] = cross
    out[n:, :n] = cross.T
    out[n:, n:] = 1.0
    return out


@dataclass(frozen=True)
class SMBModel:
    """Tenor grid plus static parameters: everything except the state."""

    grid: TenorGrid
    params: VarianceParams
    factors: FactorStructure

    def __post_init__(self):
        n = self.grid.n_rates
        if self.params.n_rates != n or self.factors.n_rates != n:
            raise ValueError("grid, params and factors disagree on the number of rates")

    def with_params(self, params: VarianceParams) -> "SMBModel":
        return replace(self, params=params)


@dataclass(frozen=True)
class ModelState:
    """``Y = (S^1..S^{N_R}, X^1..X^{N_R})`` at time ``t`` plus ``P^e``."""

    t: float
    curve: CurveState
    x: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if x.shape != self.curve.swap_rates.shape:
            raise ValueError("x must have one entry per swap rate")

    @classmethod
    def initial(cls, curve: CurveState) -> "ModelState":
        return cls(0.0, curve, np.zeros_like(curve.swap_rates))

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.curve.swap_rates, self.x])


def ou_variance(kappa, t):
    """``E[X_t^2]`` for ``dX = -k X dt + dZ``, ``X_0 = 0``."""
    kappa = np.asarray(kappa, dtype=float)
    t = np.asarray(t, dtype=float)
    safe = np.where(kappa < KAPPA_EPS, 1.0, kappa)
    return np.where(kappa < KAPPA_EPS, t, -np.expm1(-2.0 * safe * t) / (2.0 * safe))


def initial_variance(params: VarianceParams, T):
    """``xi_0^{i,T} = sigma0_i^2 exp(theta_i T)``, broadcast over ``T``."""
    return params.sigma0**2 * np.exp(params.theta * np.asarray(T, dtype=float)[..., None])


def variance_factor(params: VarianceParams, t, T, x):
    """``xi_t^{i,T} / xi_0^{i,T}``; ``x`` broadcasts against the rate axis."""
    decay = np.exp(-params.kappa * (np.asarray(T) - np.asarray(t)))
    w = params.omega * decay
    return np.exp(w * x - 0.5 * w * w * ou_variance(params.kappa, t))


def spot_variance(params: VarianceParams, t: float, x):
    """Instantaneous variances ``xi_t^{i,t}`` for states ``x`` of shape ``(..., N_R)``."""
    return params.sigma0**2 * np.exp(params.theta * t) * variance_factor(params, t, t, x)


def spot_variance_1d(params: VarianceParams, k: int, t: float, x):
    """``xi_t^{k+1,t}`` for a single rate (0-based ``k``) and an array of states."""
    w = params.omega[k]
    v = ou_variance(params.kappa[k], t)
    return params.sigma0[k] ** 2 * np.exp(params.theta[k] * t) * np.exp(w * x - 0.5 * w * w * v)


def xi(params: VarianceParams, state: ModelState, i: int, T: float) -> float:
    """Forward variance ``xi_t^{i,T}`` of rate ``i`` for date ``T >= t``."""
    if T < state.t:
        raise ValueError(f"forward date {T} precedes state time {state.t}")
    k = i - 1
    w = params.omega[k] * np.exp(-params.kappa[k] * (T - state.t))
    v = ou_variance(params.kappa[k], state.t)
    xi0 = params.sigma0[k] ** 2 * np.exp(params.theta[k] * T)
    return float(xi0 * np.exp(w * state.x[k] - 0.5 * w * w * v))


def drift_mask(n_rates: int) -> np.ndarray:
    """``M[i, u] = 1`` when rate ``u`` enters the drift sum of state ``i`` (``u > a(i)``)."""
    u = np.arange(n_rates)
    a = np.concatenate([u, u])
    return (u[None, :] > a[:, None]).astype(float)


def drift_kernel(factors: FactorStructure) -> np.ndarray:
    """``(N_S, N_R)`` matrix ``M * rho^{Y}[:, rates]`` used by the drift."""
    n = factors.n_rates
    return drift_mask(n) * correlation_matrix(factors)[:, :n]


def drifts_from_arrays(rates, spot_var, accruals, kernel) -> np.ndarray:
    """Vectorised terminal drifts.

    ``s^{au}/s^{a} = R_u / R_a`` so that
    ``mu^i = -(1/R_{a(i)}) sum_{u > a(i)} rho^{Y,iu} R_u delta_{u-1} sqrt(xi^u) / (1 + delta_{u-1} S^u)``.
    ``rates`` and ``spot_var`` have shape ``(..., N_R)``; returns ``(..., N_S)``.
    """
    _, suffix = suffix_sums(rates, accruals)
    delta = accruals[:-1]
    q = suffix * delta * np.sqrt(spot_var) / (1.0 + delta * rates)
    total = q @ kernel.T
    denom = np.concatenate([suffix, suffix], axis=-1)
    return -total / denom


def terminal_drifts(model: SMBModel, state: ModelState) -> np.ndarray:
    """No-arbitrage drifts ``mu^{i,T_e}`` for ``i = 1 .. N_S`` at ``state``."""
    rates = state.curve.swap_rates
    delta = model.grid.accruals
    if np.any(1.0 + delta[:-1] * rates <= 0.0):
        raise ValueError("1 + delta S <= 0 in drift evaluation")
    var = spot_variance(model.params, state.t, state.x)
    return drifts_from_arrays(rates, var, delta, drift_kernel(model.factors))


def loading_vectors(model: SMBModel, state: ModelState) -> np.ndarray:
    """Reduced-factor loading vectors ``m^1, m^2, m^3`` as rows of a ``(3, N_S)`` array."""
    n = model.grid.n_rates
    vol = np.sqrt(spot_variance(model.params, state.t, state.x))
    m = np.zeros((3, 2 * n))
    m[:2, :n] = (vol[:, None] * model.factors.rate_loadings).T
    m[2, n:] = 1.0
    return m
