"""Canary (two-date Bermudan) swaption pricing.

Value of a receiver Canary with exercise dates ``T_{i1} < T_{i2}`` on swaps
ending at ``T_e``:

    V = P^e_t E^{T_e}[ max(U, O) / P^e_{i1} ],
    U = A^{i1}(K - S^{i1}),   O = A^{i2} E^{A^{i2}}_{i1}[(K - S^{i2}_{i2})^+].

Deflated by ``P^e`` every annuity becomes an ``s``-factor, so no numeraire
path is needed.  ``O`` is obtained either from an implied-vol spline
``g(S^{i2}, X^{i2})`` built by mixture pricing (semi-nested) or by
least-squares regression (LSMC).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .curve import deflated_annuities
from .mc import SimConfig, simulate
from .model import ModelState, SMBModel, initial_variance, ou_variance
from .swaption import MCEstimate, _mixture_samples, implied_normal_vol, mixture_accumulators, nbs

log = logging.getLogger(__name__)


class PricingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CanarySpec:
    i1: int
    i2: int
    strike: float
    payer: bool = False

    def __post_init__(self):
        if not 1 <= self.i1 < self.i2:
            raise ValueError("need 1 <= i1 < i2")

    @classmethod
    def from_dict(cls, d: dict) -> "CanarySpec":
        kind = d.get("type", "receiver")
        if kind not in ("receiver", "payer"):
            raise ValueError(f"unknown canary type {kind!r}")
        return cls(int(d["i1"]), int(d["i2"]), float(d["strike"]), kind == "payer")

    def to_dict(self) -> dict:
        return {"i1": self.i1, "i2": self.i2, "strike": self.strike, "type": "payer" if self.payer else "receiver"}

    def check(self, model: SMBModel) -> None:
        model.grid.check_rate_index(self.i1)
        model.grid.check_rate_index(self.i2)


@dataclass(frozen=True)
class SplineGridConfig:
    n_s: int = 15
    n_x: int = 15
    width: float = 6.0
    inner_paths: int = 2**13

    @classmethod
    def from_dict(cls, d: dict) -> "SplineGridConfig":
        return cls(
            int(d.get("n_s", cls.n_s)),
            int(d.get("n_x", cls.n_x)),
            float(d.get("width", cls.width)),
            int(d.get("inner_paths", cls.inner_paths)),
        )


@dataclass
class VolSurfaceGrid:
    """Bicubic interpolating spline of ``sigma^{I,i2}_{i1}`` over ``(S, X)`` nodes.

    Queries outside the node box are clamped to it (flat extrapolation).
    """

    s_nodes: np.ndarray
    x_nodes: np.ndarray
    vols: np.ndarray
    spline: RectBivariateSpline = field(init=False, repr=False)

    def __post_init__(self):
        if np.any(~np.isfinite(self.vols)) or np.any(self.vols <= 0.0):
            raise PricingError("vol surface node values must be positive")
        self.spline = RectBivariateSpline(self.s_nodes, self.x_nodes, self.vols, kx=3, ky=3, s=0)

    def __call__(self, s, x):
        s = np.clip(s, self.s_nodes[0], self.s_nodes[-1])
        x = np.clip(x, self.x_nodes[0], self.x_nodes[-1])
        return self.spline.ev(s, x)


def node_vol(model: SMBModel, spec: CanarySpec, s: float, accumulators) -> float:
    """Implied normal vol at ``T_{i1}`` of the ``T_{i2}`` European for one ``S`` node.

    Nodes so far from the strike that the out-of-the-money value underflows
    get the moment-matched vol; the option is pure intrinsic there, so the
    choice does not affect prices.
    """
    shift, var, tau = accumulators
    K = spec.strike
    call = s <= K  # price the out-of-the-money side
    sigma0 = model.params.sigma0[spec.i2 - 1]
    price = float(np.mean(_mixture_samples(s, sigma0, shift, var, tau, K, call)))
    if price == 0.0:
        return float(sigma0 * np.sqrt(np.mean(var + shift**2) / tau))
    return implied_normal_vol(price, s, K, tau, call=call)


def spline_node_box(model: SMBModel, spec: CanarySpec, width: float):
    """``(S, X)`` ranges: ``+/- width`` unconditional standard deviations at ``T_{i1}``."""
    k = spec.i2 - 1
    p = model.params
    t1 = model.grid.expiry(spec.i1)
    if abs(p.theta[k]) > 1e-12:
        integral = p.sigma0[k] ** 2 * math.expm1(p.theta[k] * t1) / p.theta[k]
    else:
        integral = p.sigma0[k] ** 2 * t1
    return math.sqrt(integral) * width, math.sqrt(float(ou_variance(p.kappa[k], t1))) * width


def build_vol_spline(
    model: SMBModel,
    state: ModelState,
    spec: CanarySpec,
    grid_config: SplineGridConfig,
    config: SimConfig,
) -> VolSurfaceGrid:
    """Price the ``T_{i2}`` European on an ``(S, X)`` node grid at ``T_{i1}`` and spline the vols.

    Each ``X`` node needs one pass of vol-factor paths; all ``S`` nodes at that
    ``X`` reuse it.  Node-box centre is ``S^{i2}`` of ``state``.
    """
    spec.check(model)
    k = spec.i2 - 1
    half_s, half_x = spline_node_box(model, spec, grid_config.width)
    centre = float(state.curve.swap_rates[k])
    s_nodes = np.linspace(centre - half_s, centre + half_s, grid_config.n_s)
    x_nodes = np.linspace(-half_x, half_x, grid_config.n_x)
    inner = config.replace(n_paths=grid_config.inner_paths)
    t1 = model.grid.expiry(spec.i1)
    vols = np.empty((s_nodes.size, x_nodes.size))
    for b, xv in enumerate(x_nodes):
        x = np.zeros_like(state.x)
        x[k] = xv
        node_state = ModelState(t1, state.curve, x)
        acc = mixture_accumulators(model, node_state, spec.i2, inner)
        for a, sv in enumerate(s_nodes):
            try:
                vols[a, b] = node_vol(model, spec, sv, acc)
            except ValueError as exc:
                raise PricingError(f"vol node (S={sv:.6g}, X={xv:.6g}) failed: {exc}") from exc
    return VolSurfaceGrid(s_nodes, x_nodes, vols)


def exercise_values(model: SMBModel, spec: CanarySpec, rates):
    """Deflated immediate-exercise value ``U / P^e`` at ``T_{i1}`` and ``s^{i2}`` per path."""
    s = deflated_annuities(rates, model.grid.accruals)
    sign = 1.0 if spec.payer else -1.0
    u = s[:, spec.i1 - 1] * sign * (rates[:, spec.i1 - 1] - spec.strike)
    return u, s[:, spec.i2 - 1]


def price_canary_semi_nested(
    model: SMBModel, state: ModelState, spec: CanarySpec, surface: VolSurfaceGrid, config: SimConfig
) -> MCEstimate:
    """Outer terminal-measure simulation to ``T_{i1}``; continuation from the vol spline."""
    spec.check(model)
    t1 = model.grid.expiry(spec.i1)
    block = simulate(model, state, config.replace(measure="terminal"), [t1])
    rates, x = block.rates(1), block.x(1)
    u, s2 = exercise_values(model, spec, rates)
    k = spec.i2 - 1
    tau = model.grid.expiry(spec.i2) - t1
    vol = surface(rates[:, k], x[:, k])
    o = s2 * nbs(rates[:, k], vol, spec.strike, tau, call=spec.payer)
    payoff = np.maximum(u, o)
    est = MCEstimate.from_samples(payoff)
    pe = state.curve.terminal_discount
    return MCEstimate(pe * est.value, pe * est.stderr)


def poly_basis(s, x, degree: int) -> np.ndarray:
    """Monomials ``s^a x^b`` with ``a + b <= degree``."""
    cols = [s**a * x**b for total in range(degree + 1) for a in range(total, -1, -1) for b in [total - a]]
    return np.column_stack(cols)


@dataclass(frozen=True)
class LSMCResult:
    price: float
    stderr: float
    r2: float
    degree: int
    exercise_fraction: float


CONTINUATIONS = ("fitted", "realized")


@dataclass(frozen=True)
class ExerciseRule:
    """Fitted continuation ``O / s^{i2} ~ poly((S - centre)/s_scale, X/x_scale)``."""

    coef: np.ndarray
    degree: int
    s_centre: float
    s_scale: float
    x_scale: float
    r2: float

    def continuation(self, s, x) -> np.ndarray:
        return poly_basis((s - self.s_centre) / self.s_scale, x / self.x_scale, self.degree) @ self.coef


def _lsmc_sweep(model: SMBModel, state: ModelState, spec: CanarySpec, config: SimConfig):
    spec.check(model)
    grid = model.grid
    t1, t2 = grid.expiry(spec.i1), grid.expiry(spec.i2)
    block = simulate(model, state, config.replace(measure="terminal"), [t1, t2])
    k = spec.i2 - 1
    r1, x1 = block.rates(1), block.x(1)
    r2 = block.rates(2)
    u, s2_at_1 = exercise_values(model, spec, r1)
    s2_at_2 = deflated_annuities(r2, grid.accruals)[:, k]
    sign = 1.0 if spec.payer else -1.0
    cont = s2_at_2 * np.maximum(sign * (r2[:, k] - spec.strike), 0.0)
    return u, s2_at_1, cont, r1[:, k], x1[:, k]


def _fit_rule(model, state, spec, degree, s1, x1, target) -> ExerciseRule:
    t1 = model.grid.expiry(spec.i1)
    k = spec.i2 - 1
    centre = float(state.curve.swap_rates[k])
    s_scale = math.sqrt(float(initial_variance(model.params, t1)[k]) * max(t1 - state.t, 1e-12))
    x_scale = math.sqrt(float(ou_variance(model.params.kappa[k], t1)))
    zs, zx = (s1 - centre) / s_scale, x1 / x_scale
    for deg in range(degree, -1, -1):
        basis = poly_basis(zs, zx, deg)
        coef, _, rank, _ = np.linalg.lstsq(basis, target, rcond=None)
        if rank == basis.shape[1]:
            break
        log.warning("LSMC regression rank-deficient at degree %d; reducing", deg)
    fitted = basis @ coef
    ss_res = float(np.sum((target - fitted) ** 2))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExerciseRule(coef, deg, centre, s_scale, x_scale, r2)


def fit_exercise_rule(
    model: SMBModel, state: ModelState, spec: CanarySpec, config: SimConfig, degree: int = 3
) -> ExerciseRule:
    """Regress the realised annuity-measure continuation on the state at ``T_{i1}``."""
    u, s2_at_1, cont, s1, x1 = _lsmc_sweep(model, state, spec, config)
    return _fit_rule(model, state, spec, degree, s1, x1, cont / s2_at_1)


def price_canary_lsmc(
    model: SMBModel,
    state: ModelState,
    spec: CanarySpec,
    config: SimConfig,
    degree: int = 3,
    rule: ExerciseRule | None = None,
    continuation: str = "fitted",
) -> LSMCResult:
    """Least-squares Monte Carlo: one terminal-measure sweep to ``T_{i2}``.

    The deflated ``T_{i2}`` payoff divided by ``s^{i2}`` at ``T_{i1}`` (the
    annuity-measure continuation) is regressed on polynomials in the
    standardised ``(S^{i2}, X^{i2})`` at ``T_{i1}``.  The fitted value decides
    exercise.  With ``continuation="fitted"`` each path pays ``max(U, Ô)``,
    which is continuous in the initial state once the rule is fixed; with
    ``"realized"`` non-exercised paths collect their realised ``T_{i2}`` payoff
    (Longstaff-Schwartz), which jumps whenever a path crosses the boundary.
    A given ``rule`` skips the regression and reuses its exercise boundary.
    """
    if continuation not in CONTINUATIONS:
        raise ValueError(f"continuation must be one of {CONTINUATIONS}, got {continuation!r}")
    u, s2_at_1, cont, s1, x1 = _lsmc_sweep(model, state, spec, config)
    if rule is None:
        rule = _fit_rule(model, state, spec, degree, s1, x1, cont / s2_at_1)
    o_hat = s2_at_1 * rule.continuation(s1, x1)
    exercise = u > o_hat
    payoff = np.where(exercise, u, o_hat if continuation == "fitted" else cont)
    est = MCEstimate.from_samples(payoff)
    pe = state.curve.terminal_discount
    return LSMCResult(pe * est.value, pe * est.stderr, rule.r2, rule.degree, float(exercise.mean()))


class SemiNestedPricer:
    """``state -> V^C`` with a fixed vol spline and frozen outer stream."""

    def __init__(self, model: SMBModel, spec: CanarySpec, surface: VolSurfaceGrid, config: SimConfig):
        self.model, self.spec, self.surface, self.config = model, spec, surface, config

    def __call__(self, state: ModelState) -> float:
        return price_canary_semi_nested(self.model, state, self.spec, self.surface, self.config).value


class LSMCPricer:
    """``state -> V^C`` by LSMC on a frozen stream.

    With ``base_state`` the exercise rule is fitted once there and reused for
    every revaluation, so bumped prices differ only through the paths and
    finite differences do not pick up regression refits.  Without it each call
    refits.
    """

    def __init__(
        self,
        model: SMBModel,
        spec: CanarySpec,
        config: SimConfig,
        degree: int = 3,
        base_state: ModelState | None = None,
        continuation: str = "fitted",
    ):
        self.model, self.spec, self.config, self.degree = model, spec, config, degree
        self.continuation = continuation
        self.rule = None if base_state is None else fit_exercise_rule(model, base_state, spec, config, degree)

    def __call__(self, state: ModelState) -> float:
        return price_canary_lsmc(
            self.model, state, self.spec, self.config, self.degree, self.rule, self.continuation
        ).price


def european_value(model: SMBModel, state: ModelState, spec: CanarySpec, i: int, config: SimConfig) -> MCEstimate:
    """Deflated-MC value of the single-exercise European on ``S^i`` (``i`` in ``{i1, i2}``)."""
    t = model.grid.expiry(i)
    block = simulate(model, state, config.replace(measure="terminal"), [t])
    rates = block.rates(1)
    s = deflated_annuities(rates, model.grid.accruals)[:, i - 1]
    sign = 1.0 if spec.payer else -1.0
    est = MCEstimate.from_samples(s * np.maximum(sign * (rates[:, i - 1] - spec.strike), 0.0))
    pe = state.curve.terminal_discount
    return MCEstimate(pe * est.value, pe * est.stderr)
