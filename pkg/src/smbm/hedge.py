"""Hedged-contract construction and second-order PnL attribution.

The contract ``V`` is hedged with co-terminal receiver swaps, payer European
swaptions on every rate, and a bank account, so that all first-order
sensitivities to ``Y = (S, X)`` and the total value vanish.  PnL over
``[t, t + dt]`` is then explained in the three reduced factors ``h`` with
``Y -> Y + sum_u h^u m^u``:

    PnL ~ sum_{ij} 0.5 * d2V/dh_i dh_j * (dh_i dh_j - rho^C_ij dt).

State bumps move ``Y`` with the terminal discount ``P^e`` held fixed, so
every value is ``P^e`` times a function of ``(Y, t)``.  The bank account
rolls over the first period and is worth ``P^1_t / P^1_0`` before ``T_1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .curve import CurveState, annuities, annuity_rate_jacobian, discount_factors, discount_rate_jacobian
from .mc import SimConfig
from .model import FactorStructure, ModelState, SMBModel
from .swaption import _mixture_samples, mixture_accumulators

Pricer = Callable[[ModelState], float]

CELL_ORDER = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]


class HedgeError(RuntimeError):
    pass


def shift_state(model: SMBModel, state: ModelState, dy, dt: float = 0.0) -> ModelState:
    """Move ``Y`` by ``dy`` and time by ``dt``, holding ``P^e`` fixed."""
    dy = np.asarray(dy, dtype=float)
    n = model.grid.n_rates
    if not dy[:n].any():
        curve = state.curve
    else:
        curve = CurveState(state.curve.terminal_discount, state.curve.swap_rates + dy[:n])
    return ModelState(state.t + dt, curve, state.x + dy[n:])


@dataclass(frozen=True)
class Bumps:
    rate: float = 1e-4
    x: float = 1e-2

    def vector(self, n_rates: int) -> np.ndarray:
        return np.concatenate([np.full(n_rates, self.rate), np.full(n_rates, self.x)])


def fd_gradient(model: SMBModel, pricer: Pricer, state: ModelState, bumps: Bumps) -> np.ndarray:
    """Central-difference ``dV/dY``; every revaluation reuses the pricer's frozen stream."""
    h = bumps.vector(model.grid.n_rates)
    grad = np.empty(h.size)
    for j, hj in enumerate(h):
        e = np.zeros(h.size)
        e[j] = hj
        up = pricer(shift_state(model, state, e))
        dn = pricer(shift_state(model, state, -e))
        grad[j] = (up - dn) / (2.0 * hj)
    return grad


class HedgeInstruments:
    """Receiver swaps ``A^i(K^i - S^i)`` and payer swaptions ``A^i E^{A^i}[(S^i - K^i)^+]``."""

    def __init__(self, model: SMBModel, strikes, config: SimConfig):
        self.model = model
        self.strikes = np.broadcast_to(np.asarray(strikes, dtype=float), (model.grid.n_rates,)).copy()
        self.config = config
        self._acc_cache: dict[tuple, tuple] = {}

    def _accumulators(self, state: ModelState, i: int):
        # the mixture paths depend only on (t, X^i); rate bumps reuse them
        key = (i, float(state.t), float(state.x[i - 1]))
        if key not in self._acc_cache:
            if len(self._acc_cache) > 512:
                self._acc_cache.clear()
            self._acc_cache[key] = mixture_accumulators(self.model, state, i, self.config)
        return self._acc_cache[key]

    @property
    def size(self) -> int:
        return 2 * self.model.grid.n_rates

    def _expectations(self, state: ModelState, x_bump: float = 0.0, s_bump: float = 0.0):
        """Mixture expectations for every rate; optional uniform bumps of own ``S``/``X``."""
        model = self.model
        n = model.grid.n_rates
        out = np.empty(n)
        for k in range(n):
            i = k + 1
            if model.grid.expiry(i) <= state.t:
                out[k] = max(state.curve.swap_rates[k] - self.strikes[k], 0.0)
                continue
            trial = state
            if x_bump:
                x = state.x.copy()
                x[k] += x_bump
                trial = ModelState(state.t, state.curve, x)
            shift, var, tau = self._accumulators(trial, i)
            s = state.curve.swap_rates[k] + s_bump
            out[k] = float(np.mean(_mixture_samples(s, model.params.sigma0[k], shift, var, tau, self.strikes[k], True)))
        return out

    def values(self, state: ModelState) -> np.ndarray:
        a = annuities(self.model.grid, state.curve)
        swaps = a * (self.strikes - state.curve.swap_rates)
        return np.concatenate([swaps, a * self._expectations(state)])

    def jacobian(self, state: ModelState, bumps: Bumps) -> np.ndarray:
        """``dH^u / dY^i``: analytic swap rows, finite-difference swaption rows."""
        grid = self.model.grid
        n = grid.n_rates
        a = annuities(grid, state.curve)
        da = annuity_rate_jacobian(grid, state.curve)
        rates = state.curve.swap_rates
        jac = np.zeros((2 * n, 2 * n))
        jac[:n, :n] = da * (self.strikes - rates)[:, None] - np.diag(a)
        m0 = self._expectations(state)
        dm_ds = (self._expectations(state, s_bump=bumps.rate) - self._expectations(state, s_bump=-bumps.rate)) / (
            2.0 * bumps.rate
        )
        dm_dx = (self._expectations(state, x_bump=bumps.x) - self._expectations(state, x_bump=-bumps.x)) / (2.0 * bumps.x)
        jac[n:, :n] = da * m0[:, None] + np.diag(a * dm_ds)
        jac[n:, n:] = np.diag(a * dm_dx)
        return jac


class BankAccount:
    """Discrete rolling bank account, unit value at ``state0``; valid before ``T_1``."""

    def __init__(self, model: SMBModel, state0: ModelState):
        self.model = model
        self.p1_0 = float(discount_factors(model.grid, state0.curve)[0])

    def _check(self, state: ModelState) -> None:
        if state.t >= self.model.grid.times[1]:
            raise HedgeError("bank account is only defined before the first reset T_1")

    def value(self, state: ModelState) -> float:
        self._check(state)
        return float(discount_factors(self.model.grid, state.curve)[0]) / self.p1_0

    def gradient(self, state: ModelState) -> np.ndarray:
        self._check(state)
        n = self.model.grid.n_rates
        out = np.zeros(2 * n)
        out[:n] = discount_rate_jacobian(self.model.grid, state.curve)[0] / self.p1_0
        return out


@dataclass
class HedgePortfolio:
    """Weights ``w_1 .. w_{N_S}`` on the instruments plus the bank-account weight."""

    weights: np.ndarray
    bank_weight: float
    instruments: HedgeInstruments = field(repr=False)
    bank: BankAccount = field(repr=False)
    contract_delta: np.ndarray = field(repr=False)
    condition_number: float = float("nan")

    def value(self, state: ModelState) -> float:
        return float(self.weights @ self.instruments.values(state)) + self.bank_weight * self.bank.value(state)


class HedgedContract:
    """``V^H(state) = V(state) + sum_u w_u H^u(state) + w_B``."""

    def __init__(self, pricer: Pricer, hedge: HedgePortfolio):
        self.pricer = pricer
        self.hedge = hedge

    def __call__(self, state: ModelState) -> float:
        return self.pricer(state) + self.hedge.value(state)


def build_hedge(
    model: SMBModel,
    pricer: Pricer,
    state: ModelState,
    instruments: HedgeInstruments,
    bumps: Bumps = Bumps(),
    max_condition: float = 1e12,
) -> HedgePortfolio:
    """Solve ``dV/dY + J^T w + w_B dB/dY = 0`` and ``V + w.H + w_B B = 0``.

    ``N_S + 1`` equations in the instrument weights and the bank weight.
    """
    grad = fd_gradient(model, pricer, state, bumps)
    jac = instruments.jacobian(state, bumps)
    bank = BankAccount(model, state)
    n = jac.shape[0]
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = jac.T
    system[:n, n] = bank.gradient(state)
    system[n, :n] = instruments.values(state)
    system[n, n] = bank.value(state)
    cond = float(np.linalg.cond(system))
    if not np.isfinite(cond) or cond > max_condition:
        raise HedgeError(f"hedge system is singular (condition number {cond:.3g})")
    sol = np.linalg.solve(system, np.append(-grad, -pricer(state)))
    return HedgePortfolio(sol[:n], float(sol[n]), instruments, bank, grad, cond)


def gamma_h(model: SMBModel, value_fn: Pricer, state: ModelState, m: np.ndarray, bump: float = 0.02) -> np.ndarray:
    """Hessian of ``h -> V(Y + h m)`` at ``h = 0`` by a 13-point central stencil.

    Diagonal: ``(f(+e_i) - 2 f(0) + f(-e_i)) / b^2``.  Off-diagonal:
    ``(f(++) - f(+i) - f(+j) + 2 f(0) - f(-i) - f(-j) + f(--)) / (2 b^2)``.
    """
    cache: dict[tuple, float] = {}

    def f(*h):
        key = tuple(round(v / bump) for v in h)
        if key not in cache:
            value = value_fn(shift_state(model, state, np.asarray(h) @ m))
            if not np.isfinite(value):
                raise HedgeError(f"non-finite revaluation at h={h}")
            cache[key] = value
        return cache[key]

    b = bump
    e = np.eye(3) * b
    f0 = f(0.0, 0.0, 0.0)
    gam = np.empty((3, 3))
    for i in range(3):
        gam[i, i] = (f(*e[i]) - 2.0 * f0 + f(*-e[i])) / b**2
    for i in range(3):
        for j in range(i + 1, 3):
            num = f(*(e[i] + e[j])) - f(*e[i]) - f(*e[j]) + 2.0 * f0 - f(*-e[i]) - f(*-e[j]) + f(*-(e[i] + e[j]))
            gam[i, j] = gam[j, i] = num / (2.0 * b**2)
    return gam


def project_dh(dy, m: np.ndarray, max_condition: float = 1e14):
    """Least-squares factor moves ``dh = argmin ||dY - dh m||`` via the normal equations.

    Returns ``(dh, residual)`` with ``residual = dY - dh m``.
    """
    dy = np.asarray(dy, dtype=float)
    gram = m @ m.T
    if np.linalg.cond(gram) > max_condition:
        raise HedgeError("loading vectors are linearly dependent")
    dh = np.linalg.solve(gram, m @ dy)
    return dh, dy - dh @ m


@dataclass
class PnLReport:
    gamma: np.ndarray
    dh: np.ndarray
    dt: float
    realized: np.ndarray
    breakeven: np.ndarray
    cells: np.ndarray
    explained: float
    realized_total: float
    residual: float
    factor_residual: float

    @property
    def gamma_term(self) -> np.ndarray:
        return 0.5 * self.gamma * self.realized

    @property
    def carry_term(self) -> np.ndarray:
        return -0.5 * self.gamma * self.breakeven

    def rows(self):
        """Table rows in the order (1,1), (2,2), (3,3), (1,2), (1,3), (2,3); values per single cell."""
        for i, j in CELL_ORDER:
            label = f"({i+1},{j+1})" if i == j else f"({i+1},{j+1}),({j+1},{i+1})"
            yield label, self.gamma[i, j], self.gamma_term[i, j], self.carry_term[i, j], self.cells[i, j]

    def to_dict(self) -> dict:
        return {
            "dh": self.dh.tolist(),
            "dt": self.dt,
            "gamma": self.gamma.tolist(),
            "realized": self.realized.tolist(),
            "breakeven": self.breakeven.tolist(),
            "cells": self.cells.tolist(),
            "gamma_sum": float(self.gamma_term.sum()),
            "carry_sum": float(self.carry_term.sum()),
            "explained": self.explained,
            "realized_total": self.realized_total,
            "residual": self.residual,
            "factor_residual": self.factor_residual,
        }

    def to_text(self, title: str = "") -> str:
        head = ("(i,j)", "d2V/dhidhj", "1/2 g dhi dhj", "-1/2 g rho dt", "cell PnL")
        lines = [title] if title else []
        lines.append(f"{head[0]:<13}{head[1]:>12}{head[2]:>16}{head[3]:>16}{head[4]:>12}")
        for label, g, gt, ct, cell in self.rows():
            lines.append(f"{label:<13}{g * 100:>+11.3f}%{gt * 1e4:>+13.2f}e-4{ct * 1e4:>+13.2f}e-4{cell * 1e4:>+9.2f}e-4")
        lines.append(
            f"{'sum i,j':<25}{self.gamma_term.sum() * 1e4:>+13.2f}e-4"
            f"{self.carry_term.sum() * 1e4:>+13.2f}e-4{self.explained * 1e4:>+9.2f}e-4"
        )
        lines.append(f"{'realized PnL':<57}{self.realized_total * 1e4:>+9.2f}e-4")
        lines.append(f"{'unexplained':<57}{self.residual * 1e4:>+9.2f}e-4")
        lines.append(f"{'factor residual':<57}{self.factor_residual * 1e4:>+9.2f}e-4")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "gamma", "half_gamma_dh_dh", "minus_half_gamma_rho_dt", "cell_pnl"])
        for label, g, gt, ct, cell in self.rows():
            w.writerow([label, repr(float(g)), repr(float(gt)), repr(float(ct)), repr(float(cell))])
        w.writerow(["sum", "", repr(float(self.gamma_term.sum())), repr(float(self.carry_term.sum())), repr(self.explained)])
        w.writerow(["realized", "", "", "", repr(self.realized_total)])
        w.writerow(["residual", "", "", "", repr(self.residual)])
        return buf.getvalue()


def pnl_report(
    model: SMBModel,
    value_fn: Pricer,
    state: ModelState,
    m: np.ndarray,
    factors: FactorStructure,
    dt: float,
    dh=None,
    dy=None,
    bump: float = 0.02,
    gamma: np.ndarray | None = None,
) -> PnLReport:
    """Reduced-factor second-order PnL explain over ``[t, t + dt]``.

    Give the move either as factor moves ``dh`` (then ``dY = dh m`` exactly)
    or as a state move ``dy`` (projected onto the loadings).  The realized
    total is a full revaluation at ``(Y + dY, t + dt)``.
    """
    if (dh is None) == (dy is None):
        raise ValueError("give exactly one of dh or dy")
    if dh is not None:
        dh = np.asarray(dh, dtype=float)
        dy = dh @ m
        off_span = False
    else:
        dy = np.asarray(dy, dtype=float)
        dh, resid = project_dh(dy, m)
        off_span = bool(np.any(resid != 0.0))
    if gamma is None:
        gamma = gamma_h(model, value_fn, state, m, bump)
    realized = np.outer(dh, dh)
    breakeven = factors.factor_correlation * dt
    cells = 0.5 * gamma * (realized - breakeven)
    explained = float(cells.sum())
    v0 = value_fn(state)
    if dt == 0.0 and not np.any(dy):
        realized_total = 0.0
    else:
        realized_total = value_fn(shift_state(model, state, dy, dt)) - v0
    factor_residual = 0.0
    if off_span:
        # second term of the reduced explain, by directional second differences
        def d2(v):
            return value_fn(shift_state(model, state, v)) + value_fn(shift_state(model, state, -v)) - 2.0 * v0

        factor_residual = 0.5 * (d2(dy) - d2(dh @ m))
    return PnLReport(
        gamma, dh, dt, realized, breakeven, cells, explained, realized_total, realized_total - explained, factor_residual
    )
