"""Co-terminal curve arithmetic.

The curve is carried as the terminal discount factor ``P^e`` together with
the co-terminal swap rates ``S^1 .. S^{e-1}``.  Discount factors and
annuities are derived from those through the ``s``-factors

    s^{ij} = sum_{u=j}^{e-1} delta_u prod_{v=i+1}^{u} (1 + delta_{v-1} S^v)

which satisfy ``A^i = P^e s^i`` with ``s^i = s^{ii}``.

Rate indices in the public API are 1-based, exactly as on the tenor grid
(``S^1`` starts at ``T_1``).  Array storage is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CurveError(ValueError):
    """Raised for an invalid grid or curve (e.g. ``1 + delta S <= 0``)."""


@dataclass(frozen=True)
class TenorGrid:
    """Date grid ``T_0 = 0 < T_1 < ... < T_e`` in year fractions."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 3:
            raise CurveError("tenor grid needs at least T_0, T_1, T_2")
        if times[0] != 0.0:
            raise CurveError("tenor grid must start at T_0 = 0")
        if np.any(np.diff(times) <= 0.0):
            raise CurveError("tenor grid times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_accruals(cls, accruals) -> "TenorGrid":
        return cls(np.concatenate([[0.0], np.cumsum(np.asarray(accruals, dtype=float))]))

    @classmethod
    def uniform(cls, terminal_index: int, delta: float = 1.0) -> "TenorGrid":
        return cls.from_accruals(np.full(terminal_index, delta))

    @property
    def accruals(self) -> np.ndarray:
        """``delta_u = T_{u+1} - T_u`` for ``u = 0 .. e-1``."""
        return np.diff(self.times)

    @property
    def terminal_index(self) -> int:
        return self.times.size - 1

    @property
    def n_rates(self) -> int:
        return self.terminal_index - 1

    def expiry(self, i: int) -> float:
        self.check_rate_index(i)
        return float(self.times[i])

    def check_rate_index(self, i: int) -> None:
        if not 1 <= i <= self.n_rates:
            raise CurveError(f"rate index {i} outside 1..{self.n_rates}")


@dataclass(frozen=True)
class CurveState:
    """Primal curve state: terminal discount ``P^e`` and swap rates ``S^1..S^{N_R}``."""

    terminal_discount: float
    swap_rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.swap_rates, dtype=float)
        rates.setflags(write=False)
        object.__setattr__(self, "swap_rates", rates)
        if not 0.0 < self.terminal_discount:
            raise CurveError("terminal discount must be positive")

    @classmethod
    def from_p1(cls, grid: TenorGrid, swap_rates, p1: float) -> "CurveState":
        """Build the curve whose first discount factor ``P^1`` equals ``p1``."""
        return cls(solve_terminal_discount(grid, swap_rates, p1), swap_rates)

    def with_rates(self, grid: TenorGrid, swap_rates) -> "CurveState":
        """Replace the rates while holding ``P^1`` fixed."""
        return CurveState.from_p1(grid, swap_rates, discount_factors(grid, self)[0])


@dataclass(frozen=True)
class SFactorTable:
    """Upper-triangular table ``s^{ij}``; ``values[i-1, j-1]`` for ``i <= j``."""

    values: np.ndarray = field(repr=False)

    def __call__(self, i: int, j: int | None = None) -> float:
        j = i if j is None else j
        if not 1 <= i <= j <= self.values.shape[0]:
            raise CurveError(f"s-factor index ({i}, {j}) out of range")
        return float(self.values[i - 1, j - 1])

    @property
    def diagonal(self) -> np.ndarray:
        """``s^i`` for ``i = 1 .. N_R``."""
        return np.diag(self.values).copy()


def _check_rates(grid: TenorGrid, rates: np.ndarray) -> np.ndarray:
    if rates.shape[-1] != grid.n_rates:
        raise CurveError(f"expected {grid.n_rates} swap rates, got {rates.shape[-1]}")
    growth = 1.0 + grid.accruals[:-1] * rates
    if np.any(growth <= 0.0):
        raise CurveError("1 + delta_{u-1} S^u must be positive for every rate")
    return growth


def suffix_sums(rates, accruals) -> tuple[np.ndarray, np.ndarray]:
    """Prefix products ``G`` and suffix sums ``R`` behind the s-factors.

    For rates of shape ``(..., N_R)`` returns ``G`` of shape ``(..., N_R + 1)``
    with ``G_u = prod_{v=1}^{u} (1 + delta_{v-1} S^v)`` (``G_0 = 1``) and
    ``R`` of shape ``(..., N_R)`` with ``R_j = sum_{u=j}^{e-1} delta_u G_u``
    for ``j = 1 .. N_R``.  Then ``s^{ij} = R_j / G_i``.

    No validation; callers working on simulated paths use this directly.
    """
    rates = np.asarray(rates, dtype=float)
    accruals = np.asarray(accruals, dtype=float)
    growth = 1.0 + accruals[:-1] * rates
    ones = np.ones(rates.shape[:-1] + (1,))
    prefix = np.concatenate([ones, np.cumprod(growth, axis=-1)], axis=-1)
    weighted = accruals[1:] * prefix[..., 1:]
    suffix = np.cumsum(weighted[..., ::-1], axis=-1)[..., ::-1]
    return prefix, suffix


def deflated_annuities(rates, accruals) -> np.ndarray:
    """``s^i = A^i / P^e`` for ``i = 1 .. N_R``, vectorised over leading axes."""
    prefix, suffix = suffix_sums(rates, accruals)
    return suffix / prefix[..., 1:]


def compute_s_factors(grid: TenorGrid, curve: CurveState) -> SFactorTable:
    """Full ``s^{ij}`` table by the backward recursion.

    ``s^{e-1} = delta_{e-1}`` and ``s^{j-1, k} = s^{j, k} (1 + delta_{j-1} S^j)``
    for ``k >= j``, with the diagonal ``s^{j-1} = delta_{j-1} + s^{j-1, j}``.
    """
    rates = curve.swap_rates
    growth = _check_rates(grid, rates)
    delta = grid.accruals
    n = grid.n_rates
    table = np.zeros((n, n))
    table[n - 1, n - 1] = delta[n]
    for i in range(n - 1, 0, -1):
        # row i (1-based) from row i+1
        table[i - 1, i:] = table[i, i:] * growth[i]
        table[i - 1, i - 1] = delta[i] + table[i - 1, i]
    return SFactorTable(table)


def annuity(grid: TenorGrid, curve: CurveState, i: int) -> float:
    """``A^i = P^e s^i``."""
    grid.check_rate_index(i)
    _check_rates(grid, curve.swap_rates)
    s = deflated_annuities(curve.swap_rates, grid.accruals)
    return float(curve.terminal_discount * s[i - 1])


def annuities(grid: TenorGrid, curve: CurveState) -> np.ndarray:
    _check_rates(grid, curve.swap_rates)
    return curve.terminal_discount * deflated_annuities(curve.swap_rates, grid.accruals)


def discount_factors(grid: TenorGrid, curve: CurveState) -> np.ndarray:
    """``P^1 .. P^e`` from ``P^i = P^e (1 + S^i s^i)``."""
    _check_rates(grid, curve.swap_rates)
    s = deflated_annuities(curve.swap_rates, grid.accruals)
    pe = curve.terminal_discount
    out = np.append(pe * (1.0 + curve.swap_rates * s), pe)
    if np.any(out <= 0.0):
        raise CurveError("curve implies a non-positive discount factor")
    return out


def swap_rates_from_discounts(grid: TenorGrid, discounts) -> np.ndarray:
    """Co-terminal swap rates ``(P^i - P^e) / A^i`` from ``P^1 .. P^e``."""
    discounts = np.asarray(discounts, dtype=float)
    weighted = grid.accruals[1:] * discounts[1:]
    annuity_sums = np.cumsum(weighted[::-1])[::-1]
    return (discounts[:-1] - discounts[-1]) / annuity_sums


def solve_terminal_discount(grid: TenorGrid, swap_rates, p1_target: float) -> float:
    """Imply ``P^e`` from the first discount factor.

    ``s^1`` does not depend on ``P^e``, so ``P^e = P^1 / (1 + S^1 s^1)``.
    """
    if not 0.0 < p1_target <= 1.0:
        raise CurveError("P^1 target must lie in (0, 1]")
    rates = np.asarray(swap_rates, dtype=float)
    _check_rates(grid, rates)
    s1 = deflated_annuities(rates, grid.accruals)[0]
    denom = 1.0 + rates[0] * s1
    if denom <= 0.0:
        raise CurveError("1 + S^1 s^1 <= 0: no positive terminal discount")
    return float(p1_target / denom)


def deflated_annuity_jacobian(grid: TenorGrid, curve: CurveState) -> np.ndarray:
    """``d s^i / d S^v = delta_{v-1} s^{iv} / (1 + delta_{v-1} S^v)`` for ``v > i``, else 0."""
    rates = curve.swap_rates
    growth = _check_rates(grid, rates)
    table = compute_s_factors(grid, curve).values
    delta = grid.accruals
    n = grid.n_rates
    ds = np.zeros((n, n))
    for i in range(n):
        ds[i, i + 1 :] = delta[i + 1 : n] * table[i, i + 1 :] / growth[i + 1 :]
    return ds


def annuity_rate_jacobian(grid: TenorGrid, curve: CurveState) -> np.ndarray:
    """``d A^i / d S^v`` at fixed ``P^e``; shape ``(N_R, N_R)``."""
    return curve.terminal_discount * deflated_annuity_jacobian(grid, curve)


def discount_rate_jacobian(grid: TenorGrid, curve: CurveState) -> np.ndarray:
    """``d P^i / d S^v`` for ``i = 1 .. N_R`` at fixed ``P^e``, from ``P^i = P^e (1 + S^i s^i)``."""
    ds = deflated_annuity_jacobian(grid, curve)
    s = deflated_annuities(curve.swap_rates, grid.accruals)
    return curve.terminal_discount * (curve.swap_rates[:, None] * ds + np.diag(s))
