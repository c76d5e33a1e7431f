"""Quasi-Monte Carlo simulation of the joint rate / variance-state system.

Two measures are supported: the ``T_e`` terminal measure, where all
``Y = (S, X)`` coordinates evolve with the no-arbitrage drifts, and a single
annuity measure ``A^i`` under which only ``(S^i, X^i)`` move, driftless.

Gaussian increments come from a scrambled Sobol sequence mapped through the
inverse normal CDF.  Dimensions are assigned time-major, factor-minor.
Streams are cached so that repeated valuations with the same configuration
reuse identical numbers (common random numbers).
"""

from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .model import (
    ModelState,
    SMBModel,
    drift_kernel,
    drifts_from_arrays,
    spot_variance,
    spot_variance_1d,
)

log = logging.getLogger(__name__)

SOBOL_MAX_DIM = 21201
CLAMP_EPS = 1e-6
SOBOL_BITS = 32


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 2**17
    steps_per_year: int = 24
    sequence: str = "sobol"
    seed: int = 1
    measure: str = "terminal"

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.steps_per_year < 1:
            raise ValueError("steps_per_year must be at least 1")
        if self.sequence not in ("sobol", "pseudorandom"):
            raise ValueError(f"unknown sequence {self.sequence!r}")
        self.annuity_index  # validates the measure string

    @property
    def annuity_index(self) -> int | None:
        """Rate index ``i`` for ``"annuity:i"``, ``None`` for the terminal measure."""
        if self.measure == "terminal":
            return None
        kind, _, idx = self.measure.partition(":")
        if kind != "annuity" or not idx.isdigit():
            raise ValueError(f"measure must be 'terminal' or 'annuity:<i>', got {self.measure!r}")
        return int(idx)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(
            n_paths=int(d.get("paths", cls.n_paths)),
            steps_per_year=int(d.get("steps_per_year", cls.steps_per_year)),
            sequence=d.get("seq", cls.sequence),
            seed=int(d.get("seed", cls.seed)),
            measure=d.get("measure", cls.measure),
        )

    def to_dict(self) -> dict:
        return {
            "paths": self.n_paths,
            "steps_per_year": self.steps_per_year,
            "seq": self.sequence,
            "seed": self.seed,
            "measure": self.measure,
        }

    def replace(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


@functools.lru_cache(maxsize=6)
def _cached_increments(n_paths, n_steps, n_factors, sequence, seed):
    dims = n_steps * n_factors
    if sequence == "sobol":
        if dims > SOBOL_MAX_DIM:
            raise SimulationError(f"{dims} Sobol dimensions exceed the limit {SOBOL_MAX_DIM}")
        engine = qmc.Sobol(d=dims, scramble=True, bits=SOBOL_BITS, seed=seed)
        with warnings.catch_warnings():
            # non power-of-two path counts are allowed; balance is merely weaker
            warnings.simplefilter("ignore", UserWarning)
            u = engine.random(n_paths)
        # points are multiples of 2^-bits and may hit 0; move to the cell centre
        z = ndtri(u + 0.5 ** (SOBOL_BITS + 1))
    else:
        z = np.random.default_rng(seed).standard_normal((n_paths, dims))
    z = z.reshape(n_paths, n_steps, n_factors)
    z.setflags(write=False)
    return z


def generate_increments(config: SimConfig, n_steps: int, n_factors: int) -> np.ndarray:
    """Standard normal draws of shape ``(n_paths, n_steps, n_factors)``.

    Deterministic in ``(sequence, seed, n_paths, n_steps, n_factors)``; the
    returned array is read-only and shared between callers.
    """
    if n_steps < 1 or n_factors < 1:
        raise ValueError("need at least one step and one factor")
    return _cached_increments(config.n_paths, n_steps, n_factors, config.sequence, config.seed)


def n_steps_between(a: float, b: float, steps_per_year: int) -> int:
    return max(1, math.ceil((b - a) * steps_per_year - 1e-9))


def time_grid(t0: float, observe, steps_per_year: int) -> tuple[np.ndarray, list[int]]:
    """Piecewise uniform grid from ``t0`` hitting every observation time exactly.

    Returns the grid times and, for each observation, its index in the grid.
    """
    obs = sorted(set(float(t) for t in observe))
    if not obs or obs[0] <= t0:
        raise ValueError("observation times must be after the start time")
    times = [t0]
    idx = []
    for target in obs:
        start = times[-1]
        n = n_steps_between(start, target, steps_per_year)
        times.extend(start + (target - start) * np.arange(1, n + 1) / n)
        times[-1] = target
        idx.append(len(times) - 1)
    return np.asarray(times), idx


@dataclass
class PathBlock:
    """Simulated ``Y`` at the start time and each observation time.

    ``values[k, p, :]`` is the state of path ``p`` at ``times[k]``.
    """

    times: np.ndarray
    values: np.ndarray = field(repr=False)
    n_rates: int
    clamp_count: int = 0
    n_updates: int = 0

    def rates(self, k: int) -> np.ndarray:
        return self.values[k, :, : self.n_rates]

    def x(self, k: int) -> np.ndarray:
        return self.values[k, :, self.n_rates :]

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise KeyError(f"time {t} was not observed")
        return int(hits[0])

    @property
    def clamp_fraction(self) -> float:
        return self.clamp_count / self.n_updates if self.n_updates else 0.0


def simulate(model: SMBModel, state: ModelState, config: SimConfig, observe) -> PathBlock:
    """Euler scheme for ``Y`` from ``state`` up to the last observation time.

    ``S <- S + sqrt(xi)(dW + mu dt)``, ``X <- X - kappa X dt + dW + mu dt``.
    Under ``annuity:i`` all drifts vanish and only ``(S^i, X^i)`` move.
    Rates that would breach ``1 + delta S > 0`` are clamped and counted.
    """
    grid = model.grid
    n = grid.n_rates
    annuity = config.annuity_index
    if annuity is not None:
        grid.check_rate_index(annuity)
    horizon = max(observe)
    if horizon > grid.times[-1] + 1e-12:
        raise ValueError("simulation horizon exceeds T_e")
    times, obs_idx = time_grid(state.t, observe, config.steps_per_year)
    n_steps = times.size - 1
    z = generate_increments(config, n_steps, 3)

    params, factors = model.params, model.factors
    chol = factors.factor_cholesky
    loadings = factors.rate_loadings
    kernel = drift_kernel(factors)
    delta = grid.accruals
    floor = -1.0 / delta[:-1] + CLAMP_EPS

    p = config.n_paths
    S = np.repeat(state.curve.swap_rates[None, :], p, axis=0)
    X = np.repeat(state.x[None, :], p, axis=0)
    out = np.empty((len(obs_idx) + 1, p, 2 * n))
    out[0, :, :n] = S
    out[0, :, n:] = X
    clamps = 0
    updates = 0
    k_out = 1
    kappa = params.kappa
    for step in range(n_steps):
        t = times[step]
        dt = times[step + 1] - t
        dwc = (z[:, step, :] @ chol.T) * math.sqrt(dt)
        if annuity is None:
            var = spot_variance(params, t, X)
            mu = drifts_from_arrays(S, var, delta, kernel)
            dw_rate = dwc[:, :2] @ loadings.T
            S = S + np.sqrt(var) * (dw_rate + mu[:, :n] * dt)
            X = X - kappa * X * dt + dwc[:, 2:3] + mu[:, n:] * dt
            low = S < floor
            if low.any():
                clamps += int(low.sum())
                S = np.where(low, floor, S)
            updates += S.size
        else:
            k = annuity - 1
            xk = X[:, k]
            var = spot_variance_1d(params, k, t, xk)
            dw_rate = dwc[:, :2] @ loadings[k]
            sk = S[:, k] + np.sqrt(var) * dw_rate
            low = sk < floor[k]
            if low.any():
                clamps += int(low.sum())
                sk = np.where(low, floor[k], sk)
            updates += sk.size
            S[:, k] = sk
            X[:, k] = xk - kappa[k] * xk * dt + dwc[:, 2]
        if step + 1 == obs_idx[k_out - 1]:
            out[k_out, :, :n] = S
            out[k_out, :, n:] = X
            k_out += 1
    if clamps:
        log.warning("clamped %d of %d rate updates (1 + delta S <= 0)", clamps, updates)
    obs_times = np.concatenate([[state.t], times[obs_idx]])
    return PathBlock(obs_times, out, n, clamps, updates)

