"""Monte-Carlo power of the decayed statistic R versus the empirical rate.

A stream of Bernoulli indicators runs at rate ``p`` for ``m`` steps and then
at rate ``q`` for ``k`` more steps. Two-sided acceptance bounds of total size
``alpha`` are fixed at ``t = m`` under rate ``p``:

* for R, MC quantiles of the geometric sum with ``n = m`` terms;
* for the empirical rate, the normal approximation with variance
  ``p (1 - p) / m``.

Power at lag ``k`` is the fraction of trials whose statistic at ``t = m + k``
lies outside those bounds. Both statistics are evaluated on the same
simulated trials.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .bounds import GeomSumParams, estimate_bounds

R_STAT = "R"
PHAT_STAT = "PHAT"


@dataclass(frozen=True)
class PowerConfig:
    m: int = 1000
    k_max: int = 200
    p: float = 0.9
    q_list: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    alpha: float = 0.01
    trials: int = 10_000
    eta: float = 0.9
    bound_samples: int = 200_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "q_list", tuple(float(q) for q in self.q_list))
        if self.m < 1 or self.k_max < 1 or self.trials < 1:
            raise ValueError("m, k_max and trials must be positive")
        if not all(0.0 <= r <= 1.0 for r in (self.p, *self.q_list)):
            raise ValueError("rates must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")


@dataclass
class PowerGrid:
    """Power estimates indexed ``[k - 1, q_index]``."""

    k: np.ndarray
    q: np.ndarray
    beta_r: np.ndarray
    beta_p: np.ndarray
    r_bounds: tuple[float, float] = (0.0, 1.0)
    p_bounds: tuple[float, float] = (0.0, 1.0)
    mean_r: np.ndarray = field(default=None, repr=False)

    @property
    def delta(self) -> np.ndarray:
        return self.beta_r - self.beta_p


def _seeded(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def null_bounds(config: PowerConfig, p: float | None = None) -> tuple[tuple[float, float], tuple[float, float]]:
    """Acceptance bounds at ``t = m`` for R and for the empirical rate."""
    p = config.p if p is None else p
    half = config.alpha / 2
    rb = estimate_bounds(
        GeomSumParams(p, config.eta, config.m),
        half,
        config.bound_samples,
        _seeded(config.seed, 1_000_000, int(round(p * 1e6))),
    )
    z = NormalDist().inv_cdf(1.0 - half)
    sd = math.sqrt(p * (1.0 - p) / config.m)
    return (rb.lower, rb.upper), (p - z * sd, p + z * sd)


def _simulate(p, q, m, k_max, eta, trials, rng):
    """R and the empirical rate at every lag ``1..k_max`` for each trial."""
    r = np.zeros(trials)
    # only the last terms before t=m carry weight in R
    burn = m if eta == 0 else min(m, math.ceil(math.log(1e-17) / math.log(eta)) if eta > 0 else 1)
    hits_before = rng.binomial(m - burn, p, size=trials).astype(np.float64) if m > burn else np.zeros(trials)
    for _ in range(burn):
        hit = rng.random(trials) < p
        r = eta * r + (1.0 - eta) * hit
        hits_before += hit
    r_path = np.empty((k_max, trials))
    p_path = np.empty((k_max, trials))
    hits = hits_before
    for j in range(k_max):
        hit = rng.random(trials) < q
        r = eta * r + (1.0 - eta) * hit
        hits = hits + hit
        r_path[j] = r
        p_path[j] = hits / (m + j + 1)
    return r_path, p_path


def _outside(values: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    return ((values < lo) | (values > hi)).mean(axis=-1)


def power_grid(config: PowerConfig) -> PowerGrid:
    """beta for both statistics over ``k = 1..k_max`` and every ``q``."""
    r_bounds, p_bounds = null_bounds(config)
    nq = len(config.q_list)
    beta_r = np.empty((config.k_max, nq))
    beta_p = np.empty((config.k_max, nq))
    mean_r = np.empty((config.k_max, nq))
    for j, q in enumerate(config.q_list):
        rng = _seeded(config.seed, j)
        r_path, p_path = _simulate(config.p, q, config.m, config.k_max, config.eta, config.trials, rng)
        beta_r[:, j] = _outside(r_path, r_bounds)
        beta_p[:, j] = _outside(p_path, p_bounds)
        mean_r[:, j] = r_path.mean(axis=1)
    return PowerGrid(
        k=np.arange(1, config.k_max + 1),
        q=np.array(config.q_list),
        beta_r=beta_r,
        beta_p=beta_p,
        r_bounds=r_bounds,
        p_bounds=p_bounds,
        mean_r=mean_r,
    )


def estimate_power(config: PowerConfig, statistic: str = R_STAT) -> np.ndarray:
    """Power surface ``[k - 1, q_index]`` for one statistic ("R" or "PHAT")."""
    if statistic not in (R_STAT, PHAT_STAT):
        raise ValueError(f"statistic must be {R_STAT!r} or {PHAT_STAT!r}, got {statistic!r}")
    grid = power_grid(config)
    return grid.beta_r if statistic == R_STAT else grid.beta_p


def power_heatmap(config: PowerConfig, rates: Sequence[float], lag: int | None = None) -> list[tuple]:
    """Power of both statistics at one lag (default ``k_max``) for every ``(p, q)``."""
    lag = config.k_max if lag is None else lag
    rows = []
    for i, p in enumerate(rates):
        r_bounds, p_bounds = null_bounds(config, p)
        for j, q in enumerate(rates):
            rng = _seeded(config.seed, 2_000_000 + i, j)
            r_path, p_path = _simulate(p, q, config.m, lag, config.eta, config.trials, rng)
            br = float(_outside(r_path[-1], r_bounds))
            bp = float(_outside(p_path[-1], p_bounds))
            rows.append((float(p), float(q), br, bp, br - bp))
    return rows


def emit_grids(grid: PowerGrid, out_dir, heatmap: Sequence[tuple] | None = None) -> list[Path]:
    """Write ``power_grid.csv`` and, if given, ``power_heatmap.csv``."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "power_grid.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "q", "beta_r", "beta_p", "delta"])
            delta = grid.delta
            for a, k in enumerate(grid.k.tolist()):
                for b, q in enumerate(grid.q.tolist()):
                    w.writerow([k, repr(q), repr(float(grid.beta_r[a, b])),
                                repr(float(grid.beta_p[a, b])), repr(float(delta[a, b]))])
        written.append(path)
        if heatmap is not None:
            path = out_dir / "power_heatmap.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["p", "q", "beta_r", "beta_p", "delta"])
                for row in heatmap:
                    w.writerow([repr(v) for v in row])
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write power grids under {out_dir}: {exc}") from exc
    return written
