"""Monte-Carlo quantile bounds for the geometrically weighted Bernoulli sum.

Under a stable concept the decayed rate statistic after ``n`` updates is

    R = (1 - eta) * sum_{i=1..n} eta**(n-i) * I_i,   I_i ~ iid Bernoulli(p)

This module estimates the two-sided quantiles of R by simulation and stores
them in a dense grid over ``(p_hat, n, alpha)`` for a fixed ``eta``.

Table simulation draws the indicators 16 at a time: a block of 16 iid
Bernoulli(p) draws is one of 65536 bit patterns, sampled with an alias table,
and the block's weighted contribution is read from a precomputed table. The
draws have exactly the distribution of the per-indicator recurrence. The sum
is accumulated in reversed time (newest indicator first), so the running
partial sums give R for every ``n`` on the axis from a single pass.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import math
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

logger = logging.getLogger(__name__)

MIN_MC_SAMPLES = 1000
# alpha * m below this leaves too few order statistics in the tail
MIN_TAIL_SAMPLES = 10
# terms older than this weight are below double resolution
NEGLIGIBLE_WEIGHT = 1e-17

DEFAULT_P_AXIS = tuple(k / 100 for k in range(101))
DEFAULT_N_AXIS = tuple(range(1, 65)) + (
    80, 96, 112, 128, 160, 192, 224, 256, 320, 384, 448, 512, 1024, 2048,
)
DEFAULT_ALPHAS = (1e-5, 1e-4, 1e-3, 1e-2)
DEFAULT_MC_SAMPLES = 200_000
DEFAULT_TABLE_FILE = "bounds_eta0.9.dwb"

FORMAT_MAGIC = b"DWBOUNDS"
FORMAT_VERSION = 1

_BLOCK = 16
_PATTERNS = 1 << _BLOCK


class BoundTableError(ValueError):
    pass


@dataclass(frozen=True)
class GeomSumParams:
    p_hat: float
    eta: float
    n: int

    def __post_init__(self):
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat must lie in [0, 1], got {self.p_hat}")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")


@dataclass(frozen=True)
class QuantileBounds:
    lower: float
    upper: float
    alpha: float

    def excludes(self, value: float, tol: float = 1e-9) -> bool:
        """True when ``value`` falls strictly outside ``[lower, upper]``."""
        return value < self.lower - tol or value > self.upper + tol


def simulate_geometric_sum(params: GeomSumParams, rng: np.random.Generator) -> float:
    """One draw of R via the recurrence ``R <- eta*R + (1-eta)*I`` from 0."""
    hits = rng.random(params.n) < params.p_hat
    eta = params.eta
    r = 0.0
    for hit in hits.tolist():
        r = eta * r + (1.0 - eta) * hit
    return r


def order_statistic_index(q, m: int) -> int:
    """0-based index of the ``ceil(q*m)``-th order statistic of ``m`` draws.

    ``q`` is read as the decimal it prints as, so ``0.99 * 200000`` selects
    the 198000th value rather than falling victim to binary rounding.
    """
    qf = q if isinstance(q, Fraction) else Fraction(repr(float(q)))
    return min(max(math.ceil(qf * m), 1), m) - 1


def _tail_indices(alpha: float, m: int) -> tuple[int, int]:
    a = Fraction(repr(float(alpha)))
    return order_statistic_index(a, m), order_statistic_index(1 - a, m)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 0.5), got {alpha}")


def escalated_samples(mc_samples: int, alpha_min: float) -> int:
    """Sample count actually used so that ``alpha_min * m >= 10``."""
    needed = math.ceil(MIN_TAIL_SAMPLES / alpha_min - 1e-9)
    if mc_samples >= needed:
        return mc_samples
    msg = (
        f"alpha={alpha_min:g} with mc_samples={mc_samples} leaves fewer than "
        f"{MIN_TAIL_SAMPLES} tail samples; escalating to {needed}"
    )
    warnings.warn(msg, RuntimeWarning, stacklevel=3)
    logger.warning(msg)
    return needed


def effective_terms(eta: float, n: int) -> int:
    """Number of indicators whose weight is not negligible, capped at ``n``."""
    if eta == 0.0:
        return 1
    return min(n, math.ceil(math.log(NEGLIGIBLE_WEIGHT) / math.log(eta)))


@lru_cache(maxsize=1)
def _pattern_bits() -> np.ndarray:
    pats = np.arange(_PATTERNS, dtype=np.int64)
    return ((pats[:, None] >> np.arange(_BLOCK)) & 1).astype(np.float64)


@lru_cache(maxsize=4)
def _partial_block_sums(eta: float) -> np.ndarray:
    """``out[r, pat] = sum_{i<r} eta**i * bit_i(pat)`` for r in 0..16."""
    weights = eta ** np.arange(_BLOCK, dtype=np.float64)
    out = np.zeros((_BLOCK + 1, _PATTERNS))
    out[1:] = np.cumsum(_pattern_bits() * weights, axis=1).T
    return out


def _alias_table(p: float) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for the distribution of 16 iid Bernoulli(p) bits."""
    ones = _pattern_bits().sum(axis=1).astype(np.int64)
    pmf_by_count = np.array(
        [p**k * (1.0 - p) ** (_BLOCK - k) for k in range(_BLOCK + 1)]
    )
    scaled = pmf_by_count[ones] * _PATTERNS
    prob = np.ones(_PATTERNS)
    alias = np.arange(_PATTERNS, dtype=np.int64)
    small = [int(i) for i in np.flatnonzero(scaled < 1.0)]
    large = [int(i) for i in np.flatnonzero(scaled >= 1.0)]
    q = scaled.tolist()
    while small and large:
        s = small.pop()
        g = large[-1]
        prob[s] = q[s]
        alias[s] = g
        q[g] -= 1.0 - q[s]
        if q[g] < 1.0:
            small.append(large.pop())
    return prob, alias


def _draw_patterns(prob, alias, m: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(m) * _PATTERNS
    idx = u.astype(np.int64)
    return np.where(u - idx < prob[idx], idx, alias[idx])


def _simulate_row(
    p: float,
    eta: float,
    n_axis: Sequence[int],
    alphas: Sequence[float],
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Quantile bounds for one ``p`` across all ``n`` and ``alpha``.

    Returns an array of shape ``(len(n_axis), len(alphas), 2)``.
    """
    n_axis = [int(n) for n in n_axis]
    out = np.empty((len(n_axis), len(alphas), 2))
    tails = [_tail_indices(a, m) for a in alphas]
    kth = sorted({k for pair in tails for k in pair})

    def fill(col: int, sums: np.ndarray) -> None:
        sel = np.partition(sums, kth)
        for a, (lo, hi) in enumerate(tails):
            out[col, a, 0] = (1.0 - eta) * sel[lo]
            out[col, a, 1] = (1.0 - eta) * sel[hi]

    by_n = sorted(range(len(n_axis)), key=lambda c: n_axis[c])
    n_blocks = math.ceil(effective_terms(eta, max(n_axis)) / _BLOCK)
    partial = _partial_block_sums(eta)
    prob, alias = _alias_table(p)
    sums = np.zeros(m)
    pos = 0
    for b in range(n_blocks):
        pats = _draw_patterns(prob, alias, m, rng)
        scale = eta ** (_BLOCK * b) if b else 1.0
        start = _BLOCK * b
        while pos < len(by_n) and n_axis[by_n[pos]] < start + _BLOCK:
            r = n_axis[by_n[pos]] - start
            fill(by_n[pos], sums if r == 0 else sums + scale * partial[r][pats])
            pos += 1
        sums += scale * partial[_BLOCK][pats]
    if pos < len(by_n):
        sel_cols = by_n[pos:]
        fill(sel_cols[0], sums)
        for col in sel_cols[1:]:
            out[col] = out[sel_cols[0]]
    return out


def estimate_bounds(
    params: GeomSumParams,
    alpha: float,
    mc_samples: int,
    rng: np.random.Generator,
) -> QuantileBounds:
    """Empirical alpha and (1 - alpha) quantiles of ``mc_samples`` draws of R."""
    _check_alpha(alpha)
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}, got {mc_samples}")
    m = escalated_samples(mc_samples, alpha)
    row = _simulate_row(params.p_hat, params.eta, [params.n], [alpha], m, rng)
    return QuantileBounds(float(row[0, 0, 0]), float(row[0, 0, 1]), alpha)


@dataclass(frozen=True)
class GridSpec:
    p_axis: tuple[float, ...] = DEFAULT_P_AXIS
    n_axis: tuple[int, ...] = DEFAULT_N_AXIS
    alphas: tuple[float, ...] = DEFAULT_ALPHAS

    def __post_init__(self):
        object.__setattr__(self, "p_axis", tuple(float(p) for p in self.p_axis))
        object.__setattr__(self, "n_axis", tuple(int(n) for n in self.n_axis))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        for name in ("p_axis", "n_axis", "alphas"):
            axis = getattr(self, name)
            if not axis:
                raise ValueError(f"{name} must be nonempty")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if self.p_axis[0] < 0 or self.p_axis[-1] > 1:
            raise ValueError("p_axis must lie within [0, 1]")
        if self.n_axis[0] < 1:
            raise ValueError("n_axis values must be positive")
        for a in self.alphas:
            _check_alpha(a)


def _pava_columns(values: np.ndarray) -> np.ndarray:
    """Nondecreasing isotonic fit along axis 0 for every other index."""
    flat = values.reshape(values.shape[0], -1)
    out = np.empty_like(flat)
    for j in range(flat.shape[1]):
        col = flat[:, j]
        if np.all(np.diff(col) >= 0):
            out[:, j] = col
        else:
            out[:, j] = isotonic_regression(col, increasing=True).x
    return out.reshape(values.shape)


@dataclass(frozen=True, eq=False)
class BoundTable:
    """Precomputed quantile bounds over ``(p_hat, n, alpha)`` for one ``eta``.

    ``bounds[i, j, k]`` holds ``(lower, upper)`` for ``p_axis[i]``,
    ``n_axis[j]`` and ``alphas[k]``.
    """

    eta: float
    grid: GridSpec
    bounds: np.ndarray
    mc_samples: int
    effective_mc_samples: int
    seed: int
    _p_list: list = field(init=False, repr=False)
    _n_list: list = field(init=False, repr=False)

    def __post_init__(self):
        shape = (len(self.grid.p_axis), len(self.grid.n_axis), len(self.grid.alphas), 2)
        if self.bounds.shape != shape:
            raise BoundTableError(f"bounds shape {self.bounds.shape} does not match grid {shape}")
        object.__setattr__(self, "_p_list", list(self.grid.p_axis))
        object.__setattr__(self, "_n_list", list(self.grid.n_axis))
        self.bounds.setflags(write=False)

    @property
    def alphas(self) -> tuple[float, ...]:
        return self.grid.alphas

    def alpha_index(self, alpha: float) -> int:
        for k, a in enumerate(self.grid.alphas):
            if math.isclose(a, alpha, rel_tol=1e-12, abs_tol=0.0):
                return k
        raise BoundTableError(
            f"alpha={alpha:g} is not on the table's alpha axis {list(self.grid.alphas)}"
        )

    def p_index(self, p_hat: float) -> int:
        """Nearest grid value; ties go to the smaller one."""
        axis = self._p_list
        i = bisect.bisect_left(axis, p_hat)
        if i == 0:
            return 0
        if i == len(axis):
            return i - 1
        return i - 1 if p_hat - axis[i - 1] <= axis[i] - p_hat else i

    def n_index(self, n: int) -> int:
        """Smallest grid ``n`` not below the request, saturating at the top.

        R over more terms dominates R over fewer terms path by path, so
        rounding up never makes the upper bound tighter than it should be.
        """
        return min(bisect.bisect_left(self._n_list, n), len(self._n_list) - 1)

    def lookup(self, p_hat: float, alpha: float, n: int) -> QuantileBounds:
        k = self.alpha_index(alpha)
        lo, hi = self.bounds[self.p_index(p_hat), self.n_index(n), k]
        return QuantileBounds(float(lo), float(hi), self.grid.alphas[k])

    def slices(self, alpha: float) -> tuple[list, list]:
        """Nested ``[p][n]`` lists of lower and upper bounds for one alpha."""
        k = self.alpha_index(alpha)
        return self.bounds[:, :, k, 0].tolist(), self.bounds[:, :, k, 1].tolist()

    # -- persistence -------------------------------------------------------

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "eta": self.eta,
            "mc_samples": self.mc_samples,
            "effective_mc_samples": self.effective_mc_samples,
            "seed": self.seed,
            "p_axis": list(self.grid.p_axis),
            "n_axis": list(self.grid.n_axis),
            "alphas": list(self.grid.alphas),
            "shape": list(self.bounds.shape),
            "layout": "float64 little-endian, C order [p][n][alpha][lower,upper]",
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode()
        body = np.ascontiguousarray(self.bounds, dtype="<f8").tobytes()
        return FORMAT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(head)) + head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "BoundTable":
        if data[: len(FORMAT_MAGIC)] != FORMAT_MAGIC:
            raise BoundTableError("not a bound-table file (bad magic)")
        offset = len(FORMAT_MAGIC)
        if len(data) < offset + 8:
            raise BoundTableError("bound-table file is truncated")
        version, head_len = struct.unpack_from("<II", data, offset)
        if version != FORMAT_VERSION:
            raise BoundTableError(f"unsupported bound-table format version {version}")
        offset += 8
        try:
            head = json.loads(data[offset : offset + head_len])
        except ValueError as exc:
            raise BoundTableError(f"bound-table header is unreadable: {exc}") from None
        offset += head_len
        shape = tuple(head["shape"])
        expected = int(np.prod(shape)) * 8
        if len(data) - offset != expected:
            raise BoundTableError(f"bound-table body has {len(data) - offset} bytes, expected {expected}")
        bounds = np.frombuffer(data, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)
        grid = GridSpec(head["p_axis"], head["n_axis"], head["alphas"])
        return cls(
            eta=head["eta"],
            grid=grid,
            bounds=bounds,
            mc_samples=head["mc_samples"],
            effective_mc_samples=head["effective_mc_samples"],
            seed=head["seed"],
        )

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.write_bytes(self.to_bytes())
        except OSError as exc:
            raise OSError(f"cannot write bound table to {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "BoundTable":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise OSError(f"cannot read bound table {path}: {exc}") from exc
        return cls.from_bytes(data)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _row_rng(seed: int, row: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(row,)))


def _row_job(args):
    row, p, eta, n_axis, alphas, m, seed = args
    return _simulate_row(p, eta, n_axis, alphas, m, _row_rng(seed, row))


def build_table(
    grid: GridSpec | None = None,
    eta: float = 0.9,
    mc_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> BoundTable:
    """Fill the full grid by simulation and enforce monotonicity in ``p_hat``.

    Each ``p_hat`` row draws from its own stream derived from ``(seed, row)``,
    so the table does not depend on ``workers``. All ``n`` and ``alpha``
    cells in a row come from the same draws.
    """
    grid = grid or GridSpec()
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    if mc_samples < MIN_MC_SAMPLES:
        raise ValueError(f"mc_samples must be at least {MIN_MC_SAMPLES}, got {mc_samples}")
    m = escalated_samples(mc_samples, min(grid.alphas))
    jobs = [
        (i, p, eta, grid.n_axis, grid.alphas, m, seed) for i, p in enumerate(grid.p_axis)
    ]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, row in enumerate(pool.map(_row_job, jobs)):
                rows.append(row)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            rows.append(_row_job(job))
            if progress:
                progress(i + 1, len(jobs))
    raw = np.stack(rows)
    bounds = _pava_columns(raw)
    return BoundTable(
        eta=float(eta),
        grid=grid,
        bounds=bounds,
        mc_samples=int(mc_samples),
        effective_mc_samples=int(m),
        seed=int(seed),
    )


def default_table_path() -> Path:
    return Path(str(resources.files("driftwatch") / "data" / DEFAULT_TABLE_FILE))


@lru_cache(maxsize=1)
def load_default_table() -> BoundTable:
    """The shipped eta=0.9 table covering the preset significance levels."""
    path = default_table_path()
    if not path.exists():
        raise FileNotFoundError(
            f"default bound table missing at {path}; build it with "
            "`driftwatch bounds build --out` and copy it there"
        )
    return BoundTable.load(path)
