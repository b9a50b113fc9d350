"""Step-wise drift detectors fed with ``(y, yhat)`` pairs.

All detectors share one interface: ``step(y, yhat)`` returns a
:class:`StepOutcome`, ``reset()`` restores the initial monitoring state while
the global time index keeps counting, and ``run(pairs)`` returns the list of
drift times over a whole stream (the detector resets itself after each drift
and keeps monitoring).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Iterable, Mapping, Sequence

from .bounds import BoundTable, QuantileBounds, load_default_table
from .rates import RATES, ConfusionCounts, RateKind, check_label, empirical_rate

INITIAL_RATE = 0.5
# float slack when comparing a statistic against a stored bound
BOUND_TOL = 1e-9

DriftHook = Callable[[int, int], None]


class Status(enum.Enum):
    STABLE = "stable"
    WARNING = "warning"
    DRIFT = "drift"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class StepOutcome:
    status: Status
    triggered_rates: frozenset = frozenset()
    warn_window: tuple[int, int] | None = None

    def __post_init__(self):
        if (self.warn_window is None) == (self.status is Status.DRIFT):
            raise ValueError("warn_window must be set exactly when status is DRIFT")


_STABLE = StepOutcome(Status.STABLE)
_WARNING = StepOutcome(Status.WARNING)


def _per_rate(value, name: str) -> tuple[float, ...]:
    if isinstance(value, Mapping):
        missing = [k for k in RATES if k not in value and k.value not in value]
        if missing:
            raise ValueError(f"{name} missing rates {[str(k) for k in missing]}")
        return tuple(float(value[k] if k in value else value[k.value]) for k in RATES)
    if isinstance(value, (list, tuple)):
        if len(value) != 4:
            raise ValueError(f"{name} needs one value per rate (4), got {len(value)}")
        return tuple(float(v) for v in value)
    return (float(value),) * 4


@dataclass(frozen=True)
class DetectorParams:
    """Per-rate decay and significance levels, in ``RATES`` order.

    Scalars are broadcast to all four rates; mappings may be keyed by
    :class:`RateKind` or by its string value.
    """

    eta: tuple[float, ...] = (0.9,) * 4
    delta: tuple[float, ...] = (0.01,) * 4
    epsilon: tuple[float, ...] = (1e-5,) * 4

    def __post_init__(self):
        for name in ("eta", "delta", "epsilon"):
            object.__setattr__(self, name, _per_rate(getattr(self, name), name))
        for kind, eta, delta, eps in zip(RATES, self.eta, self.delta, self.epsilon):
            if not 0.0 <= eta < 1.0:
                raise ValueError(f"eta for {kind} must lie in [0, 1), got {eta}")
            if not 0.0 < eps < delta < 0.5:
                raise ValueError(
                    f"{kind}: need 0 < epsilon < delta < 0.5, got epsilon={eps}, delta={delta}"
                )

    def as_dict(self) -> dict:
        return {
            "eta": list(self.eta),
            "delta": list(self.delta),
            "epsilon": list(self.epsilon),
        }


class Detector:
    """Common time and warn-window bookkeeping."""

    name = "detector"

    def __init__(self, on_drift: DriftHook | None = None):
        self.on_drift = on_drift
        self.t = 0
        self.warn_time = 0
        self.reset()

    def reset(self) -> None:
        self.warn_time = 0

    def step(self, y: int, yhat: int) -> StepOutcome:
        raise NotImplementedError

    def _conclude(self, warn: bool, detect: bool, triggered=frozenset()) -> StepOutcome:
        # same warn-time protocol for every detector
        t = self.t
        if warn and self.warn_time == 0:
            self.warn_time = t
        elif not warn:
            self.warn_time = 0
        if detect:
            window = (self.warn_time or t, t)
            if self.on_drift is not None:
                self.on_drift(*window)
            self.reset()
            return StepOutcome(Status.DRIFT, frozenset(triggered), window)
        if self.warn_time:
            return StepOutcome(Status.WARNING, frozenset(triggered)) if triggered else _WARNING
        return _STABLE

    def run(self, pairs: Iterable[tuple[int, int]]) -> list[int]:
        drifts = []
        for y, yhat in pairs:
            if self.step(y, yhat).status is Status.DRIFT:
                drifts.append(self.t)
        return drifts


class _FourRateDetector(Detector):
    def __init__(self, params: DetectorParams | None = None, on_drift: DriftHook | None = None):
        self.params = params or DetectorParams()
        super().__init__(on_drift)

    def reset(self) -> None:
        super().reset()
        self.counts = ConfusionCounts()
        # number of updates each rate received since the last reset
        self.updates = [0, 0, 0, 0]

    def p_hat(self, kind: RateKind) -> float:
        return empirical_rate(self.counts, kind)


class LFR(_FourRateDetector):
    """Linear Four Rates: decayed per-rate accuracy tested against MC bounds.

    Each rate's statistic starts at 0.5 and, after ``k`` updates, equals
    ``0.5 * eta**k`` plus a geometric Bernoulli sum of ``k`` terms. The
    deterministic start-up term is subtracted before comparing with the table,
    whose quantiles describe the sum alone.
    """

    name = "LFR"

    def __init__(
        self,
        params: DetectorParams | None = None,
        table: BoundTable | None = None,
        on_drift: DriftHook | None = None,
    ):
        params = params or DetectorParams()
        table = table if table is not None else load_default_table()
        for kind, eta in zip(RATES, params.eta):
            if not math.isclose(eta, table.eta, rel_tol=0, abs_tol=1e-12):
                raise ValueError(f"rate {kind} uses eta={eta} but the bound table has eta={table.eta}")
        self.table = table
        self._warn_bounds = [table.slices(a) for a in params.delta]
        self._detect_bounds = [table.slices(a) for a in params.epsilon]
        super().__init__(params, on_drift)

    def reset(self) -> None:
        super().reset()
        self.r = [INITIAL_RATE] * 4
        self._start_term = [INITIAL_RATE] * 4

    def step(self, y: int, yhat: int) -> StepOutcome:
        if y not in (0, 1) or yhat not in (0, 1):
            check_label(y), check_label(yhat)
        self.t += 1
        c = self.counts.c
        c[yhat][y] += 1
        hit = 1.0 if y == yhat else 0.0
        etas = self.params.eta
        r = self.r
        for i in (0 if y == 1 else 1, 2 if yhat == 1 else 3):
            eta = etas[i]
            r[i] = eta * r[i] + (1.0 - eta) * hit
            self._start_term[i] *= eta
            self.updates[i] += 1

        table = self.table
        tp, tn = c[1][1], c[0][0]
        p_hats = (tp / (tp + c[0][1]), tn / (tn + c[1][0]), tp / (tp + c[1][0]), tn / (tn + c[0][1]))
        warn_hits = []
        detect_hits = []
        for i in range(4):
            k = self.updates[i]
            if k == 0:
                continue
            stat = r[i] - self._start_term[i]
            pi = table.p_index(p_hats[i])
            ni = table.n_index(k)
            lo, hi = self._warn_bounds[i]
            if stat < lo[pi][ni] - BOUND_TOL or stat > hi[pi][ni] + BOUND_TOL:
                warn_hits.append(RATES[i])
            lo, hi = self._detect_bounds[i]
            if stat < lo[pi][ni] - BOUND_TOL or stat > hi[pi][ni] + BOUND_TOL:
                detect_hits.append(RATES[i])
        if detect_hits:
            return self._conclude(bool(warn_hits), True, detect_hits)
        return self._conclude(bool(warn_hits), False, warn_hits)

    def statistic(self, kind: RateKind) -> float:
        return self.r[RATES.index(kind)]


def _clamped_sd(centre: float, n: int) -> tuple[float, float]:
    # keep the centre off 0 and 1 so the band never collapses to a point
    floor = 1.0 / (n + 2)
    centre = min(max(centre, floor), 1.0 - floor)
    return centre, math.sqrt(centre * (1.0 - centre) / n)


def normal_bounds(centre: float, n: int, alpha: float) -> QuantileBounds:
    """Normal-approximation band ``centre +- z_{1-alpha} * sd`` for a rate over ``n`` trials."""
    c, sd = _clamped_sd(centre, n)
    z = NormalDist().inv_cdf(1.0 - alpha)
    return QuantileBounds(c - z * sd, c + z * sd, alpha)


class NFR(_FourRateDetector):
    """Naive Four Rates: empirical rates tested against a normal null.

    The null centre for each rate is the running mean of that rate's past
    empirical values (taken at the steps that updated it); the test at a step
    uses the mean from before that step.
    """

    name = "NFR"

    def __init__(self, params: DetectorParams | None = None, on_drift: DriftHook | None = None):
        params = params or DetectorParams(delta=0.025, epsilon=1e-3)
        z = NormalDist().inv_cdf
        self._z_warn = tuple(z(1.0 - d) for d in params.delta)
        self._z_detect = tuple(z(1.0 - e) for e in params.epsilon)
        super().__init__(params, on_drift)

    def reset(self) -> None:
        super().reset()
        self._p_hat_sum = [0.0] * 4

    def p_bar(self, kind: RateKind) -> float:
        i = RATES.index(kind)
        k = self.updates[i]
        return self._p_hat_sum[i] / k if k else INITIAL_RATE

    def step(self, y: int, yhat: int) -> StepOutcome:
        if y not in (0, 1) or yhat not in (0, 1):
            check_label(y), check_label(yhat)
        self.t += 1
        c = self.counts.c
        c[yhat][y] += 1
        tp, tn, fn, fp = c[1][1], c[0][0], c[0][1], c[1][0]
        dens = (tp + fn, tn + fp, tp + fp, tn + fn)
        p_hats = (tp / dens[0], tn / dens[1], tp / dens[2], tn / dens[3])
        warn_hits = []
        detect_hits = []
        for i in range(4):
            k = self.updates[i]
            n = dens[i]
            centre, sd = _clamped_sd(self._p_hat_sum[i] / k if k else INITIAL_RATE, n)
            gap = abs(p_hats[i] - centre)
            if gap > self._z_warn[i] * sd:
                warn_hits.append(RATES[i])
            if gap > self._z_detect[i] * sd:
                detect_hits.append(RATES[i])
        for i in (0 if y == 1 else 1, 2 if yhat == 1 else 3):
            self._p_hat_sum[i] += p_hats[i]
            self.updates[i] += 1
        if detect_hits:
            return self._conclude(bool(warn_hits), True, detect_hits)
        return self._conclude(bool(warn_hits), False, warn_hits)

    def statistic(self, kind: RateKind) -> float:
        return self.p_hat(kind)


class DDM(Detector):
    """Error-rate drift detection with the usual p + s minimum tracking."""

    name = "DDM"

    def __init__(
        self,
        warn_mult: float = 2.0,
        detect_mult: float = 3.0,
        min_samples: int = 30,
        on_drift: DriftHook | None = None,
    ):
        if not 0 < warn_mult < detect_mult:
            raise ValueError("need 0 < warn_mult < detect_mult")
        self.warn_mult = warn_mult
        self.detect_mult = detect_mult
        self.min_samples = min_samples
        super().__init__(on_drift)

    def reset(self) -> None:
        super().reset()
        self.n = 0
        self.errors = 0
        self.p_err = 0.0
        self.s_err = 0.0
        self.p_min = math.inf
        self.s_min = math.inf

    def step(self, y: int, yhat: int) -> StepOutcome:
        if y not in (0, 1) or yhat not in (0, 1):
            check_label(y), check_label(yhat)
        self.t += 1
        self.n += 1
        self.errors += y != yhat
        n = self.n
        p = self.errors / n
        s = math.sqrt(p * (1.0 - p) / n)
        self.p_err, self.s_err = p, s
        if n < self.min_samples:
            return self._conclude(False, False)
        if p + s < self.p_min + self.s_min:
            self.p_min, self.s_min = p, s
        level = p + s
        detect = level > self.p_min + self.detect_mult * self.s_min
        warn = level > self.p_min + self.warn_mult * self.s_min
        return self._conclude(warn, detect)


class DDMOCI(Detector):
    """DDM-style test on the decayed minority-class recall.

    The recall statistic moves only on ``y == 1`` steps, with standard error
    ``s = sqrt(R (1 - R) / n_pos)``. The detector tracks the best recall seen
    since the last reset and signals once ``R + mult * s`` drops below it.
    """

    name = "DDM-OCI"

    def __init__(
        self,
        warn_mult: float = 10.0,
        detect_mult: float = 20.0,
        eta: float = 0.9,
        min_samples: int = 30,
        on_drift: DriftHook | None = None,
    ):
        if not 0 < warn_mult < detect_mult:
            raise ValueError("need 0 < warn_mult < detect_mult")
        if not 0.0 <= eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        self.warn_mult = warn_mult
        self.detect_mult = detect_mult
        self.eta = eta
        self.min_samples = min_samples
        super().__init__(on_drift)

    def reset(self) -> None:
        super().reset()
        self.r_tpr = INITIAL_RATE
        self.n_pos = 0
        self.s = 0.0
        self.r_best = -math.inf

    def step(self, y: int, yhat: int) -> StepOutcome:
        if y not in (0, 1) or yhat not in (0, 1):
            check_label(y), check_label(yhat)
        self.t += 1
        if y != 1:
            # statistic unchanged, so is the verdict
            return _WARNING if self.warn_time else _STABLE
        eta = self.eta
        self.r_tpr = r = eta * self.r_tpr + (1.0 - eta) * (yhat == 1)
        self.n_pos += 1
        self.s = s = math.sqrt(r * (1.0 - r) / self.n_pos)
        if self.n_pos < self.min_samples:
            return self._conclude(False, False)
        if r > self.r_best:
            self.r_best = r
        detect = r + self.detect_mult * s < self.r_best
        warn = r + self.warn_mult * s < self.r_best
        triggered = (RateKind.TPR,) if warn or detect else ()
        return self._conclude(warn, detect, triggered)


# Parameter presets; "paper-synthetic" is the setting used for the synthetic
# benchmark, the "paper-public" ones are the per-dataset settings for the
# public benchmarks.
PRESETS: dict[str, dict[str, dict]] = {
    "paper-synthetic": {
        "LFR": {"eta": 0.9, "delta": 1e-2, "epsilon": 1e-5},
        "NFR": {"eta": 0.9, "delta": 0.025, "epsilon": 1e-3},
        "DDM": {"warn_mult": 2.0, "detect_mult": 3.0},
        "DDM-OCI": {"warn_mult": 10.0, "detect_mult": 20.0, "eta": 0.9},
    },
    "paper-public": {
        "LFR": {"eta": 0.9, "delta": 1e-2, "epsilon": 1e-4},
        "NFR": {"eta": 0.9, "delta": 0.025, "epsilon": 1e-3},
        "DDM": {"warn_mult": 2.0, "detect_mult": 3.0},
        "DDM-OCI": {"warn_mult": 10.0, "detect_mult": 20.0, "eta": 0.9},
    },
    "paper-public-hyperplane": {
        "LFR": {"eta": 0.9, "delta": 1e-2, "epsilon": 1e-4},
        "NFR": {"eta": 0.9, "delta": 0.025, "epsilon": 1e-3},
        "DDM": {"warn_mult": 2.0, "detect_mult": 3.0},
        "DDM-OCI": {"warn_mult": 10.0, "detect_mult": 30.0, "eta": 0.9},
    },
    "paper-public-usenet": {
        "LFR": {"eta": 0.9, "delta": 1e-2, "epsilon": 1e-4},
        "NFR": {"eta": 0.9, "delta": 0.025, "epsilon": 1e-3},
        "DDM": {"warn_mult": 2.0, "detect_mult": 3.0},
        "DDM-OCI": {"warn_mult": 2.0, "detect_mult": 3.0, "eta": 0.9},
    },
}

METHODS = ("LFR", "NFR", "DDM", "DDM-OCI")


def make_detector(method: str, settings: Mapping, table: BoundTable | None = None) -> Detector:
    """Build a fresh detector from a preset-style settings mapping."""
    if method == "LFR":
        return LFR(DetectorParams(**settings), table=table)
    if method == "NFR":
        return NFR(DetectorParams(**settings))
    if method == "DDM":
        return DDM(**settings)
    if method == "DDM-OCI":
        return DDMOCI(**settings)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


TRAJECTORY_COLUMNS = (
    ["t", "y", "yhat"]
    + [f"R_{k}" for k in RATES]
    + [f"Phat_{k}" for k in RATES]
    + ["status"]
)


def write_trajectory(
    path, detector: _FourRateDetector, pairs: Sequence[tuple[int, int]]
) -> Path:
    """Run ``detector`` over ``pairs`` and dump one CSV row per step.

    ``R_*`` columns hold the decayed statistic for LFR and are empty for
    detectors without one.
    """
    path = Path(path)
    has_r = hasattr(detector, "r")
    try:
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(TRAJECTORY_COLUMNS)
            for y, yhat in pairs:
                outcome = detector.step(y, yhat)
                r_vals = [repr(v) for v in detector.r] if has_r else [""] * 4
                out.writerow(
                    [detector.t, y, yhat]
                    + r_vals
                    + [repr(detector.p_hat(k)) for k in RATES]
                    + [outcome.status.value]
                )
    except OSError as exc:
        raise OSError(f"cannot write trajectory to {path}: {exc}") from exc
    return path
