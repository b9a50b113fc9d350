"""Bootstrapped detection experiments: run, score, report.

Scoring uses change points ``b`` (the last step of a concept):

* a detection in ``(b, b + bin_width * true_window_bins]`` is *in window*,
  and each replicate counts at most once per change point as a true detection;
* before the first change point every detection in ``[1, b]`` is false; for a
  later change point the false period starts half-way into the concept that
  ends at ``b``;
* everything else is *delayed* (late, or in the recovery half of a concept).
"""

from __future__ import annotations

import csv
import json
import logging
import platform
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .bounds import BoundTable, load_default_table
from .detectors import METHODS, PRESETS, DetectorParams, make_detector
from .streams import DEFAULT_LENGTH, StreamConfig, generate_stream, replicate_seed, scenario

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
DETECTIONS_FILE = "detections.csv"
COUNTS_FILE = "counts.csv"
HISTOGRAM_FILE = "histogram.csv"
COUNTS_COLUMNS = (
    "method",
    "replicates",
    "true_detections",
    "false_detections",
    "delayed_detections",
    "in_window_detections",
    "total_detections",
)


class ConfigurationError(ValueError):
    """An experiment cannot run with the given configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str | None = "Balance1"
    stream: StreamConfig | None = None
    length: int = DEFAULT_LENGTH
    preset: str = "paper-synthetic"
    methods: tuple[str, ...] = METHODS
    overrides: Mapping[str, Mapping] = field(default_factory=dict)
    replicates: int = 100
    bin_width: int = 200
    true_window_bins: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if (self.scenario is None) == (self.stream is None):
            raise ConfigurationError("give exactly one of scenario or stream")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.bin_width < 1 or self.true_window_bins < 1:
            raise ConfigurationError("bin_width and true_window_bins must be >= 1")
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        unknown = [m for m in (*self.methods, *self.overrides) if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigurationError(f"methods must be a nonempty subset of {METHODS}, got {unknown}")

    def stream_config(self) -> StreamConfig:
        if self.stream is not None:
            return self.stream
        try:
            return scenario(self.scenario, self.length)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def settings(self) -> dict[str, dict]:
        """Detector settings per method: the preset, then any overrides."""
        out = {}
        for m in self.methods:
            s = dict(PRESETS[self.preset][m])
            s.update(self.overrides.get(m, {}))
            out[m] = s
        return out

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "stream": self.stream_config().to_dict(),
            "length": self.length,
            "preset": self.preset,
            "methods": list(self.methods),
            "overrides": {m: dict(v) for m, v in self.overrides.items()},
            "replicates": self.replicates,
            "bin_width": self.bin_width,
            "true_window_bins": self.true_window_bins,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        kw = dict(
            length=data.get("length", DEFAULT_LENGTH),
            preset=data.get("preset", "paper-synthetic"),
            methods=tuple(data.get("methods", METHODS)),
            overrides=data.get("overrides", {}),
            replicates=data.get("replicates", 100),
            bin_width=data.get("bin_width", 200),
            true_window_bins=data.get("true_window_bins", 1),
            seed=data.get("seed", 0),
        )
        if data.get("scenario"):
            return cls(scenario=data["scenario"], **kw)
        return cls(scenario=None, stream=StreamConfig.from_dict(data["stream"]), **kw)


@dataclass(frozen=True)
class DetectionRecord:
    method: str
    replicate: int
    times: tuple[int, ...]
    drift_times: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(int(t) for t in self.times))
        object.__setattr__(self, "drift_times", tuple(int(t) for t in self.drift_times))
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("detection times must be strictly increasing")


@dataclass
class MethodScore:
    replicates: int = 0
    true_detections: int = 0
    false_detections: int = 0
    delayed_detections: int = 0
    in_window_detections: int = 0
    total_detections: int = 0
    histogram: Counter = field(default_factory=Counter)


@dataclass
class ScoreCard:
    bin_width: int
    length: int
    methods: dict[str, MethodScore]

    def __getitem__(self, method: str) -> MethodScore:
        return self.methods[method]


# --------------------------------------------------------------------- running


def _check_table(settings: Mapping[str, Mapping], table: BoundTable) -> None:
    if "LFR" not in settings:
        return
    try:
        params = DetectorParams(**settings["LFR"])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"LFR settings: {exc}") from None
    if any(abs(eta - table.eta) > 1e-12 for eta in params.eta):
        raise ConfigurationError(f"LFR eta {params.eta} does not match the bound table's eta={table.eta}")
    for key, values in (("delta", params.delta), ("epsilon", params.epsilon)):
        for a in values:
            try:
                table.alpha_index(a)
            except ValueError as exc:
                raise ConfigurationError(f"LFR {key}: {exc}") from None


_worker_table: BoundTable | None = None


def _init_worker(table_bytes: bytes | None) -> None:
    global _worker_table
    _worker_table = BoundTable.from_bytes(table_bytes) if table_bytes is not None else None


def _run_replicate(stream_cfg: StreamConfig, settings, seed: int, rep: int, table) -> list[DetectionRecord]:
    stream = generate_stream(stream_cfg.with_seed(replicate_seed(seed, rep)))
    pairs = stream.pairs()
    return [
        DetectionRecord(m, rep, make_detector(m, s, table).run(pairs), stream.drift_times)
        for m, s in settings.items()
    ]


def _replicate_job(args) -> list[DetectionRecord]:
    return _run_replicate(*args, _worker_table)


def run_experiment(
    config: ExperimentConfig, table: BoundTable | None = None, workers: int = 1
) -> list[DetectionRecord]:
    """Run every method over ``config.replicates`` fresh streams.

    Records come back ordered by replicate, then method, whatever ``workers``.
    """
    settings = config.settings()
    stream_cfg = config.stream_config()
    if "LFR" in settings:
        table = table if table is not None else load_default_table()
        _check_table(settings, table)
    reps = range(config.replicates)
    if workers > 1:
        jobs = [(stream_cfg, settings, config.seed, r) for r in reps]
        blob = table.to_bytes() if table is not None else None
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(blob,)) as pool:
            chunks = list(pool.map(_replicate_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        chunks = [_run_replicate(stream_cfg, settings, config.seed, r, table) for r in reps]
    return [rec for chunk in chunks for rec in chunk]


# --------------------------------------------------------------------- scoring


def _classify(t: int, drifts: Sequence[int], window: int) -> tuple[str, int | None]:
    for j, b in enumerate(drifts):
        if b < t <= b + window:
            return "true", j
    prev = 0
    for j, b in enumerate(drifts):
        start = 1 if j == 0 else prev + 1 + (b - prev) // 2
        if start <= t <= b:
            return "false", None
        prev = b
    if not drifts:
        return "false", None
    return "delayed", None


def score(
    records: Sequence[DetectionRecord],
    bin_width: int = 200,
    true_window_bins: int = 1,
    length: int | None = None,
) -> ScoreCard:
    """Tally true, false and delayed detections per method."""
    if bin_width < 1 or true_window_bins < 1:
        raise ValueError("bin_width and true_window_bins must be >= 1")
    window = bin_width * true_window_bins
    methods: dict[str, MethodScore] = {}
    max_t = 0
    for rec in records:
        ms = methods.setdefault(rec.method, MethodScore())
        ms.replicates += 1
        hit_drifts = set()
        for t in rec.times:
            kind, j = _classify(t, rec.drift_times, window)
            if kind == "true":
                ms.in_window_detections += 1
                hit_drifts.add(j)
            elif kind == "false":
                ms.false_detections += 1
            else:
                ms.delayed_detections += 1
            ms.histogram[(t - 1) // bin_width] += 1
            max_t = max(max_t, t)
        ms.true_detections += len(hit_drifts)
        ms.total_detections += len(rec.times)
    return ScoreCard(bin_width, length if length is not None else max_t, methods)


# --------------------------------------------------------------------- reports


def build_manifest(config: ExperimentConfig, table: BoundTable | None) -> dict:
    stream_cfg = config.stream_config()
    return {
        "config": config.to_dict(),
        "drift_times": stream_cfg.drift_times(),
        "stream_length": stream_cfg.length,
        "replicate_seeds": [replicate_seed(config.seed, r) for r in range(config.replicates)],
        "detector_settings": config.settings(),
        "table": None if table is None else {"eta": table.eta, "fingerprint": table.fingerprint()},
        "versions": {
            "driftwatch": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_records(out_dir, records: Sequence[DetectionRecord]) -> Path:
    """Long-form ``method,replicate,t`` rows, one per detection."""
    rows = [(r.method, r.replicate, t) for r in records for t in r.times]
    return _write_csv(Path(out_dir) / DETECTIONS_FILE, ("method", "replicate", "t"), rows)


def read_records(run_dir) -> tuple[list[DetectionRecord], dict]:
    """Rebuild records of a finished run from its detections and manifest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / MANIFEST_FILE).read_text())
    cfg = manifest["config"]
    times: dict[tuple[str, int], list[int]] = {
        (m, r): [] for r in range(cfg["replicates"]) for m in cfg["methods"]
    }
    with (run_dir / DETECTIONS_FILE).open(newline="") as fh:
        for row in csv.DictReader(fh):
            times[(row["method"], int(row["replicate"]))].append(int(row["t"]))
    drifts = manifest["drift_times"]
    records = [
        DetectionRecord(m, r, times[(m, r)], drifts)
        for r in range(cfg["replicates"])
        for m in cfg["methods"]
    ]
    return records, manifest


def emit_report(
    card: ScoreCard,
    out_dir,
    manifest: Mapping | None = None,
    records: Sequence[DetectionRecord] | None = None,
) -> list[Path]:
    """Write counts, histogram and (optionally) manifest and detections."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = [
            (m, s.replicates, s.true_detections, s.false_detections, s.delayed_detections,
             s.in_window_detections, s.total_detections)
            for m, s in card.methods.items()
        ]
        written.append(_write_csv(out_dir / COUNTS_FILE, COUNTS_COLUMNS, rows))
        n_bins = max(
            [-(-card.length // card.bin_width)]
            + [max(s.histogram) + 1 for s in card.methods.values() if s.histogram]
        )
        rows = [
            (m, b * card.bin_width + 1, (b + 1) * card.bin_width, s.histogram.get(b, 0))
            for m, s in card.methods.items()
            for b in range(n_bins)
        ]
        written.append(_write_csv(out_dir / HISTOGRAM_FILE, ("method", "bin_start", "bin_end", "count"), rows))
        if records is not None:
            written.append(write_records(out_dir, records))
        if manifest is not None:
            path = out_dir / MANIFEST_FILE
            path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report under {out_dir}: {exc}") from exc
    return written
