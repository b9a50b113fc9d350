"""Synthetic ``(y, yhat)`` streams sampled from confusion probability matrices."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction as F
from pathlib import Path

import numpy as np

from .rates import RATES, ConfusionProbMatrix

# categorical draw order over the cells of CP[yhat][y]
CELL_ORDER = ("TN", "FN", "FP", "TP")
_CELL_Y = np.array([0, 1, 0, 1], dtype=np.int8)
_CELL_YHAT = np.array([0, 0, 1, 1], dtype=np.int8)


@dataclass(frozen=True)
class ConceptSpec:
    cp: ConfusionProbMatrix
    length: int

    def __post_init__(self):
        if not isinstance(self.cp, ConfusionProbMatrix):
            object.__setattr__(self, "cp", ConfusionProbMatrix.from_nested(self.cp))
        if int(self.length) != self.length or self.length < 1:
            raise ValueError(f"concept length must be a positive integer, got {self.length}")


@dataclass(frozen=True)
class StreamConfig:
    concepts: tuple[ConceptSpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "concepts", tuple(self.concepts))
        if not self.concepts:
            raise ValueError("a stream needs at least one concept")

    @property
    def length(self) -> int:
        return sum(c.length for c in self.concepts)

    def drift_times(self) -> list[int]:
        """Change points: the last step of every concept but the final one.

        Steps are numbered from 1, so with two concepts of length 5000 the
        change point is 5000 and step 5001 is the first draw of the new concept.
        """
        times, end = [], 0
        for concept in self.concepts[:-1]:
            end += concept.length
            times.append(end)
        return times

    def with_seed(self, seed: int) -> "StreamConfig":
        return StreamConfig(self.concepts, seed)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "concepts": [{"cp": c.cp.as_lists(), "length": c.length} for c in self.concepts],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StreamConfig":
        def parse(v):
            return F(v) if isinstance(v, str) else v

        concepts = [
            ConceptSpec(
                ConfusionProbMatrix.from_nested([[parse(v) for v in row] for row in c["cp"]]),
                c["length"],
            )
            for c in data["concepts"]
        ]
        return cls(tuple(concepts), data.get("seed", 0))


@dataclass
class Stream:
    y: np.ndarray
    yhat: np.ndarray
    drift_times: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.y.tolist(), self.yhat.tolist()))


def _cell_cdf(cp: ConfusionProbMatrix) -> np.ndarray:
    cdf = np.cumsum(cp.cells())
    cdf[-1] = 1.0
    return cdf


def _draw_cells(cp: ConfusionProbMatrix, size: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(size)
    # first cell whose cumulative mass exceeds u; zero-mass cells are never hit
    return np.minimum(np.searchsorted(_cell_cdf(cp), u, side="right"), 3)


def sample_pair(cp: ConfusionProbMatrix, rng: np.random.Generator) -> tuple[int, int]:
    """One ``(y, yhat)`` draw with probability ``cp[yhat][y]``."""
    cell = int(_draw_cells(cp, 1, rng)[0])
    return int(_CELL_Y[cell]), int(_CELL_YHAT[cell])


def generate_stream(config: StreamConfig) -> Stream:
    """Concatenate per-concept samples; time indices are ``1..len``."""
    rng = np.random.default_rng(config.seed)
    cells = np.concatenate([_draw_cells(c.cp, c.length, rng) for c in config.concepts])
    return Stream(_CELL_Y[cells], _CELL_YHAT[cells], config.drift_times())


def _cp(rows) -> ConfusionProbMatrix:
    return ConfusionProbMatrix.from_nested(rows)


def _two_concepts(cp1, cp2, length: int) -> tuple[ConceptSpec, ConceptSpec]:
    half = length // 2
    return ConceptSpec(_cp(cp1), half), ConceptSpec(_cp(cp2), length - half)


# Matrices are [[TN, FN], [FP, TP]]. Exact fractions keep the derived rates exact.
SCENARIO_MATRICES: dict[str, tuple] = {
    "Balance1": (
        [[F(4, 10), F(1, 10)], [F(1, 10), F(4, 10)]],
        [[F(3, 10), F(1, 10)], [F(2, 10), F(4, 10)]],
    ),
    "Balance2": (
        [[F(35, 100), F(5, 100)], [F(15, 100), F(45, 100)]],
        [[F(4, 10), F(1, 10)], [F(1, 10), F(4, 10)]],
    ),
    "Balance3": (
        [[F(3, 10), F(2, 10)], [F(2, 10), F(3, 10)]],
        [[F(4, 10), F(2, 10)], [F(1, 10), F(3, 10)]],
    ),
    "Imbalance1": (
        [[F(1, 3), F(1, 6)], [F(1, 6), F(1, 3)]],
        [[F(13, 15), F(1, 30)], [F(1, 30), F(1, 15)]],
    ),
    "Imbalance2": (
        [[F(65, 100), F(5, 100)], [F(15, 100), F(15, 100)]],
        [[F(75, 100), F(15, 100)], [F(5, 100), F(5, 100)]],
    ),
    # printed with two identical matrices, so it contains no drift at all
    "Imbalance3": (
        [[F(6, 10), F(15, 100)], [F(15, 100), F(1, 10)]],
        [[F(6, 10), F(15, 100)], [F(15, 100), F(1, 10)]],
    ),
    # not from the benchmark: same class ratio, lower tpr, ppv and accuracy
    "Imbalance3-fixed": (
        [[F(6, 10), F(15, 100)], [F(15, 100), F(1, 10)]],
        [[F(55, 100), F(18, 100)], [F(20, 100), F(7, 100)]],
    ),
}

BENCHMARK_SCENARIOS = ("Balance1", "Balance2", "Balance3", "Imbalance1", "Imbalance2", "Imbalance3")
DEFAULT_LENGTH = 10_000


def builtin_scenarios(length: int = DEFAULT_LENGTH, seed: int = 0) -> dict[str, StreamConfig]:
    """Two-concept benchmark streams with the change half-way through."""
    return {
        name: StreamConfig(_two_concepts(cp1, cp2, length), seed)
        for name, (cp1, cp2) in SCENARIO_MATRICES.items()
    }


def scenario(name: str, length: int = DEFAULT_LENGTH, seed: int = 0) -> StreamConfig:
    try:
        cp1, cp2 = SCENARIO_MATRICES[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIO_MATRICES)}") from None
    return StreamConfig(_two_concepts(cp1, cp2, length), seed)


def replicate_seed(seed: int, replicate: int) -> int:
    """Stream seed for one bootstrap replicate, independent of execution order."""
    return int(np.random.SeedSequence(seed, spawn_key=(replicate,)).generate_state(1)[0])


def write_stream(out_dir, config: StreamConfig, stream: Stream | None = None) -> tuple[Path, Path]:
    """Write ``stream.csv`` (``t,y,yhat``) and ``stream.json`` metadata to ``out_dir``."""
    out_dir = Path(out_dir)
    stream = stream if stream is not None else generate_stream(config)
    csv_path, meta_path = out_dir / "stream.csv", out_dir / "stream.json"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y", "yhat"])
            w.writerows(zip(range(1, len(stream) + 1), stream.y.tolist(), stream.yhat.tolist()))
        meta = {"config": config.to_dict(), "seed": config.seed, "drift_times": stream.drift_times}
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write stream files under {out_dir}: {exc}") from exc
    return csv_path, meta_path


def read_stream(csv_path) -> Stream:
    """Read a ``t,y,yhat`` CSV; drift times come from the sidecar JSON if present."""
    csv_path = Path(csv_path)
    ys, yhats = [], []
    with csv_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            ys.append(int(row["y"]))
            yhats.append(int(row["yhat"]))
    meta_path = csv_path.with_suffix(".json")
    drifts = json.loads(meta_path.read_text())["drift_times"] if meta_path.exists() else []
    return Stream(np.array(ys, dtype=np.int8), np.array(yhats, dtype=np.int8), drifts)


def population_rates(cp: ConfusionProbMatrix) -> dict[str, object]:
    out = {str(k): cp.rate(k) for k in RATES}
    out["accuracy"] = cp.accuracy()
    out["positive_fraction"] = cp.positive_fraction()
    return out

