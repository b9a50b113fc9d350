import json
from fractions import Fraction as F

import numpy as np
import pytest

from driftwatch.rates import ConfusionProbMatrix, RateKind
from driftwatch.streams import (
    BENCHMARK_SCENARIOS,
    SCENARIO_MATRICES,
    ConceptSpec,
    StreamConfig,
    builtin_scenarios,
    generate_stream,
    population_rates,
    read_stream,
    replicate_seed,
    sample_pair,
    scenario,
    write_stream,
)


def test_every_matrix_is_a_distribution():
    for cp1, cp2 in SCENARIO_MATRICES.values():
        for rows in (cp1, cp2):
            assert sum(rows[0]) + sum(rows[1]) == 1


def rates(name, which):
    return population_rates(ConfusionProbMatrix.from_nested(SCENARIO_MATRICES[name][which]))


def test_balance1_keeps_tpr_and_drops_accuracy():
    a, b = rates("Balance1", 0), rates("Balance1", 1)
    assert a["tpr"] == b["tpr"] == F(4, 5)
    assert b["accuracy"] < a["accuracy"]
    assert a["positive_fraction"] == b["positive_fraction"] == F(1, 2)


def test_imbalance1_keeps_tpr_and_ppv_while_the_class_ratio_moves():
    a, b = rates("Imbalance1", 0), rates("Imbalance1", 1)
    assert a["tpr"] == b["tpr"] and a["ppv"] == b["ppv"]
    assert b["positive_fraction"] < a["positive_fraction"]


def test_imbalance3_as_printed_has_no_change_and_the_variant_does():
    cp1, cp2 = SCENARIO_MATRICES["Imbalance3"]
    assert cp1 == cp2
    a, b = rates("Imbalance3-fixed", 0), rates("Imbalance3-fixed", 1)
    assert b["accuracy"] < a["accuracy"]
    assert a["positive_fraction"] == b["positive_fraction"]
    assert "Imbalance3-fixed" not in BENCHMARK_SCENARIOS


def test_scenario_shape():
    cfg = scenario("Balance2", length=10_000, seed=4)
    assert cfg.length == 10_000
    assert cfg.drift_times() == [5000]
    assert set(builtin_scenarios()) == set(SCENARIO_MATRICES)
    with pytest.raises(ValueError):
        scenario("Nope")


def test_drift_times_for_three_concepts():
    cp = [[0.25, 0.25], [0.25, 0.25]]
    cfg = StreamConfig((ConceptSpec(cp, 10), ConceptSpec(cp, 5), ConceptSpec(cp, 7)))
    assert cfg.drift_times() == [10, 15]
    assert cfg.length == 22


def test_concept_length_validated():
    with pytest.raises(ValueError):
        ConceptSpec([[0.25, 0.25], [0.25, 0.25]], 0)
    with pytest.raises(ValueError):
        StreamConfig(())


def test_generation_is_seeded():
    cfg = scenario("Balance1", length=2000, seed=9)
    a, b = generate_stream(cfg), generate_stream(cfg)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.yhat, b.yhat)
    c = generate_stream(cfg.with_seed(10))
    assert not np.array_equal(a.y, c.y)


def test_cell_frequencies_match_the_matrix():
    cp = [[F(3, 10), F(1, 10)], [F(2, 10), F(4, 10)]]
    s = generate_stream(StreamConfig((ConceptSpec(cp, 200_000),), seed=1))
    cells = s.yhat.astype(int) * 2 + s.y.astype(int)
    freq = np.bincount(cells, minlength=4) / len(s)
    expected = np.array([0.3, 0.1, 0.2, 0.4])
    # 5 binomial standard errors
    assert np.all(np.abs(freq - expected) < 5 * np.sqrt(expected * (1 - expected) / len(s)))


def test_zero_mass_cells_never_drawn():
    cp = [[0.5, 0.0], [0.0, 0.5]]
    s = generate_stream(StreamConfig((ConceptSpec(cp, 5000),), seed=2))
    assert np.array_equal(s.y, s.yhat)
    rng = np.random.default_rng(0)
    for _ in range(100):
        y, yhat = sample_pair(ConfusionProbMatrix.from_nested(cp), rng)
        assert y == yhat


def test_replicate_seeds_differ_and_are_stable():
    seeds = [replicate_seed(7, r) for r in range(50)]
    assert len(set(seeds)) == 50
    assert seeds == [replicate_seed(7, r) for r in range(50)]


def test_write_and_read_round_trip(tmp_path):
    cfg = scenario("Imbalance2", length=300, seed=5)
    stream = generate_stream(cfg)
    csv_path, meta_path = write_stream(tmp_path, cfg, stream)
    back = read_stream(csv_path)
    assert np.array_equal(back.y, stream.y) and np.array_equal(back.yhat, stream.yhat)
    assert back.drift_times == [150]
    meta = json.loads(meta_path.read_text())
    assert StreamConfig.from_dict(meta["config"]) == cfg
    assert csv_path.read_text().splitlines()[0] == "t,y,yhat"


def test_population_rates_keys():
    r = population_rates(ConfusionProbMatrix.from_nested(SCENARIO_MATRICES["Balance3"][1]))
    assert set(r) == {str(k) for k in RateKind} | {"accuracy", "positive_fraction"}
