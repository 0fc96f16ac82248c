import math

import numpy as np
import pytest

from tailcombo.data import Sample, parse_terms
from tailcombo.errors import SearchError
from tailcombo.optimize import FitSettings, OptimizerConfig
from tailcombo.selection import (
    CoolingSchedule,
    CVScorer,
    ModelSpace,
    ModelString,
    accept_move,
    anneal,
    cv_score,
    enumerate_models,
    exhaustive_search,
    fold_partition,
    neighbor,
    run_chains,
    temperature,
)

FAST = FitSettings(optimizer=OptimizerConfig(population=12, generations=8, restarts=1))


@pytest.fixture(scope="module")
def sample():
    rng = np.random.default_rng(7)
    n = 400
    X = rng.normal(size=(n, 5))
    y = X[:, 0] - 0.5 * X[:, 1] + 0.3 * rng.normal(size=n)
    return Sample(y, X, [f"V{i}" for i in range(1, 6)])


@pytest.fixture(scope="module")
def space(sample):
    return ModelSpace.from_sample(sample, parse_terms("V1,V2,V3,V4,V5"), max_size=4)


def test_first_temperature_is_temp0():
    assert temperature(CoolingSchedule(0.37, 10), 1) == pytest.approx(0.37)


def test_temperature_schedule_blocks():
    sch = CoolingSchedule(0.01, 5)
    assert temperature(sch, 5) == temperature(sch, 1)
    assert temperature(sch, 6) == pytest.approx(0.01 / math.log(5 + math.e))
    assert temperature(sch, 11) < temperature(sch, 6)


def test_ties_always_accepted():
    assert accept_move(0.0, 1e-9, 0.999999)
    assert accept_move(-0.1, 1e-9, 0.999999)


def test_acceptance_law():
    rng = np.random.default_rng(11)
    delta, temp, n = 0.004, 0.01, 100_000
    p = math.exp(-delta / temp)
    rate = np.mean([accept_move(delta, temp, u) for u in rng.random(n)])
    assert abs(rate - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_model_string_roundtrip():
    m = ModelString.from_string("01101", forced={1})
    assert str(m) == "01101" and m.selected == (1, 2, 4) and m.size == 3
    assert str(m.flip(0)) == "11101"
    with pytest.raises(ValueError):
        ModelString((0, 2))


def test_neighbor_respects_forced_and_constraints(space):
    rng = np.random.default_rng(0)
    m = ModelString.from_indices(space.r, [0, 2], forced=[0])
    for _ in range(200):
        m = neighbor(m, space, rng)
        assert m.bits[0] == 1 and space.is_valid(m)


def test_neighbor_all_forced(space):
    m = ModelString.from_indices(space.r, range(5), forced=range(5))
    with pytest.raises(SearchError):
        neighbor(m, space, np.random.default_rng(0))


def test_space_correlation_cap():
    rng = np.random.default_rng(3)
    x = rng.normal(size=300)
    s = Sample(rng.normal(size=300), np.column_stack([x, x + 0.01 * rng.normal(size=300), rng.normal(size=300)]),
               ["A", "B", "C"])
    sp = ModelSpace.from_sample(s, parse_terms("A,B,C"))
    assert not sp.is_valid(ModelString((1, 1, 0)))
    assert "too correlated" in sp.violation(ModelString((1, 1, 1)))
    assert sp.is_valid(ModelString((1, 0, 1)))


def test_fold_partition_deterministic():
    a, b = fold_partition(103, 10, 5), fold_partition(103, 10, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a).tolist()) == list(range(103))
    assert {len(p) for p in a} <= {10, 11}


def test_cv_deterministic(sample):
    terms = parse_terms("V1,V2")
    a = cv_score(sample, terms, FAST, folds=5, seed=3)
    b = cv_score(sample, terms, FAST, folds=5, seed=3)
    assert a.score == b.score and a.fold_scores == b.fold_scores
    assert 0 <= a.score <= 1 and not a.warning


def test_cv_workers_identical(sample):
    terms = parse_terms("V1,V2")
    a = cv_score(sample, terms, FAST, folds=4, seed=1, workers=1)
    b = cv_score(sample, terms, FAST, folds=4, seed=1, workers=2)
    assert a == b


def test_cv_prefers_signal(sample):
    good = cv_score(sample, parse_terms("V1,V2"), FAST, folds=5, seed=0).score
    bad = cv_score(sample, parse_terms("V3,V4"), FAST, folds=5, seed=0).score
    assert good < bad


def test_memo_returns_cached_value(sample, space):
    scorer = CVScorer(sample, space, FAST, folds=4, seed=0)
    m = ModelString.from_indices(space.r, [0, 1])
    first = scorer(m)
    second = scorer(ModelString.from_indices(space.r, [0, 1]))
    assert first == second and scorer.evaluations == 1


def test_anneal_trace_valid_and_deterministic(sample, space):
    init = ModelString.from_indices(space.r, [2])
    runs = []
    for _ in range(2):
        scorer = CVScorer(sample, space, FAST, folds=4, seed=0)
        runs.append(anneal(scorer, init, CoolingSchedule(0.01, 3), budget=12, seed=5))
    assert runs[0].chain_trace == runs[1].chain_trace
    for e in runs[0].chain_trace:
        assert space.is_valid(ModelString.from_string(e["bits"]))
    best = runs[0].best_list
    assert [cv for _, cv in best] == sorted(cv for _, cv in best)


def test_zero_budget_returns_init(sample, space):
    init = ModelString.from_indices(space.r, [0])
    rec = anneal(CVScorer(sample, space, FAST, folds=4), init, budget=0)
    assert list(rec.visited) == [str(init)]


def test_resume_matches_uninterrupted(sample, space, tmp_path):
    inits = [ModelString.from_indices(space.r, [2]), ModelString.from_indices(space.r, [3, 4])]
    kw = dict(settings=FAST, schedule=CoolingSchedule(0.01, 3), seed=2, folds=4)
    full = run_chains(sample, space, inits, budget=8, checkpoint_path=tmp_path / "a.jsonl", **kw)
    run_chains(sample, space, inits, budget=3, checkpoint_path=tmp_path / "b.jsonl", **kw)
    resumed = run_chains(sample, space, inits, budget=8, checkpoint_path=tmp_path / "b.jsonl",
                         resume=True, **kw)
    assert resumed.visited == full.visited
    assert resumed.chain_trace == full.chain_trace


def test_chains_workers_identical(sample, space):
    inits = [ModelString.from_indices(space.r, [2]), ModelString.from_indices(space.r, [0, 4])]
    kw = dict(settings=FAST, schedule=CoolingSchedule(0.01, 3), budget=5, seed=8, folds=4)
    a = run_chains(sample, space, inits, workers=1, **kw)
    b = run_chains(sample, space, inits, workers=2, **kw)
    assert a.visited == b.visited and a.chain_trace == b.chain_trace


def test_enumeration_counts(sample):
    sp3 = ModelSpace.from_sample(sample, parse_terms("V1,V2,V3"))
    assert len(enumerate_models(sp3, 2)) == 6
    rng = np.random.default_rng(1)
    X = rng.normal(size=(500, 10))
    big = Sample(rng.normal(size=500), X, [f"C{i}" for i in range(10)])
    sp10 = ModelSpace.from_sample(big, parse_terms(",".join(big.names)))
    assert len(enumerate_models(sp10, 4, forced=range(4))) == 57


def test_enumeration_cap(sample):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 25))
    big = Sample(rng.normal(size=300), X, [f"C{i}" for i in range(25)])
    sp = ModelSpace.from_sample(big, parse_terms(",".join(big.names)))
    with pytest.raises(SearchError, match="cap"):
        enumerate_models(sp, 5, cap=1000)


def test_exhaustive_ranked(sample):
    sp = ModelSpace.from_sample(sample, parse_terms("V1,V2,V3"))
    ranked = exhaustive_search(sample, sp, 2, settings=FAST, folds=4)
    assert len(ranked) == 6
    cvs = [cv for _, cv in ranked]
    assert cvs == sorted(cvs)
    assert ranked[0][0].bits[0] == 1
