import json
import random
from fractions import Fraction

import pytest

from conftest import DictProvider, loo_values, make_table, store_with
from models.configuration import Configuration
from models.selection import PhiParams
from models.world import SyntheticWorld
from services.rollout_store import RolloutStore
from services.selection_service import (StrategyParams, batch_select, cbrs_consensus, cbrs_delta_sweep,
                                        compare_strategies, css_candidates, css_partition, fill_loo_cells,
                                        normalize_strategy, phi_branch, removal_set, run_strategy, select_all,
                                        select_cbrs, select_css, select_exhaustive, select_max_score,
                                        select_none, select_phi, select_random)
from services.synth_service import SyntheticProvider, generate_benchmark, ground_truth_best
from utils.errors import CapExceededError, NotEvaluatedError, ValidationError


def cfg(*indices):
    return Configuration.of(indices)


# --- baselines ---

def test_select_none():
    outcome = select_none(make_table(2, {(): 0.5}))
    assert outcome.selected == Configuration.empty()
    assert outcome.est_accuracy == 0.5
    with pytest.raises(NotEvaluatedError):
        select_none(make_table(2, {(0, 1): 0.5}))


def test_select_all():
    assert select_all(make_table(3, {(0, 1, 2): 0.2})).selected == cfg(0, 1, 2)
    degenerate = select_all(make_table(0, {(): 0.4}))
    assert degenerate.selected == Configuration.empty()
    assert degenerate.est_accuracy == 0.4


def test_select_all_reports_fixture_accuracy():
    table = make_table(4, {(0, 1, 2, 3): [2693]}, samples_per_run=10000)
    assert select_all(table).est_accuracy == pytest.approx(0.2693)


def test_select_random_clamps_to_n():
    outcome = select_random(make_table(1, {(0,): 0.3}), rng_seed=5)
    assert outcome.selected == cfg(0)
    assert outcome.est_accuracy == 0.3
    assert outcome.notes == "size=1"


def test_select_random_is_reproducible():
    table = make_table(6, {(): 0.1})
    first = select_random(table, rng_seed=7)
    second = select_random(table, rng_seed=7)
    assert first.selected == second.selected
    assert len(first.selected) in (2, 3)
    # No cell and nothing to evaluate with.
    assert first.est_accuracy is None
    assert "unevaluated" in first.notes


def test_select_random_mean_cardinality():
    table = make_table(6, {(): 0.1})
    sizes = [len(select_random(table, rng_seed=seed).selected) for seed in range(10000)]
    assert sum(sizes) / len(sizes) == pytest.approx(2.5, abs=0.05)


def test_select_random_evaluates_through_provider():
    table = make_table(4, {(): 0.1}, runs=1, samples_per_run=100)
    chosen = select_random(table, rng_seed=1).selected
    provider = DictProvider({("p1", chosen.key): [42]})
    store = store_with(table)
    outcome = select_random(table, rng_seed=1, store=store, provider=provider)
    assert outcome.est_accuracy == 0.42
    assert outcome.evaluations_requested == 1


# --- Max-Score ---

def test_max_score_picks_argmax():
    table = make_table(2, loo_values(0.40, 0.50, [0.55, 0.45]))
    outcome = select_max_score(table)
    assert outcome.selected == cfg(1)
    assert outcome.est_accuracy == 0.55


def test_max_score_ties_go_to_fewest_kps():
    table = make_table(2, loo_values(0.5, 0.5, [0.5, 0.5]))
    assert select_max_score(table).selected == Configuration.empty()


def test_max_score_degenerate_and_missing():
    assert select_max_score(make_table(0, {(): 0.7})).selected == Configuration.empty()
    with pytest.raises(NotEvaluatedError) as info:
        select_max_score(make_table(2, {(): 0.1, (0, 1): 0.2}))
    assert set(info.value.missing) == {cfg(0), cfg(1)}


# --- Φ_ε (S-LOO / T-LOO) ---

def test_phi_branch_one_returns_empty():
    table = make_table(2, loo_values(0.9, 0.5, [0.8, 0.7]))
    outcome = select_phi(table, PhiParams(0))
    assert outcome.selected == Configuration.empty()
    assert outcome.strategy == "s_loo"
    assert outcome.notes == "branch=1"


def test_phi_branch_two_returns_full():
    table = make_table(2, loo_values(0.2, 0.8, [0.7, 0.75]))
    assert select_phi(table, PhiParams(0)).selected == cfg(0, 1)


def test_phi_branch_three_removes_set():
    table = make_table(2, loo_values(0.4, 0.6, [0.7, 0.55]))
    outcome = select_phi(table, PhiParams(0))
    assert outcome.selected == cfg(1)
    assert outcome.est_accuracy == 0.7
    assert outcome.notes == "branch=3"


def test_phi_tolerance_widens_removal():
    table = make_table(2, loo_values(0.4, 0.6, [0.7, 0.58]))
    assert removal_set(table, Fraction(1, 32)) == {0, 1}
    outcome = select_phi(table, PhiParams(Fraction(1, 32)))
    assert outcome.selected == Configuration.empty()
    assert outcome.strategy == "t_loo"
    assert outcome.est_accuracy == 0.4


def test_phi_strict_formula_keeps_only_non_degrading():
    table = make_table(2, loo_values(0.4, 0.6, [0.7, 0.55]))
    branch, selected = phi_branch(table, PhiParams(0, strict_formula=True))
    assert branch == 3
    assert selected == cfg(0)
    assert "strict_formula" in select_phi(table, PhiParams(0, strict_formula=True)).notes


def test_phi_unevaluated_branch_three_selection():
    values = loo_values(0.2, 0.5, [0.6, 0.6, 0.1])
    table = make_table(3, values)
    outcome = select_phi(table, PhiParams(0))
    assert outcome.selected == cfg(2)
    assert outcome.est_accuracy is None
    provider = DictProvider({("p1", "2"): [33]})
    outcome = select_phi(table, PhiParams(0), store_with(table), provider)
    assert outcome.est_accuracy == 0.33
    assert outcome.evaluations_requested == 1


def _random_loo_table(rng, n, runs=1, samples_per_run=32):
    values = loo_values(*(([rng.randint(0, samples_per_run)] * runs) for _ in range(2)),
                        [[rng.randint(0, samples_per_run)] * runs for _ in range(n)])
    return make_table(n, values, runs=runs, samples_per_run=samples_per_run)


def test_removal_set_is_monotone_in_epsilon():
    rng = random.Random(20240601)
    epsilons = [Fraction(0), Fraction(1, 64), Fraction(1, 32), Fraction(2, 32), Fraction(1, 8)]
    for _ in range(10000):
        table = _random_loo_table(rng, rng.randint(1, 6))
        e1, e2 = sorted(rng.sample(epsilons, 2))
        r1, r2 = removal_set(table, e1), removal_set(table, e2)
        assert r1 <= r2
        b1, s1 = phi_branch(table, PhiParams(e1))
        b2, s2 = phi_branch(table, PhiParams(e2))
        if b1 == b2 == 3:
            assert len(s2) <= len(s1)


# --- CSS ---

def test_css_enumerates_and_asks_provider_for_new_candidates():
    table = make_table(3, {(): 0.30, (0, 1, 2): 0.50, (1, 2): 0.55, (0, 2): 0.52, (0, 1): 0.45})
    provider = DictProvider({("p1", "2"): [60]})
    outcome = select_css(table, store_with(table), provider)
    assert provider.calls == [("p1", cfg(2))]
    assert outcome.selected == cfg(2)
    assert outcome.est_accuracy == 0.6
    assert outcome.evaluations_requested == 1
    notes = json.loads(outcome.notes)
    assert notes["partition"] == {"h": [0, 1], "n": [0], "c": [1], "a_max": 0.55}
    assert notes["candidates"] == 4


def test_css_with_empty_h_compares_empty_and_full():
    table = make_table(2, loo_values(0.5, 0.6, [0.3, 0.4]))
    partition = css_partition(table)
    assert partition.h == frozenset()
    assert set(css_candidates(table, partition)) == {Configuration.empty(), cfg(0, 1)}
    assert select_css(table).selected == cfg(0, 1)


def test_css_degenerate():
    assert select_css(make_table(0, {(): 0.2})).selected == Configuration.empty()


def test_css_refuses_oversized_enumeration():
    a_minus = [0.9] + [0.5] * 17
    table = make_table(18, loo_values(0.1, 0.2, a_minus))
    with pytest.raises(CapExceededError) as info:
        select_css(table, cap=16)
    assert info.value.actual == 17


def test_css_without_provider_reports_missing_candidates():
    table = make_table(3, {(): 0.30, (0, 1, 2): 0.50, (1, 2): 0.55, (0, 2): 0.52, (0, 1): 0.45})
    with pytest.raises(NotEvaluatedError) as info:
        select_css(table)
    assert info.value.missing == [cfg(2)]


# --- CBRS ---

def eight_run_table(n, counts):
    return make_table(n, counts, runs=8, samples_per_run=10)


def test_cbrs_single_intersection_member_wins():
    table = eight_run_table(2, {(): [2] * 8, (0, 1): [8] * 8, (1,): [5] * 8, (0,): [5] * 8})
    report = cbrs_consensus(table, Fraction(1, 32))
    assert report.consensus == frozenset({cfg(0, 1)})
    assert report.tie_break_path == "intersection"
    assert select_cbrs(table, Fraction(1, 32)).selected == cfg(0, 1)


def test_cbrs_variance_breaks_intersection_ties():
    table = eight_run_table(1, {(): [5] * 8, (0,): [4, 6, 4, 6, 4, 6, 4, 6]})
    report = cbrs_consensus(table, Fraction(1, 10))
    assert report.consensus == frozenset({Configuration.empty(), cfg(0)})
    assert table.variance_fraction(cfg(0)) == Fraction(1, 100)
    assert report.winner == Configuration.empty()
    assert report.tie_break_path == "variance"


def test_cbrs_votes_when_intersection_is_empty():
    table = eight_run_table(2, {
        (0, 1): [9, 9, 9, 9, 9, 0, 0, 0],
        (): [0, 0, 0, 0, 0, 9, 9, 9],
        (0,): [0] * 8,
        (1,): [0] * 8,
    })
    report = cbrs_consensus(table, 0)
    assert report.winner == cfg(0, 1)
    assert report.tie_break_path == "vote"
    outcome = select_cbrs(table, 0)
    assert json.loads(outcome.notes)["tie_break_path"] == "vote"


def test_cbrs_equal_variance_falls_back_to_cardinality():
    table = eight_run_table(1, {(): [5] * 8, (0,): [5] * 8})
    report = cbrs_consensus(table, 0)
    assert report.winner == Configuration.empty()
    assert report.tie_break_path == "cardinality"


def test_cbrs_returns_singleton_intersection_on_random_tables():
    rng = random.Random(77)
    deltas = [Fraction(0), Fraction(1, 32), Fraction(2, 32)]
    for _ in range(10000):
        n = rng.randint(1, 4)
        values = loo_values(*([rng.randint(0, 32) for _ in range(8)] for _ in range(2)),
                            [[rng.randint(0, 32) for _ in range(8)] for _ in range(n)])
        table = make_table(n, values, runs=8, samples_per_run=32)
        delta = rng.choice(deltas)
        candidates = set(table.loo_configs())
        intersection = set(candidates)
        for run in range(8):
            best = max(table.counts(c)[run] for c in candidates)
            intersection &= {c for c in candidates if Fraction(table.counts(c)[run], 32) >= Fraction(best, 32) - delta}
        if len(intersection) == 1:
            assert select_cbrs(table, delta).selected == intersection.pop()


# --- exhaustive ---

def test_exhaustive_two_candidates():
    table = make_table(1, {(): 0.3, (0,): 0.7})
    assert select_exhaustive(table).selected == cfg(0)


def test_exhaustive_cap():
    with pytest.raises(CapExceededError):
        select_exhaustive(make_table(13, {(): 0.1}), cap=12)


def test_exhaustive_matches_ground_truth_on_small_world():
    world = SyntheticWorld("p1", 3, 0.0, [1.0, 1.0, 0.5], {(0, 1): -3.0})
    store = RolloutStore(None, runs=1, samples_per_run=10 ** 9)
    provider = SyntheticProvider({"p1": world}, exact=True)
    outcome = select_exhaustive(store.table_for("p1", n_kps=3), store, provider)
    assert outcome.selected == ground_truth_best(world) == cfg(0, 2)
    assert outcome.evaluations_requested == 8


# --- batch runs ---

def fixture_store(kp_counts):
    tables = []
    for index, n in enumerate(kp_counts):
        values = loo_values(0.2, 0.4, [0.3] * n) if n else {(): 0.2}
        tables.append(make_table(n, values, problem_id=f"p{index}"))
    return store_with(*tables)


def test_batch_none_has_zero_average_kp():
    result = batch_select(fixture_store([5, 6, 7]), "none")
    assert result.summary["avg_kp"] == 0.0
    assert result.summary["problems"] == 3


def test_batch_all_average_kp():
    result = batch_select(fixture_store([5, 6, 7]), "all")
    assert result.summary["avg_kp"] == 6.0
    assert result.summary["avg_accuracy"] == pytest.approx(0.4)


def test_batch_collects_failures_without_aborting():
    store = fixture_store([2, 3])
    store.tables["p9"] = make_table(2, {(): 0.1}, problem_id="p9")
    result = batch_select(store, "max-score", parallelism=2)
    assert [o.problem_id for o in result.outcomes] == ["p0", "p1"]
    assert result.failures == [{"problem_id": "p9", "error_type": "NotEvaluatedError",
                                "message": result.failures[0]["message"]}]
    assert result.summary["failures"] == 1


def test_batch_output_is_independent_of_parallelism():
    store = fixture_store([2, 3, 4, 5])
    serial = [o.to_record() for o in batch_select(store, "cbrs", parallelism=1).outcomes]
    parallel = [o.to_record() for o in batch_select(store, "cbrs", parallelism=4).outcomes]
    assert serial == parallel


def test_strategy_names_accept_dashes():
    assert normalize_strategy("max-score") == "max_score"
    assert normalize_strategy("t-loo") == "t_loo"
    with pytest.raises(ValidationError):
        normalize_strategy("greedy")
    table = make_table(2, loo_values(0.4, 0.6, [0.7, 0.58]))
    assert run_strategy("t-loo", table, StrategyParams()).selected == Configuration.empty()
    assert run_strategy("s-loo", table, StrategyParams()).selected == cfg(1)


def test_cbrs_delta_sweep_rows():
    store = store_with(eight_run_table(1, {(): [5] * 8, (0,): [4, 6, 4, 6, 4, 6, 4, 6]}))
    rows = cbrs_delta_sweep(store, [0, Fraction(1, 10)])
    assert [row["delta"] for row in rows] == ["0", "1/10"]
    # δ = 0 leaves no candidate near-optimal in every run.
    assert rows[0]["consensus_overlap"] == 0.0
    assert rows[1]["consensus_overlap"] == 1.0
    assert rows[1]["avg_kp"] == 0.0


# --- synthetic oracle checks ---

def exact_stores(seed_base=100):
    """50 worlds at each of n = 2, 4, 6, 8, evaluated exhaustively in exact-probability mode."""
    for offset, n in enumerate((2, 4, 6, 8)):
        benchmark = generate_benchmark(50, n, paradox_fraction=0.5, zero_fraction=0.3, seed=seed_base + offset)
        store = RolloutStore(None, runs=1, samples_per_run=10 ** 9)
        provider = SyntheticProvider(benchmark.worlds, exact=True)
        yield benchmark.worlds, store, provider


def test_exhaustive_equals_brute_force_on_synthetic_worlds():
    checked = 0
    for worlds, store, provider in exact_stores():
        for problem_id, world in worlds.items():
            outcome = select_exhaustive(store.table_for(problem_id, n_kps=world.n_kps), store, provider)
            assert outcome.selected == ground_truth_best(world), problem_id
            checked += 1
    assert checked == 200


def test_css_dominates_its_candidates_on_synthetic_worlds():
    for worlds, store, provider in exact_stores(seed_base=300):
        for problem_id, world in worlds.items():
            table = store.table_for(problem_id, n_kps=world.n_kps)
            best = select_exhaustive(table, store, provider).selected
            outcome = select_css(table, store, provider)
            winner = table.pooled_fraction(outcome.selected)
            candidates = css_candidates(table, css_partition(table))
            assert all(winner >= table.pooled_fraction(c) for c in candidates)
            assert winner >= table.pooled_fraction(table.empty)
            assert winner >= table.pooled_fraction(table.full)
            if best in candidates:
                assert winner == table.pooled_fraction(best)


def test_all_kp_positive_worlds_select_full_set():
    world = SyntheticWorld("p1", 4, -1.0, [0.5, 0.7, 0.9, 0.3])
    store = RolloutStore(None, runs=1, samples_per_run=10 ** 9)
    provider = SyntheticProvider({"p1": world}, exact=True)
    table = store.table_for("p1", n_kps=4)
    fill_loo_cells(store, provider)
    assert select_css(table, store, provider).selected == cfg(0, 1, 2, 3)
    assert select_exhaustive(table, store, provider).selected == cfg(0, 1, 2, 3)


def _mean_true(rows, name):
    return next(row for row, result in rows if result.strategy == name)["mean_true_probability"]


def _avg_kp(rows, name):
    return next(row for row, result in rows if result.strategy == name)["avg_kp"]


def paradox_regime_rows(runs, samples_per_run, **provider_options):
    """CSS, CBRS, Max-Score and All on 500 worlds with 30% paired KPs and 30% zero-effect KPs."""
    benchmark = generate_benchmark(500, 6, paradox_fraction=0.3, zero_fraction=0.3, seed=2024)
    store = RolloutStore(None, runs=runs, samples_per_run=samples_per_run)
    provider = SyntheticProvider(benchmark.worlds, **provider_options)
    for problem_id, world in benchmark.worlds.items():
        store.table_for(problem_id, n_kps=world.n_kps)
    _, failures = fill_loo_cells(store, provider)
    assert not failures
    rows = compare_strategies(store, ["all", "max_score", "cbrs", "css"], StrategyParams(), provider,
                              benchmark.worlds)
    assert all(not result.failures for _, result in rows)
    assert _avg_kp(rows, "all") == 6
    return rows


def test_strategy_ordering_in_paradox_regime_exact():
    rows = paradox_regime_rows(1, 10 ** 6, exact=True)
    css, cbrs = _mean_true(rows, "css"), _mean_true(rows, "cbrs")
    max_score, all_kp = _mean_true(rows, "max_score"), _mean_true(rows, "all")
    # Output rows carry six decimals.
    assert css >= max_score - 1e-5
    assert css >= cbrs - 1e-5
    assert max_score >= all_kp - 1e-5
    assert _avg_kp(rows, "css") <= 0.75 * _avg_kp(rows, "all")


def test_strategy_ordering_in_paradox_regime_paired_runs():
    rows = paradox_regime_rows(8, 32, paired=True)
    css, cbrs = _mean_true(rows, "css"), _mean_true(rows, "cbrs")
    max_score, all_kp = _mean_true(rows, "max_score"), _mean_true(rows, "all")
    assert css >= cbrs - 0.002
    assert cbrs >= max_score - 0.002
    assert max_score >= all_kp - 0.002
    assert _avg_kp(rows, "css") <= 0.75 * _avg_kp(rows, "all")


def test_selectors_beat_all_kps_with_independent_streams():
    rows = paradox_regime_rows(8, 32)
    all_kp = _mean_true(rows, "all")
    for name in ("max_score", "cbrs", "css"):
        assert _mean_true(rows, name) >= all_kp - 0.002
    assert _avg_kp(rows, "css") < _avg_kp(rows, "all")
