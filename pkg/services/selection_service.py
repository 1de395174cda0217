# services/selection_service.py
import hashlib
import itertools
import logging
from collections import Counter
from fractions import Fraction

import numpy as np

from models.configuration import Configuration
from models.selection import (STRATEGIES, ConsensusReport, CssPartition, PhiParams, SelectionOutcome,
                              as_fraction)
from utils.batch import fan_out
from utils.errors import CapExceededError, CurationError, ValidationError
from utils.file_utils import dumps_canonical


class StrategyParams:
    """Knobs shared by every strategy; built from CliConfig by the CLI."""

    def __init__(self, epsilon=Fraction(1, 32), delta=Fraction(1, 32), seed=0, enumeration_cap=16,
                 exhaustive_cap=12, strict_formula=False):
        self.epsilon = as_fraction(epsilon)
        self.delta = as_fraction(delta)
        if self.delta < 0:
            raise ValidationError(f"delta must be >= 0, got {self.delta}")
        self.seed = seed
        self.enumeration_cap = enumeration_cap
        self.exhaustive_cap = exhaustive_cap
        self.strict_formula = strict_formula

    @classmethod
    def from_config(cls, cfg, strict_formula=False):
        return cls(cfg.epsilon, cfg.delta, cfg.seed, cfg.enumeration_cap, cfg.exhaustive_cap, strict_formula)


def normalize_strategy(name):
    strategy = name.replace("-", "_").lower()
    if strategy not in STRATEGIES:
        raise ValidationError(f"Unknown strategy '{name}' (expected one of {', '.join(STRATEGIES)})")
    return strategy


def _best(table, configs):
    # Highest pooled accuracy; ties go to fewest KPs, then lexicographically smallest.
    return min(configs, key=lambda c: (-table.pooled_fraction(c), c.sort_key()))


def _dedupe(configs):
    seen = set()
    unique = []
    for config in configs:
        if config not in seen:
            seen.add(config)
            unique.append(config)
    return unique


def _invocations(store, problem_id):
    return store.invocation_count(problem_id) if store is not None else 0


def _ensure(table, configs, store, provider):
    """Evaluates missing configs through the store, or raises NotEvaluatedError without a provider."""
    missing = table.missing(configs)
    if missing and (store is None or provider is None):
        table.require(configs)
    for config in missing:
        store.fetch_or_request(table, config, provider)


def _outcome(table, strategy, selected, store, provider, before, notes=""):
    if table.has(selected):
        est = table.pooled_accuracy(selected)
    elif store is not None and provider is not None and getattr(provider, "generates", True):
        store.fetch_or_request(table, selected, provider)
        est = table.pooled_accuracy(selected)
    else:
        est = None
        notes = f"{notes}; unevaluated" if notes else "unevaluated"
    return SelectionOutcome(table.problem_id, strategy, selected, est,
                            evaluations_requested=_invocations(store, table.problem_id) - before,
                            notes=notes)


def _degenerate(table, strategy):
    # n = 0: every strategy returns the empty configuration at A_∅.
    return SelectionOutcome(table.problem_id, strategy, Configuration.empty(),
                            table.pooled_accuracy(table.empty), notes="no knowledge points")


def select_none(table):
    return SelectionOutcome(table.problem_id, "none", table.empty, table.pooled_accuracy(table.empty))


def select_all(table):
    if table.n_kps == 0:
        return _degenerate(table, "all")
    return SelectionOutcome(table.problem_id, "all", table.full, table.pooled_accuracy(table.full))


def _problem_rng(seed, problem_id):
    digest = hashlib.blake2b(f"{seed}|{problem_id}".encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def select_random(table, rng_seed=0, store=None, provider=None):
    """Uniform 2- or 3-KP subset (clamped to n), deterministic in (seed, problem id)."""
    if table.n_kps == 0:
        return _degenerate(table, "random")
    before = _invocations(store, table.problem_id)
    rng = _problem_rng(rng_seed, table.problem_id)
    size = min(int(rng.choice([2, 3])), table.n_kps)
    members = rng.choice(table.n_kps, size=size, replace=False)
    selected = Configuration.of(int(i) for i in members)
    return _outcome(table, "random", selected, store, provider, before, notes=f"size={size}")


def select_max_score(table):
    if table.n_kps == 0:
        return _degenerate(table, "max_score")
    candidates = _dedupe(table.loo_configs())
    table.require(candidates)
    winner = _best(table, candidates)
    return SelectionOutcome(table.problem_id, "max_score", winner, table.pooled_accuracy(winner))


def removal_set(table, epsilon):
    """R_ε = {i : A_{-i} >= max(A_K, A_∅) - ε}."""
    epsilon = as_fraction(epsilon)
    threshold = max(table.pooled_fraction(table.full), table.pooled_fraction(table.empty)) - epsilon
    return {i for i in range(table.n_kps) if table.pooled_fraction(table.leave_one_out(i)) >= threshold}


def phi_branch(table, params):
    """(branch number, selected configuration) of the leave-one-out operator."""
    table.require(_dedupe(table.loo_configs()))
    a_empty = table.pooled_fraction(table.empty)
    a_full = table.pooled_fraction(table.full)
    a_max = table.a_max_fraction()
    eps = params.epsilon
    if a_empty >= max(a_full, a_max - eps):
        return 1, table.empty
    if a_full > max(a_empty, a_max - eps):
        return 2, table.full
    threshold = max(a_full, a_empty) - eps
    if params.strict_formula:
        degrading = {i for i in range(table.n_kps) if table.pooled_fraction(table.leave_one_out(i)) < threshold}
        return 3, table.full.without(degrading)
    return 3, table.full.without(removal_set(table, eps))


def select_phi(table, params, store=None, provider=None):
    strategy = "s_loo" if params.epsilon == 0 else "t_loo"
    if table.n_kps == 0:
        return _degenerate(table, strategy)
    before = _invocations(store, table.problem_id)
    branch, selected = phi_branch(table, params)
    notes = f"branch={branch}" + ("; strict_formula" if params.strict_formula else "")
    return _outcome(table, strategy, selected, store, provider, before, notes=notes)


def css_partition(table):
    table.require(_dedupe(table.loo_configs()))
    floor = max(table.pooled_fraction(table.full), table.pooled_fraction(table.empty))
    a_max = table.a_max_fraction()
    loo = {i: table.pooled_fraction(table.leave_one_out(i)) for i in range(table.n_kps)}
    h = {i for i, acc in loo.items() if acc >= floor}
    n_set = {i for i in h if loo[i] >= a_max}
    return CssPartition(h, n_set, h - n_set, a_max)


def css_candidates(table, partition, cap=16):
    if len(partition.c) > cap:
        raise CapExceededError(f"Problem {table.problem_id} |C|", cap, len(partition.c))
    c = sorted(partition.c)
    candidates = []
    for size in range(len(c) + 1):
        for dropped in itertools.combinations(c, size):
            candidates.append(table.full.without(partition.n_set | set(dropped)))
    candidates.extend([table.empty, table.full])
    return _dedupe(candidates)


def select_css(table, store=None, provider=None, cap=16):
    if table.n_kps == 0:
        return _degenerate(table, "css")
    before = _invocations(store, table.problem_id)
    partition = css_partition(table)
    candidates = css_candidates(table, partition, cap)
    _ensure(table, candidates, store, provider)
    winner = _best(table, candidates)
    notes = dumps_canonical({"partition": partition.to_record(), "candidates": len(candidates)})
    return SelectionOutcome(table.problem_id, "css", winner, table.pooled_accuracy(winner),
                            evaluations_requested=_invocations(store, table.problem_id) - before, notes=notes)


def near_optimal_sets(table, candidates, delta):
    """O^(j) for each run: candidates within delta of that run's best per-run accuracy."""
    per_run = []
    for run in range(table.runs):
        accs = {c: Fraction(table.counts(c)[run], table.samples_per_run) for c in candidates}
        best = max(accs.values())
        per_run.append(frozenset(c for c, acc in accs.items() if acc >= best - delta))
    return per_run


def cbrs_consensus(table, delta):
    candidates = _dedupe(table.loo_configs())
    table.require(candidates)
    delta = as_fraction(delta)
    per_run = near_optimal_sets(table, candidates, delta)
    intersection = frozenset.intersection(*per_run)
    if intersection:
        consensus, path = intersection, "intersection"
    else:
        votes = Counter(c for run_set in per_run for c in run_set)
        top = max(votes.values())
        consensus, path = frozenset(c for c, v in votes.items() if v == top), "vote"
    if len(consensus) == 1:
        winner = next(iter(consensus))
    else:
        variances = {c: table.variance_fraction(c) for c in consensus}
        lowest = min(variances.values())
        finalists = [c for c, v in variances.items() if v == lowest]
        path = "variance" if len(finalists) == 1 else "cardinality"
        winner = min(finalists, key=lambda c: c.sort_key())
    return ConsensusReport(per_run, consensus, delta, winner, path)


def select_cbrs(table, delta=Fraction(1, 32)):
    if table.n_kps == 0:
        return _degenerate(table, "cbrs")
    report = cbrs_consensus(table, delta)
    return SelectionOutcome(table.problem_id, "cbrs", report.winner, table.pooled_accuracy(report.winner),
                            notes=dumps_canonical(report.to_record()))


def select_exhaustive(table, store=None, provider=None, cap=12):
    if table.n_kps > cap:
        raise CapExceededError(f"Problem {table.problem_id} KP count", cap, table.n_kps)
    if table.n_kps == 0:
        return _degenerate(table, "exhaustive")
    before = _invocations(store, table.problem_id)
    candidates = [Configuration(combo) for size in range(table.n_kps + 1)
                  for combo in itertools.combinations(range(table.n_kps), size)]
    _ensure(table, candidates, store, provider)
    winner = _best(table, candidates)
    return SelectionOutcome(table.problem_id, "exhaustive", winner, table.pooled_accuracy(winner),
                            evaluations_requested=_invocations(store, table.problem_id) - before)


def run_strategy(strategy, table, params, store=None, provider=None):
    strategy = normalize_strategy(strategy)
    if strategy == "none":
        return select_none(table)
    if strategy == "all":
        return select_all(table)
    if strategy == "random":
        return select_random(table, params.seed, store, provider)
    if strategy == "max_score":
        return select_max_score(table)
    if strategy == "s_loo":
        return select_phi(table, PhiParams(0, params.strict_formula), store, provider)
    if strategy == "t_loo":
        return select_phi(table, PhiParams(params.epsilon, params.strict_formula), store, provider)
    if strategy == "css":
        return select_css(table, store, provider, params.enumeration_cap)
    if strategy == "cbrs":
        return select_cbrs(table, params.delta)
    return select_exhaustive(table, store, provider, params.exhaustive_cap)


class BatchResult:
    def __init__(self, strategy, outcomes, failures):
        self.strategy = strategy
        self.outcomes = outcomes
        self.failures = failures

    @property
    def summary(self):
        with_accuracy = [o.est_accuracy for o in self.outcomes if o.est_accuracy is not None]
        count = len(self.outcomes)
        return {
            "kind": "summary",
            "strategy": self.strategy,
            "problems": count,
            "avg_kp": round(sum(len(o.selected) for o in self.outcomes) / count, 6) if count else None,
            "avg_accuracy": round(sum(with_accuracy) / len(with_accuracy), 6) if with_accuracy else None,
            "evaluations": sum(o.evaluations_requested for o in self.outcomes),
            "failures": len(self.failures),
        }


def batch_select(store, strategy, params=None, provider=None, parallelism=4, problem_ids=None):
    """Runs one strategy over every problem in the store; never aborts on a single problem."""
    strategy = normalize_strategy(strategy)
    params = params or StrategyParams()
    problem_ids = sorted(problem_ids) if problem_ids is not None else store.problem_ids()
    results, failures = fan_out(
        problem_ids, lambda pid: run_strategy(strategy, store.table_for(pid), params, store, provider), parallelism
    )
    outcomes = [results[pid] for pid in problem_ids if pid in results]
    result = BatchResult(strategy, outcomes, failures)
    logging.info(f"Strategy {strategy}: {result.summary}")
    return result


def fill_loo_cells(store, provider, parallelism=4, problem_ids=None):
    """Evaluates any missing {∅, K, K∖{i}} cells; returns (evaluated count, failures)."""
    problem_ids = sorted(problem_ids) if problem_ids is not None else store.problem_ids()

    def work(problem_id):
        table = store.table_for(problem_id)
        before = store.invocation_count(problem_id)
        for config in _dedupe(table.loo_configs()):
            store.fetch_or_request(table, config, provider)
        return store.invocation_count(problem_id) - before

    results, failures = fan_out(problem_ids, work, parallelism)
    return sum(results.values()), failures


def compare_strategies(store, strategies, params=None, provider=None, worlds=None, parallelism=4):
    """One summary row per strategy; adds mean true probability when synthetic worlds are known."""
    rows = []
    for strategy in strategies:
        result = batch_select(store, strategy, params, provider, parallelism)
        row = result.summary
        if worlds:
            truths = [worlds[o.problem_id].probability(o.selected) for o in result.outcomes if o.problem_id in worlds]
            row["mean_true_probability"] = round(sum(truths) / len(truths), 6) if truths else None
        rows.append((row, result))
    return rows


def cbrs_delta_sweep(store, deltas=(Fraction(0), Fraction(1, 32), Fraction(2, 32)), problem_ids=None):
    """CBRS compactness/accuracy as δ varies, with the fraction of problems whose δ-intersection is non-empty."""
    problem_ids = sorted(problem_ids) if problem_ids is not None else store.problem_ids()
    rows = []
    for delta in deltas:
        delta = as_fraction(delta)
        sizes, accuracies, overlaps, failures = [], [], 0, 0
        for problem_id in problem_ids:
            table = store.table_for(problem_id)
            try:
                if table.n_kps == 0:
                    outcome = _degenerate(table, "cbrs")
                    overlaps += 1
                else:
                    report = cbrs_consensus(table, delta)
                    outcome = select_cbrs(table, delta)
                    overlaps += bool(frozenset.intersection(*report.per_run_near_optimal))
            except CurationError as e:
                logging.warning(f"Problem {problem_id}: {e}")
                failures += 1
                continue
            sizes.append(len(outcome.selected))
            accuracies.append(outcome.est_accuracy)
        count = len(sizes)
        rows.append({
            "kind": "delta_sweep",
            "delta": str(delta),
            "problems": count,
            "avg_kp": round(sum(sizes) / count, 6) if count else None,
            "avg_accuracy": round(sum(accuracies) / count, 6) if count else None,
            "consensus_overlap": round(overlaps / count, 6) if count else None,
            "failures": failures,
        })
    return rows
