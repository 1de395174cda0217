# services/interaction_service.py
import bisect
import hashlib
import itertools
import logging
from fractions import Fraction

import numpy as np

from models.analysis import BucketReport, ParadoxReport
from services.prompt_service import build_prefix_hint, emit_prompt
from utils.errors import CurationError, ValidationError, failure_record
from utils.validation import validate_bucket_edges

QUANTILES = (5, 25, 50, 75, 95)


def positive_contribution_set(table):
    """K⁺ = {i : A_{-i} >= max(A_K, A_∅)}."""
    table.require(table.loo_configs())
    floor = max(table.pooled_fraction(table.full), table.pooled_fraction(table.empty))
    return {i for i in range(table.n_kps) if table.pooled_fraction(table.leave_one_out(i)) >= floor}


def _subsets(problem_id, members, m, cap, seed):
    subsets = list(itertools.combinations(sorted(members), m))
    if len(subsets) <= cap:
        return subsets, False
    digest = hashlib.blake2b(f"{seed}|{problem_id}|{m}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    chosen = sorted(int(i) for i in rng.choice(len(subsets), size=cap, replace=False))
    return [subsets[i] for i in chosen], True


def paradox_stats(store, m=2, provider=None, subset_cap=64, seed=0, problem_ids=None):
    """Pools every (problem, S) pair with S ⊆ K⁺, |S| = m; a pair counts when A(K∖S) < mean A_{-i}."""
    if m < 2:
        raise ValidationError(f"m must be >= 2, got {m}")
    problem_ids = sorted(problem_ids) if problem_ids is not None else store.problem_ids()
    examined = counted = 0
    gap_sum = Fraction(0)
    details, rates, too_small, sampled, failures = [], {}, [], [], []
    for problem_id in problem_ids:
        table = store.table_for(problem_id)
        try:
            k_plus = positive_contribution_set(table)
        except CurationError as e:
            logging.warning(f"Problem {problem_id} skipped in paradox statistics: {e}")
            failures.append(failure_record(problem_id, e))
            continue
        if len(k_plus) < m:
            too_small.append(problem_id)
            continue
        subsets, was_sampled = _subsets(problem_id, k_plus, m, subset_cap, seed)
        if was_sampled:
            sampled.append(problem_id)
        problem_details, problem_gap = [], Fraction(0)
        try:
            for subset in subsets:
                joint = table.full.without(subset)
                if not table.has(joint):
                    if provider is None:
                        table.require([joint])
                    store.fetch_or_request(table, joint, provider)
                a_joint = table.pooled_fraction(joint)
                a_single = sum((table.pooled_fraction(table.leave_one_out(i)) for i in subset), Fraction(0)) / m
                hit = a_joint < a_single
                if hit:
                    problem_gap += a_single - a_joint
                problem_details.append((problem_id, subset, float(a_joint), float(a_single), hit))
        except CurationError as e:
            logging.warning(f"Problem {problem_id} skipped in paradox statistics: {e}")
            failures.append(failure_record(problem_id, e))
            continue
        problem_counted = sum(1 for detail in problem_details if detail[-1])
        details.extend(problem_details)
        gap_sum += problem_gap
        examined += len(subsets)
        counted += problem_counted
        rates[problem_id] = problem_counted / len(subsets)
    report = ParadoxReport(m, examined, counted, gap_sum, details, rates, too_small, sampled, failures)
    logging.info(f"Paradox statistics m={m}: p_m={report.p_m} over {examined} pairs, delta_m={report.delta_m}")
    return report


def bucket_index(value, edges):
    # Right-open intervals; the last one also holds its upper edge.
    if value == edges[-1]:
        return len(edges) - 2
    return bisect.bisect_right(edges, value) - 1


def difficulty_buckets(store, hinted_selections, edges=None):
    """Buckets problems by A_∅; reports no-hint and hinted accuracy per bucket."""
    edges = list(edges if edges is not None else [i / 10 for i in range(11)])
    ok, message = validate_bucket_edges(edges)
    if not ok:
        raise ValidationError(message)
    rows = [[] for _ in range(len(edges) - 1)]
    for problem_id in sorted(hinted_selections):
        table = store.table_for(problem_id)
        a_wo = table.pooled_accuracy(table.empty)
        a_with = table.pooled_accuracy(hinted_selections[problem_id])
        rows[bucket_index(a_wo, edges)].append((a_wo, a_with))
    per_bucket = []
    for index, members in enumerate(rows):
        bucket = {"low": edges[index], "high": edges[index + 1], "n": len(members),
                  "mu_wo": None, "mu_with": None, "quantiles": None}
        if members:
            hinted = np.array([a_with for _, a_with in members])
            bucket["mu_wo"] = float(np.mean([a_wo for a_wo, _ in members]))
            bucket["mu_with"] = float(np.mean(hinted))
            bucket["quantiles"] = {str(q): float(v) for q, v in zip(QUANTILES, np.percentile(hinted, QUANTILES))}
        per_bucket.append(bucket)
    return BucketReport(edges, per_bucket)


def correct_count_distribution(store, config_per_problem, run=0, pooled=False):
    """Fraction of problems at each correct count, either for one run or pooled over all runs."""
    counts = []
    max_count = None
    for problem_id in sorted(config_per_problem):
        table = store.table_for(problem_id)
        cell = table.counts(config_per_problem[problem_id])
        if pooled:
            value, ceiling = sum(cell), table.runs * table.samples_per_run
        else:
            if not 0 <= run < table.runs:
                raise ValidationError(f"run {run} outside [0, {table.runs})")
            value, ceiling = cell[run], table.samples_per_run
        if max_count is not None and ceiling != max_count:
            raise ValidationError("problems use different evaluation budgets; distribution is undefined")
        max_count = ceiling
        counts.append(value)
    histogram = np.bincount(np.array(counts, dtype=int), minlength=(max_count or 0) + 1) if counts else np.zeros(1)
    total = len(counts)
    return {
        "kind": "distribution",
        "mode": "pooled" if pooled else "run",
        "run": None if pooled else run,
        "problems": total,
        "max_count": max_count,
        "fractions": [float(c) / total if total else 0.0 for c in histogram],
    }


def strategy_jaccard(selections_a, selections_b):
    """Mean per-problem Jaccard similarity of two {problem_id: Configuration} maps."""
    ids_a, ids_b = set(selections_a), set(selections_b)
    if ids_a != ids_b:
        raise ValidationError(f"selection sets cover different problems: {sorted(ids_a ^ ids_b)}")
    if not ids_a:
        raise ValidationError("no problems to compare")
    total = 0.0
    for problem_id in sorted(ids_a):
        a, b = selections_a[problem_id].as_set(), selections_b[problem_id].as_set()
        union = a | b
        total += 1.0 if not union else len(a & b) / len(union)
    return total / len(ids_a)


def prefix_sweep(problem, ratios, provider, runs=8, samples_per_run=32):
    """Accuracy as a growing prefix of the reference solution is injected as the hint."""
    if not problem.reference_solution:
        raise ValidationError(f"Problem {problem.id} has no reference solution")
    points = []
    for ratio in ratios:
        hint, tokens = build_prefix_hint(problem.reference_solution, ratio)
        prompt = emit_prompt(problem, hint)
        counts = provider.evaluate_prompt(problem, prompt, runs, samples_per_run)
        accuracy = sum(counts) / (runs * samples_per_run)
        logging.info(f"Prefix sweep {problem.id}: r={ratio} tokens={tokens} accuracy={accuracy:.4f}")
        points.append({"kind": "prefix", "problem_id": problem.id, "ratio": ratio, "tokens": tokens,
                       "hint": hint, "accuracy": accuracy})
    return points


def kp_reduction(all_total, selected_total):
    """Percent fewer KPs than all-KP injection, rounded to one decimal."""
    if all_total == 0:
        return 0.0
    return round(float(Fraction(all_total - selected_total, all_total) * 100), 1)


def kp_statistics(store, outcomes):
    """Mean KPs per problem for all-KP vs the given selections, plus percent reduction."""
    outcomes = list(outcomes)
    if not outcomes:
        return {"kind": "kp_statistics", "problems": 0, "all_kp_mean": None, "selected_mean": None,
                "reduction_percent": None}
    all_total = sum(store.table_for(o.problem_id).n_kps for o in outcomes)
    selected_total = sum(len(o.selected) for o in outcomes)
    return {
        "kind": "kp_statistics",
        "problems": len(outcomes),
        "all_kp_mean": round(all_total / len(outcomes), 6),
        "selected_mean": round(selected_total / len(outcomes), 6),
        "reduction_percent": kp_reduction(all_total, selected_total),
    }
