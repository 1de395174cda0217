import json
import random
import threading
import time

import pytest

from models.configuration import Configuration
from models.rollout import RolloutRecord
from models.selection import SelectionOutcome
from models.world import SyntheticWorld
from services.rollout_store import (CacheOnlyProvider, RolloutStore, aggregate, load_selections)
from services.synth_service import SyntheticProvider
from utils.errors import ConflictError, IntegrityError, NotEvaluatedError, ValidationError


def write_lines(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write((record if isinstance(record, str) else json.dumps(record)) + "\n")
    return str(path)


def problem_record(pid):
    return {"id": pid, "statement": f"Statement {pid}", "solution": None, "answer": "1"}


def raw_records(problem_id, config, runs=8, samples_per_run=32, correct_total=None):
    records = []
    index = 0
    for run in range(runs):
        for sample in range(samples_per_run):
            correct = correct_total is not None and index < correct_total
            records.append(RolloutRecord(problem_id, config, run, sample, correct))
            index += 1
    return records


# --- ingestion ---

def test_ingest_problems_counts_lines(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [problem_record(p) for p in ("a", "b", "c")])
    store = RolloutStore(str(tmp_path / "data"))
    assert store.ingest_problems(path) == 3
    assert store.problem_ids() == ["a", "b", "c"]


def test_ingest_problems_duplicate_id_reports_line(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [problem_record("a"), problem_record("a")])
    store = RolloutStore(None)
    with pytest.raises(ConflictError) as info:
        store.ingest_problems(path)
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_ingest_empty_file(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [])
    assert RolloutStore(None).ingest_problems(path) == 0


def test_ingest_malformed_line_names_line_number(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [problem_record("a"), "{not json"])
    with pytest.raises(ValidationError, match="line 2"):
        RolloutStore(None).ingest_problems(path)


def test_ingest_missing_field_names_line_number(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [{"id": "a", "statement": "s"}])
    with pytest.raises(ValidationError, match="line 1"):
        RolloutStore(None).ingest_problems(path)


def test_reingest_same_content_is_a_no_op(tmp_path):
    path = write_lines(tmp_path / "problems.jsonl", [problem_record("a"), problem_record("b")])
    data_dir = str(tmp_path / "data")
    store = RolloutStore(data_dir)
    assert store.ingest_problems(path) == 2
    assert store.ingest_problems(path) == 2
    # The manifest survives a restart.
    assert RolloutStore(data_dir).ingest_problems(path) == 2


def test_ingest_kps_persists_and_reloads(tmp_path):
    records = [{"problem_id": "a", "index": i, "knowledge": f"k{i}", "considerations": f"c{i}",
                "status": "verified"} for i in (1, 0)]
    path = write_lines(tmp_path / "kps.jsonl", records)
    data_dir = str(tmp_path / "data")
    assert RolloutStore(data_dir).ingest_kps(path) == 2
    reloaded = RolloutStore(data_dir)
    assert [kp.index for kp in reloaded.kps["a"]] == [0, 1]
    assert reloaded.kps["a"][1].knowledge == "k1"


def test_ingest_kps_rejects_gaps(tmp_path):
    records = [{"problem_id": "a", "index": i, "knowledge": "k", "considerations": "c"} for i in (0, 2)]
    path = write_lines(tmp_path / "kps.jsonl", records)
    with pytest.raises(ValidationError, match="contiguous"):
        RolloutStore(None).ingest_kps(path)


def test_ingest_aggregated_rollouts(tmp_path):
    records = [
        {"problem_id": "a", "config": [], "run_counts": [10] * 8, "samples_per_run": 32, "n_kps": 2},
        {"problem_id": "a", "config": [1, 0], "run_counts": [20] * 8, "samples_per_run": 32},
    ]
    path = write_lines(tmp_path / "rollouts.jsonl", records)
    data_dir = str(tmp_path / "data")
    assert RolloutStore(data_dir).ingest_rollouts(path) == 2
    table = RolloutStore(data_dir).table_for("a")
    assert table.n_kps == 2
    assert table.counts(Configuration.full(2)) == (20,) * 8


def test_ingest_raw_rollouts_aggregates(tmp_path):
    records = [r.to_record() for r in raw_records("a", Configuration.of([0]), correct_total=100)]
    path = write_lines(tmp_path / "raw.jsonl", records)
    store = RolloutStore(str(tmp_path / "data"))
    assert store.ingest_raw_rollouts(path) == 256
    assert sum(store.table_for("a").counts(Configuration.of([0]))) == 100


# --- aggregation ---

def test_aggregate_counts_correct_samples():
    tables = aggregate(raw_records("p", Configuration.empty(), correct_total=100))
    assert sum(tables["p"].counts(Configuration.empty())) == 100
    assert tables["p"].counts(Configuration.empty())[:3] == (32, 32, 32)


def test_aggregate_incomplete_run_is_an_integrity_error():
    records = [r for r in raw_records("p", Configuration.empty()) if not (r.run == 0 and r.sample == 31)]
    with pytest.raises(IntegrityError) as info:
        aggregate(records)
    assert info.value.run == 0
    assert info.value.problem_id == "p"


def test_aggregate_rejects_duplicates_and_out_of_budget():
    records = raw_records("p", Configuration.empty())
    with pytest.raises(IntegrityError, match="duplicate"):
        aggregate(records + [records[0]])
    with pytest.raises(IntegrityError, match="outside"):
        aggregate(records + [RolloutRecord("p", Configuration.empty(), 8, 0, True)])


def test_aggregate_two_configs_two_cells():
    records = raw_records("p", Configuration.empty(), correct_total=5)
    records += raw_records("p", Configuration.of([0]), correct_total=50)
    table = aggregate(records)["p"]
    assert len(table.cells) == 2
    assert table.n_kps == 1


def test_aggregate_is_order_independent():
    records = raw_records("p", Configuration.empty(), correct_total=77)
    records += raw_records("p", Configuration.of([1]), correct_total=130)
    shuffled = list(records)
    random.Random(3).shuffle(shuffled)
    assert aggregate(records)["p"] == aggregate(shuffled)["p"]


# --- evaluation cache ---

class CountingProvider:
    generates = True

    def __init__(self, counts, delay=0.0):
        self.counts = counts
        self.delay = delay
        self.calls = 0
        self._lock = threading.Lock()

    def evaluate(self, request):
        with self._lock:
            self.calls += 1
        time.sleep(self.delay)
        return list(self.counts)


def test_cached_config_skips_provider(memory_store):
    table = memory_store.table_for("p", n_kps=1)
    table.add_cell(Configuration.empty(), [4] * 8)
    provider = CountingProvider([0] * 8)
    assert memory_store.fetch_or_request(table, Configuration.empty(), provider) == (4,) * 8
    assert provider.calls == 0
    assert memory_store.invocation_count("p") == 0


def test_uncached_config_asks_synthetic_provider(memory_store):
    world = SyntheticWorld("p", 2, 0.0, [0.5, -0.5])
    table = memory_store.table_for("p", n_kps=2)
    counts = memory_store.fetch_or_request(table, Configuration.of([0]), SyntheticProvider({"p": world}))
    assert len(counts) == 8
    assert all(0 <= c <= 32 for c in counts)
    assert memory_store.invocation_count("p") == 1
    assert table.has(Configuration.of([0]))


def test_cache_only_miss_names_configuration(memory_store):
    table = memory_store.table_for("p", n_kps=2)
    with pytest.raises(NotEvaluatedError) as info:
        memory_store.fetch_or_request(table, Configuration.of([1]), CacheOnlyProvider())
    assert info.value.missing == [Configuration.of([1])]


def test_evaluated_cell_is_written_through(tmp_path):
    data_dir = str(tmp_path / "data")
    store = RolloutStore(data_dir, runs=8, samples_per_run=32)
    table = store.table_for("p", n_kps=3)
    store.fetch_or_request(table, Configuration.of([0, 2]), CountingProvider([7] * 8))
    reloaded = RolloutStore(data_dir, runs=8, samples_per_run=32)
    assert reloaded.table_for("p").counts(Configuration.of([0, 2])) == (7,) * 8
    assert reloaded.table_for("p").n_kps == 3


def test_concurrent_requests_share_one_evaluation(memory_store):
    table = memory_store.table_for("p", n_kps=2)
    provider = CountingProvider([9] * 8, delay=0.2)
    results = []
    barrier = threading.Barrier(6)

    def worker():
        barrier.wait()
        results.append(memory_store.fetch_or_request(table, Configuration.full(2), provider))

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert provider.calls == 1
    assert results == [(9,) * 8] * 6
    assert memory_store.invocation_count("p") == 1


def test_selections_file_round_trip(tmp_path):
    store = RolloutStore(None)
    outcomes = [SelectionOutcome("b", "css", Configuration.of([1]), 0.5),
                SelectionOutcome("a", "css", Configuration.empty(), 0.25)]
    path = store.save_selections(outcomes, str(tmp_path / "sel.jsonl"), header={"kind": "header"})
    loaded = load_selections(path)
    assert sorted(loaded) == ["a", "b"]
    assert loaded["b"].selected == Configuration.of([1])
    assert loaded["a"].est_accuracy == 0.25
