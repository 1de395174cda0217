# services/rollout_store.py
import json
import logging
import os
import threading
from collections import defaultdict

from app_state import file_write_lock, inflight_lock, inflight_requests
from models.accuracy_table import AccuracyTable
from models.configuration import Configuration
from models.problem import KnowledgePoint, Problem, check_contiguous
from models.rollout import EvaluationRequest, RolloutRecord
from models.selection import SelectionOutcome
from utils.errors import ConflictError, IntegrityError, NotEvaluatedError, ValidationError
from utils.file_utils import append_jsonl, file_sha256, iter_jsonl, write_jsonl

PROBLEMS_FILE = "problems.jsonl"
KPS_FILE = "kps.jsonl"
ROLLOUTS_FILE = "rollouts.jsonl"
RAW_ROLLOUTS_FILE = "rollouts_raw.jsonl"
SELECTIONS_FILE = "selections.jsonl"
MANIFEST_FILE = "ingest_manifest.json"


class CacheOnlyProvider:
    """Provider that never generates: every miss is a not-evaluated error."""
    generates = False

    def evaluate(self, request):
        raise NotEvaluatedError(request.problem_id, [request.config])


class RolloutStore:
    """Flat-file store for problems, KPs and per-run accuracy counts.

    With data_dir=None the store is purely in memory (used by tests and synthetic sweeps).
    """

    def __init__(self, data_dir=None, runs=8, samples_per_run=32):
        self.data_dir = data_dir
        self.runs = runs
        self.samples_per_run = samples_per_run
        self.problems = {}
        self.kps = {}
        self.tables = {}
        self.raw_records = {}
        self._ingested = {}
        self._invocations = defaultdict(int)
        self._lock = threading.RLock()
        if data_dir:
            os.makedirs(data_dir, exist_ok=True)
            self.load()

    # --- paths ---

    def path(self, name):
        return os.path.join(self.data_dir, name) if self.data_dir else None

    # --- loading and ingestion ---

    def load(self):
        """Reads whatever persisted files exist in data_dir."""
        manifest = self.path(MANIFEST_FILE)
        if os.path.exists(manifest):
            with open(manifest, "r", encoding="utf-8") as f:
                self._ingested = json.load(f)
        if os.path.exists(self.path(PROBLEMS_FILE)):
            for line_number, record in iter_jsonl(self.path(PROBLEMS_FILE)):
                problem = _parse(Problem.from_record, record, PROBLEMS_FILE, line_number)
                self.problems[problem.id] = problem
        if os.path.exists(self.path(KPS_FILE)):
            self._load_kps(self.path(KPS_FILE), persist=False)
        if os.path.exists(self.path(ROLLOUTS_FILE)):
            self._load_rollouts(self.path(ROLLOUTS_FILE), persist=False)
        if os.path.exists(self.path(RAW_ROLLOUTS_FILE)):
            for line_number, record in iter_jsonl(self.path(RAW_ROLLOUTS_FILE)):
                raw = _parse(RolloutRecord.from_record, record, RAW_ROLLOUTS_FILE, line_number)
                self.raw_records[raw.key] = raw
        logging.info(
            f"Store loaded: {len(self.problems)} problems, {sum(len(v) for v in self.kps.values())} KPs, "
            f"{sum(len(t.cells) for t in self.tables.values())} accuracy cells"
        )

    def _already_ingested(self, path):
        digest = file_sha256(path)
        if digest in self._ingested:
            logging.info(f"{path} already ingested (sha256 {digest[:12]}), skipping")
            return digest, self._ingested[digest]
        return digest, None

    def _mark_ingested(self, digest, count):
        self._ingested[digest] = count
        if self.data_dir:
            with open(self.path(MANIFEST_FILE), "w", encoding="utf-8") as f:
                json.dump(self._ingested, f, sort_keys=True, indent=1)

    def ingest_problems(self, path):
        """Loads a problems file; returns the number of problems it holds."""
        digest, previous = self._already_ingested(path)
        if previous is not None:
            return previous
        loaded = {}
        for line_number, record in iter_jsonl_checked(path):
            problem = _parse(Problem.from_record, record, path, line_number)
            if problem.id in loaded or problem.id in self.problems:
                raise ConflictError(f"duplicate problem id '{problem.id}'", line=line_number)
            loaded[problem.id] = problem
        with self._lock:
            self.problems.update(loaded)
            self.save_problems()
            self._mark_ingested(digest, len(loaded))
        logging.info(f"Ingested {len(loaded)} problems from {path}")
        return len(loaded)

    def ingest_kps(self, path):
        digest, previous = self._already_ingested(path)
        if previous is not None:
            return previous
        count = self._load_kps(path, persist=True)
        self._mark_ingested(digest, count)
        logging.info(f"Ingested {count} knowledge points from {path}")
        return count

    def _load_kps(self, path, persist):
        grouped = defaultdict(dict)
        count = 0
        for line_number, record in iter_jsonl_checked(path):
            kp = _parse(KnowledgePoint.from_record, record, path, line_number)
            if kp.index in grouped[kp.problem_id]:
                raise ConflictError(f"duplicate KP {kp.problem_id}#{kp.index}", line=line_number)
            grouped[kp.problem_id][kp.index] = kp
            count += 1
        with self._lock:
            for problem_id, by_index in grouped.items():
                kps = [by_index[i] for i in sorted(by_index)]
                check_contiguous(problem_id, kps)
                self.kps[problem_id] = kps
            if persist:
                self.save_kps()
        return count

    def ingest_rollouts(self, path):
        """Loads an aggregated rollouts file (`run_counts` per configuration)."""
        digest, previous = self._already_ingested(path)
        if previous is not None:
            return previous
        count = self._load_rollouts(path, persist=True)
        self._mark_ingested(digest, count)
        logging.info(f"Ingested {count} accuracy cells from {path}")
        return count

    def _load_rollouts(self, path, persist):
        count = 0
        for line_number, record in iter_jsonl_checked(path):
            try:
                problem_id = str(record["problem_id"])
                config = Configuration.of(record["config"])
                counts = [int(c) for c in record["run_counts"]]
                samples_per_run = int(record.get("samples_per_run", self.samples_per_run))
            except (KeyError, TypeError, ValueError, ValidationError) as e:
                raise ValidationError(f"{path} line {line_number}: {e}") from e
            n_kps = record.get("n_kps")
            with self._lock:
                table = self.tables.get(problem_id)
                if table is None:
                    table = AccuracyTable(
                        problem_id,
                        n_kps=int(n_kps) if n_kps is not None else self._infer_n_kps(problem_id, config),
                        runs=len(counts),
                        samples_per_run=samples_per_run,
                    )
                    self.tables[problem_id] = table
                elif table.runs != len(counts) or table.samples_per_run != samples_per_run:
                    raise ValidationError(
                        f"{path} line {line_number}: problem {problem_id} mixes evaluation budgets"
                    )
                elif not config.is_subset_of(table.n_kps):
                    table.n_kps = max(config.kp_indices) + 1
                try:
                    table.add_cell(config, counts)
                except ValidationError as e:
                    raise ValidationError(f"{path} line {line_number}: {e}") from e
                if persist and self.data_dir:
                    self._append_cell(table, config)
            count += 1
        return count

    def ingest_raw_rollouts(self, path):
        """Loads per-sample records and aggregates them into accuracy cells."""
        digest, previous = self._already_ingested(path)
        if previous is not None:
            return previous
        records = []
        for line_number, record in iter_jsonl_checked(path):
            records.append(_parse(RolloutRecord.from_record, record, path, line_number))
        tables = aggregate(records, self.runs, self.samples_per_run, n_kps_of=self._infer_n_kps)
        with self._lock:
            for record in records:
                self.raw_records[record.key] = record
                if self.data_dir:
                    append_jsonl(self.path(RAW_ROLLOUTS_FILE), record.to_record())
            for problem_id, table in tables.items():
                existing = self.table_for(problem_id, n_kps=table.n_kps)
                for config, counts in table.cells.items():
                    existing.add_cell(config, counts)
                    if self.data_dir:
                        self._append_cell(existing, config)
        self._mark_ingested(digest, len(records))
        logging.info(f"Ingested {len(records)} raw rollout records from {path}")
        return len(records)

    def _infer_n_kps(self, problem_id, config=None):
        if problem_id in self.kps:
            return len(self.kps[problem_id])
        if config is not None and len(config):
            return max(config.kp_indices) + 1
        return 0

    # --- accessors ---

    def problem_ids(self):
        return sorted(set(self.problems) | set(self.tables))

    def table_for(self, problem_id, n_kps=None):
        with self._lock:
            table = self.tables.get(problem_id)
            if table is None:
                table = AccuracyTable(
                    problem_id,
                    n_kps=n_kps if n_kps is not None else self._infer_n_kps(problem_id),
                    runs=self.runs,
                    samples_per_run=self.samples_per_run,
                )
                self.tables[problem_id] = table
            return table

    def add_problem(self, problem):
        with self._lock:
            self.problems[problem.id] = problem

    def set_kps(self, problem_id, kps):
        check_contiguous(problem_id, kps)
        with self._lock:
            self.kps[problem_id] = list(kps)

    def save_problems(self):
        if self.data_dir:
            with self._lock:
                write_jsonl(self.path(PROBLEMS_FILE),
                            [self.problems[pid].to_record() for pid in sorted(self.problems)])

    def save_kps(self):
        if self.data_dir:
            with self._lock:
                records = [kp.to_record() for pid in sorted(self.kps) for kp in self.kps[pid]]
                write_jsonl(self.path(KPS_FILE), records)

    # --- evaluation cache ---

    def _append_cell(self, table, config):
        record = {
            "problem_id": table.problem_id,
            "config": list(config.kp_indices),
            "run_counts": list(table.counts(config)),
            "samples_per_run": table.samples_per_run,
            "n_kps": table.n_kps,
        }
        with file_write_lock:
            append_jsonl(self.path(ROLLOUTS_FILE), record)

    def record_raw(self, record):
        """Persists one scored sample before it is counted (resumable evaluation)."""
        with self._lock:
            if record.key in self.raw_records:
                return
            self.raw_records[record.key] = record
        if self.data_dir:
            with file_write_lock:
                append_jsonl(self.path(RAW_ROLLOUTS_FILE), record.to_record())

    def raw_result(self, problem_id, config, run, sample):
        record = self.raw_records.get((problem_id, config, run, sample))
        return None if record is None else record.correct

    def invocation_count(self, problem_id=None):
        with self._lock:
            if problem_id is None:
                return sum(self._invocations.values())
            return self._invocations[problem_id]

    def fetch_or_request(self, table, config, provider):
        """Cached per-run counts for config, asking the provider at most once per (problem, config).

        Concurrent callers for the same configuration wait for the single in-flight request.
        """
        if table.has(config):
            return table.counts(config)

        key = (id(self), table.problem_id, config.key)
        with inflight_lock:
            entry = inflight_requests.get(key)
            leader = entry is None
            if leader:
                entry = {"event": threading.Event(), "error": None}
                inflight_requests[key] = entry

        if not leader:
            entry["event"].wait()
            if entry["error"] is not None:
                raise entry["error"]
            return table.counts(config)

        try:
            if table.has(config):
                return table.counts(config)
            request = EvaluationRequest(table.problem_id, config, table.runs, table.samples_per_run)
            logging.info(f"Requesting evaluation {request}")
            counts = provider.evaluate(request)
            with self._lock:
                table.add_cell(config, counts)
                self._invocations[table.problem_id] += 1
                if self.data_dir:
                    self._append_cell(table, config)
            return table.counts(config)
        except Exception as e:
            entry["error"] = e
            if isinstance(e, NotEvaluatedError):
                logging.warning(f"{e}")
            else:
                logging.error(f"Evaluation failed for {table.problem_id} {config}: {e}", exc_info=True)
            raise
        finally:
            with inflight_lock:
                inflight_requests.pop(key, None)
            entry["event"].set()

    def save_selections(self, outcomes, path=None, header=None):
        path = path or self.path(SELECTIONS_FILE)
        write_jsonl(path, [o.to_record() for o in outcomes], header=header)
        return path


def iter_jsonl_checked(path):
    try:
        yield from iter_jsonl(path)
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def _parse(factory, record, path, line_number):
    try:
        return factory(record)
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        error = ValidationError(f"{path} line {line_number}: {e}")
        error.line = line_number
        raise error from e


def aggregate(records, runs=8, samples_per_run=32, n_kps_of=None):
    """Per-run correct counts from raw per-sample records, one AccuracyTable per problem.

    Every (problem, config) must carry all `runs` runs, each with all `samples_per_run`
    samples; incomplete runs are an IntegrityError, never padded.
    """
    seen = set()
    grid = defaultdict(lambda: defaultdict(dict))
    for record in records:
        if record.key in seen:
            raise IntegrityError(record.problem_id, record.config, record.run,
                                 f"duplicate sample {record.sample}")
        seen.add(record.key)
        if record.run >= runs or record.sample >= samples_per_run:
            raise IntegrityError(record.problem_id, record.config, record.run,
                                 f"sample {record.sample} outside {runs}x{samples_per_run} budget")
        grid[(record.problem_id, record.config)][record.run][record.sample] = record.correct

    tables = {}
    for (problem_id, config) in sorted(grid, key=lambda k: (k[0], k[1].sort_key())):
        by_run = grid[(problem_id, config)]
        counts = []
        for run in range(runs):
            samples = by_run.get(run, {})
            if len(samples) != samples_per_run:
                raise IntegrityError(problem_id, config, run,
                                     f"incomplete run ({len(samples)}/{samples_per_run} samples)")
            counts.append(sum(1 for correct in samples.values() if correct))
        table = tables.get(problem_id)
        if table is None:
            n_kps = n_kps_of(problem_id) if n_kps_of else 0
            table = AccuracyTable(problem_id, n_kps, runs, samples_per_run)
            tables[problem_id] = table
        if not config.is_subset_of(table.n_kps):
            table.n_kps = max(config.kp_indices) + 1
        table.add_cell(config, counts)
    return tables


def load_selections(path):
    """{problem_id: SelectionOutcome} from a selections file (header and summary records skipped)."""
    selections = {}
    for line_number, record in iter_jsonl_checked(path):
        if record.get("kind") == "summary":
            continue
        outcome = _parse(SelectionOutcome.from_record, record, path, line_number)
        if outcome.problem_id in selections:
            raise ConflictError(f"duplicate selection for '{outcome.problem_id}'", line=line_number)
        selections[outcome.problem_id] = outcome
    return selections
