# services/curation_service.py
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor, as_completed

from models.configuration import Configuration
from models.problem import KnowledgePoint, LeakageVerdict
from models.rollout import RolloutRecord
from models.selection import as_fraction
from services.interaction_service import kp_reduction
from services.prompt_service import emit_hint_block, emit_prompt, render_template
from services.rollout_store import RolloutStore
from utils.answer_matching import boxed_answer_matches
from utils.batch import fan_out
from utils.errors import (EndpointError, ExtractionParseError, PartialRunError, UnsolvedError, ValidationError,
                          VerdictParseError)
from utils.file_utils import write_jsonl

_ITEM_START_RE = re.compile(r"^\s*(?:\*\*)?(\d+)[.)](?:\*\*)?\s+", re.MULTILINE)
_PART_B_LINE_RE = re.compile(r"^[ \t]*(?:\*\*)?\(b\)", re.MULTILINE)
# Inline fallback for one-line items; a "(b)" right after a letter or ")" is math, as in f(b).
_PART_B_INLINE_RE = re.compile(r"(?<![\w)])\(b\)")
_LABEL_RE = re.compile(
    r"^\s*(?:\*\*)?\s*(?:the\s+)?(?:knowledge\s+point|key\s+considerations?|considerations)\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s*",
    re.IGNORECASE,
)


# --- Stage 1: reference solution ---

def generate_solution(problem, client, max_attempts=8, matcher=boxed_answer_matches):
    """Samples until a response's final answer matches the gold answer; returns (solution, attempts)."""
    prompt = emit_prompt(problem, "")
    for attempt in range(1, max_attempts + 1):
        response = client.complete(prompt, tag=f"solve:{problem.id}:{attempt}")
        if matcher(response, problem.gold_answer):
            logging.info(f"Problem {problem.id}: correct solution on attempt {attempt}")
            problem.reference_solution = response
            return response, attempt
        logging.debug(f"SAMPLE solve {problem.id} attempt {attempt}: wrong answer")
    raise UnsolvedError(problem.id, max_attempts)


# --- Stage 2: raw KP extraction ---

def _strip_label(text):
    text = _LABEL_RE.sub("", text.strip(), count=1)
    return text.strip().strip("*").strip()


def parse_kp_reply(problem_id, reply):
    """Numbered list whose items carry (a) knowledge and (b) considerations -> raw KnowledgePoints."""
    if not reply or not reply.strip():
        raise ExtractionParseError(f"Problem {problem_id}: empty extraction reply", reply or "")
    starts = list(_ITEM_START_RE.finditer(reply))
    if not starts:
        raise ExtractionParseError(f"Problem {problem_id}: reply is not a numbered list", reply)
    kps = []
    for position, match in enumerate(starts):
        end = starts[position + 1].start() if position + 1 < len(starts) else len(reply)
        body = reply[match.end():end]
        number = int(match.group(1))
        split = _PART_B_LINE_RE.search(body) or _PART_B_INLINE_RE.search(body)
        if split is None:
            raise ExtractionParseError(f"Problem {problem_id}: item {number} has no (b) part", reply, item=number)
        part_a = body[:split.start()].strip()
        if part_a.startswith("(a)"):
            part_a = part_a[len("(a)"):]
        knowledge = _strip_label(part_a)
        considerations = _strip_label(body[split.end():])
        if not knowledge or not considerations:
            raise ExtractionParseError(f"Problem {problem_id}: item {number} has an empty part", reply, item=number)
        kps.append(KnowledgePoint(problem_id, len(kps), knowledge, considerations, status="raw"))
    return kps


def extract_kps(problem, solution, client):
    prompt = render_template("extract_kp", question=problem.statement, solution=solution)
    reply = client.complete(prompt, tag=f"extract:{problem.id}")
    kps = parse_kp_reply(problem.id, reply)
    logging.info(f"Problem {problem.id}: extracted {len(kps)} raw knowledge points")
    return kps


# --- Stage 3: leakage verification ---

def first_brace_block(text):
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    in_string = False
    escaped = False
    for position in range(start, len(text)):
        ch = text[position]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:position + 1]
    return None


def parse_verdict(problem_id, kp_index, reply):
    block = first_brace_block(reply or "")
    if block is None:
        raise VerdictParseError(f"KP {problem_id}#{kp_index}: no structured block in reviewer reply", reply)
    try:
        data = json.loads(block)
    except json.JSONDecodeError as e:
        raise VerdictParseError(f"KP {problem_id}#{kp_index}: malformed verdict: {e}", reply) from e
    if not isinstance(data, dict) or not isinstance(data.get("strongly_coupled"), bool) \
            or not isinstance(data.get("reason"), str):
        raise VerdictParseError(
            f"KP {problem_id}#{kp_index}: verdict needs boolean 'strongly_coupled' and string 'reason'", reply
        )
    return LeakageVerdict(problem_id, kp_index, data["strongly_coupled"], data["reason"])


def knowledge_description(kp):
    return f"{kp.knowledge}\nKey Considerations: {kp.considerations}"


def verify_leakage(problem, kp, client):
    if kp.status != "raw":
        raise ValidationError(f"KP {kp.problem_id}#{kp.index} has status '{kp.status}', expected 'raw'")
    prompt = render_template("leakage_check", question=problem.statement, knowledge=knowledge_description(kp))
    reply = client.complete(prompt, tag=f"leakage:{problem.id}:{kp.index}")
    return parse_verdict(problem.id, kp.index, reply)


def apply_verdict(kp, verdict):
    kp.status = verdict.resulting_status
    return kp


# --- Pipeline driver ---

def needs_curation(store, problem_id):
    kps = store.kps.get(problem_id)
    return not kps or any(kp.status == "raw" for kp in kps)


def curate_problem(store, problem, client, max_attempts=8, matcher=boxed_answer_matches):
    """Runs the stages a problem still lacks; state is persisted after every stage so reruns resume."""
    report = {"problem_id": problem.id, "attempts": 0}
    if not problem.reference_solution:
        _, report["attempts"] = generate_solution(problem, client, max_attempts, matcher)
        store.add_problem(problem)
        store.save_problems()
    kps = store.kps.get(problem.id)
    if not kps:
        kps = extract_kps(problem, problem.reference_solution, client)
        store.set_kps(problem.id, kps)
        store.save_kps()
    parse_errors = []
    for kp in kps:
        if kp.status != "raw":
            continue
        try:
            apply_verdict(kp, verify_leakage(problem, kp, client))
        except VerdictParseError as e:
            logging.warning(f"{e}")
            parse_errors.append(kp.index)
    store.save_kps()
    report["kps"] = len(kps)
    report["verified"] = sum(1 for kp in kps if kp.status == "verified")
    report["needs_revision"] = sum(1 for kp in kps if kp.status == "needs_revision")
    if parse_errors:
        raise VerdictParseError(f"Problem {problem.id}: unparseable verdicts for KPs {parse_errors}", "")
    return report


def run_curation(store, client, max_attempts=8, parallelism=4, matcher=boxed_answer_matches):
    problem_ids = [pid for pid in sorted(store.problems) if needs_curation(store, pid)]
    logging.info(f"Curating {len(problem_ids)} problems")
    results, failures = fan_out(
        problem_ids, lambda pid: curate_problem(store, store.problems[pid], client, max_attempts, matcher),
        parallelism,
    )
    return [results[pid] for pid in problem_ids if pid in results], failures


# --- Rollout evaluation against the endpoint ---

def configuration_prompt(problem, kps, config):
    hint = emit_hint_block([kps[i] for i in config]) if len(config) else ""
    return emit_prompt(problem, hint)


def evaluate_config(store, problem, kps, config, client, runs=8, samples_per_run=32,
                    matcher=boxed_answer_matches, parallelism=4, tag_prefix=None, prompt=None):
    """Per-run correct counts for a configuration, sampled from the endpoint.

    Every scored sample is persisted before it is counted; a rerun skips samples already on
    record, so an interrupted evaluation resumes where it stopped.
    """
    prompt = prompt if prompt is not None else configuration_prompt(problem, kps, config)
    tag_prefix = tag_prefix or f"eval:{problem.id}:{config.key}"
    cells = [(run, sample) for run in range(runs) for sample in range(samples_per_run)]
    pending = [cell for cell in cells if store.raw_result(problem.id, config, *cell) is None]
    if len(pending) < len(cells):
        logging.info(f"Problem {problem.id} {config}: resuming, {len(cells) - len(pending)} samples on record")

    def score(cell):
        run, sample = cell
        response = client.complete(prompt, tag=f"{tag_prefix}:{run}:{sample}")
        store.record_raw(RolloutRecord(problem.id, config, run, sample, matcher(response, problem.gold_answer)))

    failure = None
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as executor:
        futures = [executor.submit(score, cell) for cell in pending]
        for future in as_completed(futures):
            error = future.exception()
            if error is not None and failure is None:
                failure = error
    if failure is not None:
        if not isinstance(failure, EndpointError):
            raise failure
        cursor = next(cell for cell in cells if store.raw_result(problem.id, config, *cell) is None)
        raise PartialRunError(problem.id, config, cursor, failure)

    counts = [0] * runs
    for run, sample in cells:
        counts[run] += bool(store.raw_result(problem.id, config, run, sample))
    return counts


class EndpointProvider:
    """Generating provider that samples the chat endpoint; plugs into RolloutStore.fetch_or_request."""
    generates = True

    def __init__(self, store, client, matcher=boxed_answer_matches, parallelism=4):
        self.store = store
        self.client = client
        self.matcher = matcher
        self.parallelism = parallelism

    def evaluate(self, request):
        problem = self.store.problems.get(request.problem_id)
        if problem is None:
            raise ValidationError(f"Unknown problem {request.problem_id}")
        kps = self.store.kps.get(request.problem_id, [])
        if not request.config.is_subset_of(len(kps)):
            raise ValidationError(f"Configuration {request.config} outside the KPs of {request.problem_id}")
        return evaluate_config(self.store, problem, kps, request.config, self.client, request.runs,
                               request.samples_per_run, self.matcher, self.parallelism)

    def evaluate_prompt(self, problem, prompt, runs, samples_per_run):
        # Free-form prompts (prefix sweeps) are tagged by content so replays stay stable.
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        marker = Configuration.empty()
        scratch = RolloutStore(None, runs, samples_per_run)
        return evaluate_config(scratch, problem, [], marker, self.client, runs, samples_per_run, self.matcher,
                               self.parallelism, tag_prefix=f"prompt:{problem.id}:{digest}", prompt=prompt)


# --- Training export ---

def export_training_data(store, selections, injection_threshold=0.9, path=None, header=None):
    """One record per problem with the hint injected only for non-empty selections on hard problems.

    Returns (records, summary, skipped).
    """
    threshold = as_fraction(injection_threshold)
    records, skipped = [], []
    all_total = selected_total = 0
    for problem_id in sorted(store.problems):
        problem = store.problems[problem_id]
        outcome = selections.get(problem_id)
        if outcome is None:
            skipped.append({"problem_id": problem_id, "reason": "no selection"})
            continue
        selected = outcome.selected
        kps = store.kps.get(problem_id, [])
        inject = False
        if len(selected):
            table = store.table_for(problem_id)
            if not table.has(table.empty):
                skipped.append({"problem_id": problem_id, "reason": "no-KP accuracy not evaluated"})
                continue
            inject = table.pooled_fraction(table.empty) < threshold
        try:
            hint = emit_hint_block([kps[i] for i in selected]) if inject else ""
        except (IndexError, ValidationError) as e:
            skipped.append({"problem_id": problem_id, "reason": str(e) or "selection outside KP list"})
            continue
        records.append({
            "id": problem_id,
            "prompt": emit_prompt(problem, hint),
            "answer": problem.gold_answer,
            "selected": list(selected.kp_indices),
            "hinted": inject,
        })
        all_total += len(kps)
        selected_total += len(selected)
    count = len(records)
    summary = {
        "kind": "summary",
        "problems": count,
        "all_kp_mean": round(all_total / count, 6) if count else None,
        "selected_kp_mean": round(selected_total / count, 6) if count else None,
        "reduction_percent": kp_reduction(all_total, selected_total),
        "hinted": sum(1 for r in records if r["hinted"]),
        "skipped": len(skipped),
    }
    if path:
        write_jsonl(path, records + [summary], header=header)
    logging.info(f"Export: {summary}")
    return records, summary, skipped
