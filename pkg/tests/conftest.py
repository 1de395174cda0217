import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.accuracy_table import AccuracyTable  # noqa: E402
from models.configuration import Configuration  # noqa: E402
from models.problem import KnowledgePoint, Problem  # noqa: E402
from services.rollout_store import RolloutStore  # noqa: E402

FIXTURE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def make_table(n_kps, values, runs=1, samples_per_run=100, problem_id="p1"):
    """AccuracyTable from {indices: accuracy or per-run counts}.

    A float is spread evenly over every run; a list is taken as the per-run counts.
    """
    table = AccuracyTable(problem_id, n_kps, runs=runs, samples_per_run=samples_per_run)
    for indices, value in values.items():
        if isinstance(value, (list, tuple)):
            counts = list(value)
        else:
            counts = [int(round(value * samples_per_run))] * runs
        table.add_cell(Configuration.of(indices, n_kps), counts)
    return table


def loo_values(a_empty, a_full, a_minus):
    """{∅, K, K∖{i}} accuracies keyed the way make_table expects."""
    n = len(a_minus)
    values = {(): a_empty, tuple(range(n)): a_full}
    for i, acc in enumerate(a_minus):
        values[tuple(j for j in range(n) if j != i)] = acc
    return values


def store_with(*tables, runs=None, samples_per_run=None):
    first = tables[0]
    store = RolloutStore(None, runs or first.runs, samples_per_run or first.samples_per_run)
    for table in tables:
        store.tables[table.problem_id] = table
    return store


class DictProvider:
    """Generating provider answering from a {(problem_id, config key): counts} map and logging every call."""
    generates = True

    def __init__(self, answers):
        self.answers = answers
        self.calls = []

    def evaluate(self, request):
        self.calls.append((request.problem_id, request.config))
        return list(self.answers[(request.problem_id, request.config.key)])


class ScriptedBackend:
    """Chat backend that answers by matching the prompt against a list of (predicate, reply) rules."""

    def __init__(self, replies=None, rules=None):
        self.replies = list(replies or [])
        self.rules = list(rules or [])
        self.calls = []

    def __call__(self, messages, **params):
        prompt = messages[-1]["content"]
        self.calls.append((prompt, params))
        for predicate, reply in self.rules:
            if predicate(prompt):
                return reply(prompt) if callable(reply) else reply
        if not self.replies:
            raise AssertionError("scripted backend ran out of replies")
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


PAINT_STATEMENT = (
    "Jackson's paintbrush makes a narrow strip with a width of $6.5$ millimeters. Jackson has enough paint "
    "to make a strip $25$ meters long. How many square centimeters of paper could Jackson cover with paint?"
)

PAINT_KPS = [
    ("Unit conversion between metric length units follows powers of 10 (millimeters, centimeters, meters, etc.).",
     "Moving to a larger unit requires division; moving to a smaller unit requires multiplication. "
     "The conversion factors are: 10 mm = 1 cm, 100 cm = 1 m."),
    ("When calculating area, all linear measurements must be converted to the same unit before computation.",
     "The choice of unit should match the desired unit of the final answer; converting before multiplication "
     "avoids errors in dimensional analysis."),
    ("A narrow strip of constant width covering a certain length can be modeled as a rectangle.",
     "This applies when the strip has uniform width throughout its entire length; the area represents the "
     "total surface covered."),
]


@pytest.fixture
def paint_problem():
    return Problem("paint-1", PAINT_STATEMENT, gold_answer="1625")


@pytest.fixture
def paint_kps():
    return [KnowledgePoint("paint-1", i, k, c, status="verified") for i, (k, c) in enumerate(PAINT_KPS)]


@pytest.fixture
def memory_store():
    return RolloutStore(None, runs=8, samples_per_run=32)
