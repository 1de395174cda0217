# models/problem.py
from utils.errors import ValidationError

KP_STATUSES = ("raw", "verified", "needs_revision", "revised")
FINAL_KP_STATUSES = ("verified", "revised")


class Problem:
    def __init__(self, id, statement, gold_answer, reference_solution=None):
        if not id:
            raise ValidationError("Problem id must be non-empty")
        self.id = id
        self.statement = statement
        self.gold_answer = gold_answer
        self.reference_solution = reference_solution

    @classmethod
    def from_record(cls, record):
        """Builds a Problem from a problems-file record (`id`, `statement`, `solution`, `answer`)."""
        for key in ("id", "statement", "answer"):
            if key not in record:
                raise ValidationError(f"missing field '{key}'")
        return cls(
            id=str(record["id"]),
            statement=record["statement"],
            gold_answer=str(record["answer"]),
            reference_solution=record.get("solution"),
        )

    def to_record(self):
        return {
            "id": self.id,
            "statement": self.statement,
            "solution": self.reference_solution,
            "answer": self.gold_answer,
        }

    def __repr__(self):
        return f"Problem(id={self.id!r})"


class KnowledgePoint:
    def __init__(self, problem_id, index, knowledge, considerations, status="raw"):
        if status not in KP_STATUSES:
            raise ValidationError(f"KP {problem_id}#{index}: unknown status '{status}'")
        if index < 0:
            raise ValidationError(f"KP {problem_id}#{index}: index must be >= 0")
        self.problem_id = problem_id
        self.index = index
        self.knowledge = knowledge
        self.considerations = considerations
        self.status = status

    @property
    def is_final(self):
        return self.status in FINAL_KP_STATUSES

    @classmethod
    def from_record(cls, record):
        for key in ("problem_id", "index", "knowledge", "considerations"):
            if key not in record:
                raise ValidationError(f"missing field '{key}'")
        return cls(
            problem_id=str(record["problem_id"]),
            index=int(record["index"]),
            knowledge=record["knowledge"],
            considerations=record["considerations"],
            status=record.get("status", "raw"),
        )

    def to_record(self):
        return {
            "problem_id": self.problem_id,
            "index": self.index,
            "knowledge": self.knowledge,
            "considerations": self.considerations,
            "status": self.status,
        }

    def __eq__(self, other):
        if not isinstance(other, KnowledgePoint):
            return NotImplemented
        return self.to_record() == other.to_record()

    def __repr__(self):
        return f"KnowledgePoint({self.problem_id!r}, {self.index}, status={self.status!r})"


def check_contiguous(problem_id, kps):
    """KP indices within a problem must be exactly 0..n-1."""
    indices = sorted(kp.index for kp in kps)
    if indices != list(range(len(indices))):
        raise ValidationError(f"Problem {problem_id}: KP indices {indices} are not contiguous from 0")


class LeakageVerdict:
    """Reviewer decision on whether a KP is strongly coupled to its problem."""

    def __init__(self, problem_id, kp_index, strongly_coupled, reason):
        self.problem_id = problem_id
        self.kp_index = kp_index
        self.strongly_coupled = strongly_coupled
        self.reason = reason

    @property
    def resulting_status(self):
        return "needs_revision" if self.strongly_coupled else "verified"

    def to_record(self):
        return {
            "problem_id": self.problem_id,
            "kp_index": self.kp_index,
            "strongly_coupled": self.strongly_coupled,
            "reason": self.reason,
        }
