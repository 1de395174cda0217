# models/selection.py
from fractions import Fraction

from models.configuration import Configuration
from utils.errors import ValidationError

STRATEGIES = ("none", "all", "random", "max_score", "s_loo", "t_loo", "css", "cbrs", "exhaustive")
TIE_BREAK_PATHS = ("intersection", "vote", "variance", "cardinality")


def as_fraction(value):
    """Exact fraction for thresholds given as Fraction, int, float or 'a/b' strings."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(value).limit_denominator(10 ** 6)


class SelectionOutcome:
    def __init__(self, problem_id, strategy, selected, est_accuracy, evaluations_requested=0, notes=""):
        if strategy not in STRATEGIES:
            raise ValidationError(f"Unknown strategy '{strategy}'")
        self.problem_id = problem_id
        self.strategy = strategy
        self.selected = selected
        # None only when the chosen configuration is unevaluated and no provider was available.
        self.est_accuracy = est_accuracy
        self.evaluations_requested = evaluations_requested
        self.notes = notes

    def to_record(self):
        return {
            "problem_id": self.problem_id,
            "strategy": self.strategy,
            "selected": list(self.selected.kp_indices),
            "est_accuracy": self.est_accuracy,
            "evaluations_requested": self.evaluations_requested,
            "notes": self.notes,
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            problem_id=str(record["problem_id"]),
            strategy=record["strategy"],
            selected=Configuration.of(record["selected"]),
            est_accuracy=record.get("est_accuracy"),
            evaluations_requested=int(record.get("evaluations_requested", 0)),
            notes=record.get("notes", ""),
        )

    def __repr__(self):
        return (
            f"SelectionOutcome({self.problem_id!r}, {self.strategy}, selected={self.selected}, "
            f"est_accuracy={self.est_accuracy})"
        )


class PhiParams:
    """Tolerance for the leave-one-out operator: 0 gives S-LOO, 1/32 gives T-LOO."""

    def __init__(self, epsilon=0, strict_formula=False):
        epsilon = as_fraction(epsilon)
        if epsilon < 0 or epsilon > 1:
            raise ValidationError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.epsilon = epsilon
        # Audit mode: reproduce the printed branch-3 set literally (K minus the degrading KPs).
        self.strict_formula = strict_formula

    @classmethod
    def strict(cls):
        return cls(0)

    @classmethod
    def tolerant(cls, samples_per_run=32):
        return cls(Fraction(1, samples_per_run))


class CssPartition:
    def __init__(self, h, n_set, c, a_max):
        self.h = frozenset(h)
        self.n_set = frozenset(n_set)
        self.c = frozenset(c)
        self.a_max = a_max

    def to_record(self):
        return {
            "h": sorted(self.h),
            "n": sorted(self.n_set),
            "c": sorted(self.c),
            "a_max": float(self.a_max) if self.a_max is not None else None,
        }


class ConsensusReport:
    def __init__(self, per_run_near_optimal, consensus, delta, winner, tie_break_path):
        if tie_break_path not in TIE_BREAK_PATHS:
            raise ValidationError(f"Unknown tie-break path '{tie_break_path}'")
        self.per_run_near_optimal = per_run_near_optimal
        self.consensus = consensus
        self.delta = delta
        self.winner = winner
        self.tie_break_path = tie_break_path

    def to_record(self):
        return {
            "per_run_near_optimal": [sorted(c.key for c in run_set) for run_set in self.per_run_near_optimal],
            "consensus": sorted(c.key for c in self.consensus),
            "delta": str(self.delta),
            "winner": list(self.winner.kp_indices),
            "tie_break_path": self.tie_break_path,
        }
