# models/rollout.py
from models.configuration import Configuration
from utils.errors import ValidationError


class RolloutRecord:
    """One scored sample: (problem, configuration, run, sample) -> correct.

    `seed` is the decoding seed when the producer reports one; it is kept for audit only.
    """

    __slots__ = ("problem_id", "config", "run", "sample", "correct", "seed")

    def __init__(self, problem_id, config, run, sample, correct, seed=None):
        if run < 0 or sample < 0:
            raise ValidationError(f"Problem {problem_id}: run and sample must be >= 0")
        self.problem_id = problem_id
        self.config = config
        self.run = run
        self.sample = sample
        self.correct = bool(correct)
        self.seed = seed

    @property
    def key(self):
        return (self.problem_id, self.config, self.run, self.sample)

    @classmethod
    def from_record(cls, record):
        return cls(
            problem_id=str(record["problem_id"]),
            config=Configuration.of(record["config"]),
            run=int(record["run"]),
            sample=int(record["sample"]),
            correct=record["correct"],
            seed=record.get("seed"),
        )

    def to_record(self):
        record = {
            "problem_id": self.problem_id,
            "config": list(self.config.kp_indices),
            "run": self.run,
            "sample": self.sample,
            "correct": self.correct,
        }
        if self.seed is not None:
            record["seed"] = self.seed
        return record


class EvaluationRequest:
    def __init__(self, problem_id, config, runs, samples_per_run):
        if runs < 1 or samples_per_run < 1:
            raise ValidationError(f"Problem {problem_id}: evaluation needs runs >= 1 and samples_per_run >= 1")
        self.problem_id = problem_id
        self.config = config
        self.runs = runs
        self.samples_per_run = samples_per_run

    def to_record(self):
        return {
            "problem_id": self.problem_id,
            "config": list(self.config.kp_indices),
            "runs": self.runs,
            "samples_per_run": self.samples_per_run,
        }

    @classmethod
    def from_record(cls, record):
        return cls(
            problem_id=str(record["problem_id"]),
            config=Configuration.of(record.get("config", [])),
            runs=int(record["runs"]),
            samples_per_run=int(record["samples_per_run"]),
        )

    def __repr__(self):
        return f"EvaluationRequest({self.problem_id!r}, {self.config}, {self.runs}x{self.samples_per_run})"
