# models/accuracy_table.py
from fractions import Fraction

from models.configuration import Configuration
from utils.errors import NotEvaluatedError, ValidationError


class AccuracyTable:
    """Per-problem record of per-run correct counts for each evaluated configuration.

    Accuracies are kept as exact fractions internally so that threshold
    comparisons (ε, δ) are not subject to float rounding; the float accessors
    are for reporting.
    """

    def __init__(self, problem_id, n_kps, runs=8, samples_per_run=32, cells=None):
        if runs < 1 or samples_per_run < 1:
            raise ValidationError(f"Problem {problem_id}: runs and samples_per_run must be >= 1")
        if n_kps < 0:
            raise ValidationError(f"Problem {problem_id}: n_kps must be >= 0")
        self.problem_id = problem_id
        self.n_kps = n_kps
        self.runs = runs
        self.samples_per_run = samples_per_run
        self._cells = {}
        for config, counts in (cells or {}).items():
            self.add_cell(config, counts)

    @property
    def cells(self):
        return dict(self._cells)

    @property
    def empty(self):
        return Configuration.empty()

    @property
    def full(self):
        return Configuration.full(self.n_kps)

    def leave_one_out(self, index):
        return self.full.without([index])

    def add_cell(self, config, counts):
        """Store a cell. Only the rollout store should call this on a shared table."""
        if not config.is_subset_of(self.n_kps):
            raise ValidationError(f"Problem {self.problem_id}: configuration {config} outside [0, {self.n_kps})")
        counts = tuple(int(c) for c in counts)
        if len(counts) != self.runs:
            raise ValidationError(
                f"Problem {self.problem_id}, config {config}: expected {self.runs} run counts, got {len(counts)}"
            )
        for count in counts:
            if count < 0 or count > self.samples_per_run:
                raise ValidationError(
                    f"Problem {self.problem_id}, config {config}: count {count} outside [0, {self.samples_per_run}]"
                )
        self._cells[config] = counts

    def has(self, config):
        return config in self._cells

    def missing(self, configs):
        return [c for c in configs if c not in self._cells]

    def counts(self, config):
        try:
            return self._cells[config]
        except KeyError:
            raise NotEvaluatedError(self.problem_id, [config]) from None

    def require(self, configs):
        missing = self.missing(configs)
        if missing:
            raise NotEvaluatedError(self.problem_id, missing)

    def pooled_fraction(self, config):
        return Fraction(sum(self.counts(config)), self.runs * self.samples_per_run)

    def pooled_accuracy(self, config):
        return float(self.pooled_fraction(config))

    def run_fractions(self, config):
        return [Fraction(c, self.samples_per_run) for c in self.counts(config)]

    def run_accuracy(self, config, run):
        return float(Fraction(self.counts(config)[run], self.samples_per_run))

    def variance_fraction(self, config):
        # Population variance: divide by runs, not runs - 1.
        values = self.run_fractions(config)
        mean = sum(values, Fraction(0)) / len(values)
        return sum(((v - mean) ** 2 for v in values), Fraction(0)) / len(values)

    def run_variance(self, config):
        return float(self.variance_fraction(config))

    def loo_configs(self):
        return [self.empty, self.full] + [self.leave_one_out(i) for i in range(self.n_kps)]

    def a_max_fraction(self):
        """max_i A_{-i}; None when the problem has no KPs."""
        if self.n_kps == 0:
            return None
        return max(self.pooled_fraction(self.leave_one_out(i)) for i in range(self.n_kps))

    def to_records(self):
        return [
            {
                "problem_id": self.problem_id,
                "config": list(config.kp_indices),
                "run_counts": list(counts),
                "samples_per_run": self.samples_per_run,
            }
            for config, counts in sorted(self._cells.items(), key=lambda item: item[0].sort_key())
        ]

    def __eq__(self, other):
        if not isinstance(other, AccuracyTable):
            return NotImplemented
        return (
            self.problem_id == other.problem_id
            and self.n_kps == other.n_kps
            and self.runs == other.runs
            and self.samples_per_run == other.samples_per_run
            and self._cells == other._cells
        )

    def __repr__(self):
        return (
            f"AccuracyTable(problem_id={self.problem_id!r}, n_kps={self.n_kps}, runs={self.runs}, "
            f"samples_per_run={self.samples_per_run}, cells={len(self._cells)})"
        )


def pooled_accuracy(table, config):
    return table.pooled_accuracy(config)


def run_variance(table, config):
    return table.run_variance(config)
