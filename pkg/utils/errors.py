# utils/errors.py


class CurationError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(CurationError):
    pass


class NotEvaluatedError(CurationError):
    """Raised when a configuration has no accuracy cell and nothing may generate one."""

    def __init__(self, problem_id, missing):
        self.problem_id = problem_id
        self.missing = list(missing)
        listed = ", ".join(str(c) for c in self.missing)
        super().__init__(f"Problem {problem_id}: configurations not evaluated: {listed}")


class ConflictError(CurationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(CurationError):
    def __init__(self, problem_id, config, run, message="incomplete run"):
        self.problem_id = problem_id
        self.config = config
        self.run = run
        super().__init__(f"Problem {problem_id}, config {config}, run {run}: {message}")


class CapExceededError(CurationError):
    def __init__(self, what, limit, actual):
        self.limit = limit
        self.actual = actual
        super().__init__(f"{what} is {actual}, above the configured cap of {limit}")


class UnsolvedError(CurationError):
    def __init__(self, problem_id, attempts):
        self.problem_id = problem_id
        self.attempts = attempts
        super().__init__(f"Problem {problem_id}: no correct solution after {attempts} attempts")


class ExtractionParseError(CurationError):
    def __init__(self, message, raw_reply, item=None):
        self.raw_reply = raw_reply
        self.item = item
        super().__init__(message)


class VerdictParseError(CurationError):
    def __init__(self, message, raw_reply):
        self.raw_reply = raw_reply
        super().__init__(message)


class EndpointError(CurationError):
    pass


class PartialRunError(CurationError):
    """Endpoint failure in the middle of an evaluation; `cursor` is the first missing (run, sample)."""

    def __init__(self, problem_id, config, cursor, cause=None):
        self.problem_id = problem_id
        self.config = config
        self.cursor = cursor
        self.cause = cause
        super().__init__(
            f"Problem {problem_id}, config {config}: evaluation interrupted at run {cursor[0]}, "
            f"sample {cursor[1]}: {cause}"
        )


def failure_record(problem_id, error):
    """Machine-readable partial-failure entry."""
    return {"problem_id": problem_id, "error_type": type(error).__name__, "message": str(error)}
