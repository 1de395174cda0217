# utils/batch.py
import logging
from concurrent.futures import ThreadPoolExecutor

from utils.errors import CurationError, failure_record


def fan_out(problem_ids, work, parallelism=4):
    """Runs work(problem_id) on a bounded pool.

    Returns ({problem_id: result}, [failure records]); failures keep problem-id order
    regardless of worker count.
    """

    def guarded(problem_id):
        try:
            return problem_id, work(problem_id), None
        except CurationError as e:
            logging.warning(f"Problem {problem_id}: {e}")
            return problem_id, None, e
        except Exception as e:
            logging.error(f"Problem {problem_id}: unexpected error: {e}", exc_info=True)
            return problem_id, None, e

    results, failures = {}, []
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as executor:
        for problem_id, result, error in executor.map(guarded, problem_ids):
            if error is None:
                results[problem_id] = result
            else:
                failures.append(failure_record(problem_id, error))
    return results, failures
