# utils/validation.py


def validate_probability_interval(name, value, low_open=False):
    """(True, None) when value lies in [0,1] (or (0,1] with low_open)."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        return False, f"{name} must be a number."
    if low_open and not (0.0 < value <= 1.0):
        return False, f"{name} must lie in (0, 1]."
    if not low_open and not (0.0 <= value <= 1.0):
        return False, f"{name} must lie in [0, 1]."
    return True, None


def validate_positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int):
        return False, f"{name} must be an integer."
    if value < minimum:
        return False, f"{name} must be >= {minimum}."
    return True, None


def validate_bucket_edges(edges):
    """Edges must start at 0, end at 1 and be strictly increasing so they partition [0, 1]."""
    if not edges or len(edges) < 2:
        return False, "bucket_edges needs at least two values."
    try:
        values = [float(e) for e in edges]
    except (TypeError, ValueError):
        return False, "bucket_edges must be numbers."
    if values[0] != 0.0 or values[-1] != 1.0:
        return False, "bucket_edges must start at 0 and end at 1."
    if any(b <= a for a, b in zip(values, values[1:])):
        return False, "bucket_edges must be strictly increasing."
    return True, None


def validate_endpoint_config(endpoint):
    checks = [
        validate_probability_interval("endpoint.temperature", endpoint.temperature, low_open=True),
        validate_probability_interval("endpoint.top_p", endpoint.top_p, low_open=True),
        validate_positive_int("endpoint.max_retries", endpoint.max_retries, minimum=0),
        validate_positive_int("endpoint.max_tokens", endpoint.max_tokens),
    ]
    if not endpoint.base_url:
        checks.append((False, "endpoint.base_url cannot be empty."))
    if not endpoint.model_name:
        checks.append((False, "endpoint.model_name cannot be empty."))
    if endpoint.request_timeout <= 0:
        checks.append((False, "endpoint.request_timeout must be positive."))
    for ok, message in checks:
        if not ok:
            return False, message
    return True, None


def validate_cli_config(cfg):
    checks = [
        validate_positive_int("runs", cfg.runs),
        validate_positive_int("samples_per_run", cfg.samples_per_run),
        validate_probability_interval("epsilon", cfg.epsilon),
        validate_probability_interval("delta", cfg.delta),
        validate_positive_int("enumeration_cap", cfg.enumeration_cap, minimum=0),
        validate_positive_int("exhaustive_cap", cfg.exhaustive_cap, minimum=0),
        validate_positive_int("paradox_subset_cap", cfg.paradox_subset_cap),
        validate_positive_int("parallelism", cfg.parallelism),
        validate_bucket_edges(cfg.bucket_edges),
        validate_probability_interval("injection_threshold", cfg.injection_threshold),
        validate_endpoint_config(cfg.endpoint),
    ]
    for ok, message in checks:
        if not ok:
            return False, message
    return True, None
