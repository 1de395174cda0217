# config.py
import hashlib
import json
import logging
from fractions import Fraction

from utils.errors import ValidationError
from utils.validation import validate_cli_config

# --- Evaluation budget (8 runs x 32 samples per configuration) ---
RUNS = 8
SAMPLES_PER_RUN = 32

# --- Selection ---
EPSILON = "1/32"            # T-LOO tolerance
DELTA = "1/32"              # CBRS near-optimality band
CSS_ENUMERATION_CAP = 16    # max |C|
EXHAUSTIVE_CAP = 12         # max n for the 2^n oracle
PARADOX_SUBSET_CAP = 64     # size-m subsets examined per problem
BUCKET_EDGES = [i / 10 for i in range(11)]
INJECTION_THRESHOLD = 0.9   # hints only when A_empty is below this
SEED = 0
PARALLELISM = 4

# --- Chat-completion endpoint ---
ENDPOINT_BASE_URL = "https://api.openai.com/v1"
ENDPOINT_MODEL_NAME = "deepseek-reasoner"
ENDPOINT_API_KEY_ENV_VAR = "OPENAI_API_KEY"
ENDPOINT_TEMPERATURE = 0.9
ENDPOINT_TOP_P = 0.9
ENDPOINT_MAX_TOKENS = 8192
ENDPOINT_MAX_RETRIES = 3
ENDPOINT_REQUEST_TIMEOUT = 120.0
SOLUTION_MAX_ATTEMPTS = 8

# --- Synthetic provider server ---
SYNTH_SERVE_HOST = "127.0.0.1"
SYNTH_SERVE_PORT = 5000


class EndpointConfig:
    def __init__(self, base_url=ENDPOINT_BASE_URL, model_name=ENDPOINT_MODEL_NAME,
                 api_key_env_var=ENDPOINT_API_KEY_ENV_VAR, temperature=ENDPOINT_TEMPERATURE,
                 top_p=ENDPOINT_TOP_P, max_tokens=ENDPOINT_MAX_TOKENS, max_retries=ENDPOINT_MAX_RETRIES,
                 request_timeout=ENDPOINT_REQUEST_TIMEOUT):
        self.base_url = base_url
        self.model_name = model_name
        self.api_key_env_var = api_key_env_var
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.max_retries = max_retries
        self.request_timeout = request_timeout

    FIELDS = ("base_url", "model_name", "api_key_env_var", "temperature", "top_p",
              "max_tokens", "max_retries", "request_timeout")

    def to_dict(self):
        return {name: getattr(self, name) for name in self.FIELDS}

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.FIELDS)
        if unknown:
            raise ValidationError(f"Unknown endpoint config keys: {sorted(unknown)}")
        return cls(**values)


class CliConfig:
    FIELDS = ("data_dir", "runs", "samples_per_run", "epsilon", "delta", "enumeration_cap",
              "exhaustive_cap", "paradox_subset_cap", "bucket_edges", "injection_threshold",
              "seed", "parallelism", "solution_max_attempts", "log_dir", "endpoint")

    def __init__(self, data_dir="data", runs=RUNS, samples_per_run=SAMPLES_PER_RUN, epsilon=EPSILON,
                 delta=DELTA, enumeration_cap=CSS_ENUMERATION_CAP, exhaustive_cap=EXHAUSTIVE_CAP,
                 paradox_subset_cap=PARADOX_SUBSET_CAP, bucket_edges=None,
                 injection_threshold=INJECTION_THRESHOLD, seed=SEED, parallelism=PARALLELISM,
                 solution_max_attempts=SOLUTION_MAX_ATTEMPTS, log_dir=None, endpoint=None):
        self.data_dir = data_dir
        self.runs = runs
        self.samples_per_run = samples_per_run
        self.epsilon = Fraction(str(epsilon))
        self.delta = Fraction(str(delta))
        self.enumeration_cap = enumeration_cap
        self.exhaustive_cap = exhaustive_cap
        self.paradox_subset_cap = paradox_subset_cap
        self.bucket_edges = list(bucket_edges) if bucket_edges is not None else list(BUCKET_EDGES)
        self.injection_threshold = injection_threshold
        self.seed = seed
        self.parallelism = parallelism
        self.solution_max_attempts = solution_max_attempts
        self.log_dir = log_dir
        self.endpoint = endpoint if endpoint is not None else EndpointConfig()

    def to_dict(self):
        values = {name: getattr(self, name) for name in self.FIELDS if name != "endpoint"}
        values["epsilon"] = str(self.epsilon)
        values["delta"] = str(self.delta)
        values["endpoint"] = self.endpoint.to_dict()
        return values


def load_config(path=None, overrides=None):
    """Config file values, then non-None overrides (flags win); validated."""
    values = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logging.error(f"Error reading config file {path}: {e}")
            raise ValidationError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(values, dict):
            raise ValidationError(f"Config file {path} must hold a JSON object")

    endpoint_values = dict(values.pop("endpoint", {}) or {})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("endpoint."):
            endpoint_values[key.split(".", 1)[1]] = value
        else:
            values[key] = value

    unknown = set(values) - set(CliConfig.FIELDS)
    if unknown:
        raise ValidationError(f"Unknown config keys: {sorted(unknown)}")

    try:
        cfg = CliConfig(endpoint=EndpointConfig.from_dict(endpoint_values), **values)
    except (TypeError, ValueError, ZeroDivisionError) as e:
        raise ValidationError(f"Invalid config value: {e}") from e

    ok, message = validate_cli_config(cfg)
    if not ok:
        raise ValidationError(message)
    return cfg


def config_hash(cfg):
    """SHA-256 of the effective settings; file locations are not part of the hash."""
    values = {k: v for k, v in cfg.to_dict().items() if k not in ("data_dir", "log_dir")}
    payload = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
