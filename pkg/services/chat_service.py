# services/chat_service.py
import logging
import os
import threading

import openai
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt, wait_random_exponential

from app_state import file_write_lock
from utils.errors import EndpointError, ValidationError
from utils.file_utils import append_jsonl, iter_jsonl

CHAT_MODES = ("live", "record", "replay")

# Worth another attempt; authentication, bad-request and other 4xx errors are not.
TRANSIENT_ERRORS = (
    openai.APIConnectionError,
    openai.APITimeoutError,
    openai.RateLimitError,
    openai.InternalServerError,
    ConnectionError,
    TimeoutError,
)


def openai_backend(endpoint):
    """send(messages, **params) -> text over an OpenAI-compatible /chat/completions endpoint."""
    api_key = os.environ.get(endpoint.api_key_env_var)
    if not api_key:
        raise EndpointError(f"Environment variable {endpoint.api_key_env_var} is not set")
    client = openai.OpenAI(api_key=api_key, base_url=endpoint.base_url, timeout=endpoint.request_timeout,
                           max_retries=0)

    def send(messages, **params):
        response = client.chat.completions.create(model=endpoint.model_name, messages=messages, **params)
        return response.choices[0].message.content or ""

    return send


class ChatClient:
    """Chat-completion client with retry/backoff and transcript record/replay.

    Every call carries a stable tag (e.g. `solve:<pid>:<attempt>`); replay looks responses up by tag,
    so concurrent evaluation replays deterministically.
    """

    def __init__(self, endpoint, mode="live", transcript_path=None, backend=None, retry_wait=None):
        if mode not in CHAT_MODES:
            raise ValidationError(f"Unknown chat mode '{mode}' (expected one of {', '.join(CHAT_MODES)})")
        if mode != "live" and not transcript_path:
            raise ValidationError(f"Chat mode '{mode}' needs a transcript path")
        self.endpoint = endpoint
        self.mode = mode
        self.transcript_path = transcript_path
        self.retry_wait = retry_wait or wait_random_exponential(multiplier=1, max=60)
        self._backend = backend
        self._backend_lock = threading.Lock()
        self._replay = {}
        if mode == "replay":
            self._load_transcript()

    def _load_transcript(self):
        if not os.path.exists(self.transcript_path):
            raise ValidationError(f"Transcript {self.transcript_path} does not exist")
        try:
            for _, record in iter_jsonl(self.transcript_path):
                self._replay.setdefault(record["tag"], record["response"])
        except (KeyError, ValueError) as e:
            raise ValidationError(f"Transcript {self.transcript_path}: {e}") from e
        logging.info(f"Loaded {len(self._replay)} recorded responses from {self.transcript_path}")

    @property
    def backend(self):
        with self._backend_lock:
            if self._backend is None:
                self._backend = openai_backend(self.endpoint)
            return self._backend

    def request_params(self, temperature=None, top_p=None):
        return {
            "temperature": self.endpoint.temperature if temperature is None else temperature,
            "top_p": self.endpoint.top_p if top_p is None else top_p,
            "max_tokens": self.endpoint.max_tokens,
        }

    def complete(self, prompt, tag, temperature=None, top_p=None):
        """First-choice text for a single-user-message prompt."""
        if self.mode == "replay":
            if tag not in self._replay:
                raise EndpointError(f"No recorded response for request '{tag}'")
            logging.debug(f"SAMPLE replay {tag}")
            return self._replay[tag]

        messages = [{"role": "user", "content": prompt}]
        params = self.request_params(temperature, top_p)
        backend = self.backend
        try:
            for attempt in Retrying(stop=stop_after_attempt(self.endpoint.max_retries + 1), wait=self.retry_wait,
                                    retry=retry_if_exception_type(TRANSIENT_ERRORS)):
                with attempt:
                    text = backend(messages, **params)
        except RetryError as e:
            cause = e.last_attempt.exception()
            logging.error(f"Endpoint request '{tag}' failed after {self.endpoint.max_retries + 1} attempts: {cause}")
            raise EndpointError(f"Request '{tag}' failed: {cause}") from cause
        except openai.APIError as e:
            logging.error(f"Endpoint request '{tag}' rejected: {e}")
            raise EndpointError(f"Request '{tag}' rejected: {e}") from e
        logging.debug(f"SAMPLE {tag}: {len(text)} chars")

        if self.mode == "record":
            record = {
                "tag": tag,
                "request": dict(model=self.endpoint.model_name, messages=messages, **params),
                "response": text,
            }
            with file_write_lock:
                append_jsonl(self.transcript_path, record)
        return text
