# services/remote_provider.py
import logging

import httpx

from utils.errors import EndpointError, ValidationError


class RemoteSynthProvider:
    """Generating provider that asks a running `synth serve` instance for counts."""
    generates = True

    def __init__(self, base_url, timeout=30.0, client=None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(base_url=self.base_url, timeout=timeout)

    def evaluate(self, request):
        try:
            response = self._client.post("/api/evaluate", json=request.to_record())
        except httpx.HTTPError as e:
            logging.error(f"Synthetic provider at {self.base_url} unreachable: {e}")
            raise EndpointError(f"Synthetic provider unreachable: {e}") from e
        try:
            payload = response.json()
        except ValueError as e:
            raise EndpointError(f"Synthetic provider returned non-JSON (HTTP {response.status_code})") from e
        if response.status_code == 400:
            raise ValidationError(payload.get("message", "rejected request"))
        if response.status_code != 200 or not payload.get("success"):
            raise EndpointError(f"Synthetic provider error (HTTP {response.status_code}): {payload.get('message')}")
        return [int(c) for c in payload["run_counts"]]

    def close(self):
        self._client.close()
