# app_state.py
import threading

# Global state shared by worker threads; every structure here has its own lock.

# Single-flight table for provider requests.
# Format: {(store_id, problem_id, config_key): {'event': threading.Event, 'error': Exception or None}}
inflight_requests = {}
inflight_lock = threading.Lock()  # Lock to protect 'inflight_requests'

# Serialises file appends (write-through rollouts, raw sample records, transcripts).
file_write_lock = threading.Lock()
