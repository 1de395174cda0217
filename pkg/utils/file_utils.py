# utils/file_utils.py
import hashlib
import json
import logging
import os
import tempfile

HEADER_KIND = "header"


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dumps_canonical(record):
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def iter_jsonl(path):
    """Yields (line_number, record) for every non-blank, non-header line.

    Raises ValueError naming the 1-based line number on malformed JSON.
    """
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"line {line_number}: malformed JSON: {e}") from e
            if not isinstance(record, dict):
                raise ValueError(f"line {line_number}: expected a JSON object")
            if record.get("kind") == HEADER_KIND:
                continue
            yield line_number, record


def header_record(command, config_hash, **extra):
    record = {"kind": HEADER_KIND, "command": command, "config_hash": config_hash}
    record.update(extra)
    return record


def write_jsonl(path, records, header=None):
    """Writes records atomically (temp file + rename) so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".jsonl")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            if header is not None:
                f.write(dumps_canonical(header) + "\n")
            for record in records:
                f.write(dumps_canonical(record) + "\n")
        os.replace(tmp_path, path)
        logging.debug(f"Wrote {path}")
    except Exception as e:
        logging.error(f"Error writing {path}: {e}", exc_info=True)
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def append_jsonl(path, record):
    """Appends one record and fsyncs, so an interrupted process loses nothing already returned."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8", newline="\n") as f:
        f.write(dumps_canonical(record) + "\n")
        f.flush()
        os.fsync(f.fileno())


def write_columns(path, header, rows):
    """Plot-ready whitespace-separated columnar text file."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join("nan" if v is None else str(v) for v in row) + "\n")
