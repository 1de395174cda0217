# utils/log_setup.py
import logging
import logging.handlers
import os
import sys

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class ProviderTrafficFilter(logging.Filter):
    """Keeps per-sample provider traffic (DEBUG lines tagged SAMPLE) off the console."""

    def filter(self, record):
        return not (record.levelno == logging.DEBUG and "SAMPLE" in record.getMessage())


def configure_logging(log_dir=None, level=logging.INFO):
    """Rotating file log plus stderr, installed once on the root logger."""
    root_logger = logging.getLogger()
    if os.environ.get("KPCURATE_DEBUG") == "1":
        level = logging.DEBUG
    root_logger.setLevel(level)

    if getattr(root_logger, "_kpcurate_configured", False):
        return root_logger

    formatter = logging.Formatter(LOG_FORMAT)
    if log_dir:
        try:
            os.makedirs(log_dir, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                filename=os.path.join(log_dir, 'kpcurate.log'),
                maxBytes=10 * 1024 * 1024,  # 10MB per file
                backupCount=5,
                encoding='utf-8'
            )
            file_handler.setLevel(level)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)
        except OSError as e:
            logging.error(f"Could not open log directory {log_dir}: {e}")

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setLevel(level)
    stream_handler.setFormatter(formatter)
    # The log file keeps the per-sample trace; the console only gets progress.
    stream_handler.addFilter(ProviderTrafficFilter())
    root_logger.addHandler(stream_handler)

    root_logger._kpcurate_configured = True
    return root_logger
