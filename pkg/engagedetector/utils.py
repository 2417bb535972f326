"""
Engagement Detector - Utilities
Logging setup, angle arithmetic, JSON Lines I/O and provenance hashing.
"""

import os
import json
import math
import hashlib
import logging
from logging.handlers import RotatingFileHandler

from . import config

logger = logging.getLogger(__name__)

_HANDLER_TAG = "_engagedetector_handler"


def setup_logging(log_path=None, level=None):
    """Configures root logging with a rotating file handler and a console handler.

    Safe to call more than once: handlers installed by a previous call are
    replaced rather than duplicated.
    """
    level_name = (level or config.get_setting('log_level') or config.LOG_LEVEL).upper()
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level_name, logging.INFO))

    for handler in list(root_logger.handlers):
        if getattr(handler, _HANDLER_TAG, False):
            root_logger.removeHandler(handler)
            handler.close()

    if log_path:
        log_dir = os.path.dirname(os.path.abspath(log_path))
        os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_path,
            maxBytes=config.MAX_LOG_SIZE,
            backupCount=config.MAX_LOG_BACKUPS,
            encoding='utf-8',
        )
        # Include function name in the log format
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s.%(funcName)s - %(levelname)s - %(message)s'
        ))
        setattr(file_handler, _HANDLER_TAG, True)
        root_logger.addHandler(file_handler)

    # Console stays terse; stdout is reserved for command output
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter('%(levelname)s: [%(name)s] %(message)s'))
    setattr(console_handler, _HANDLER_TAG, True)
    root_logger.addHandler(console_handler)

    return root_logger


# --- Angles ---

def wrap_angle(angle):
    """Wraps an angle in radians to (-pi, pi]."""
    return math.pi - ((math.pi - angle) % (2.0 * math.pi))


def circular_mean(a, b):
    """Circular mean of two angles; falls back to `a` when they are opposite."""
    s = math.sin(a) + math.sin(b)
    c = math.cos(a) + math.cos(b)
    if abs(s) < 1e-12 and abs(c) < 1e-12:
        return wrap_angle(a)
    return wrap_angle(math.atan2(s, c))


# --- JSON Lines ---

def read_jsonl(path, parse=None):
    """Reads a JSON Lines file into a list of dicts. Blank lines are skipped.

    With `parse`, each record is converted on the way in; a record of the
    wrong shape raises ValueError naming the file and line.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Stream file not found: {path}")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({e})") from e
            if parse is not None:
                try:
                    record = parse(record)
                except (KeyError, TypeError, ValueError, IndexError, AttributeError) as e:
                    raise ValueError(f"{path}:{line_no}: malformed record ({type(e).__name__}: {e})") from e
            records.append(record)
    logger.debug(f"Read {len(records)} records from {path}")
    return records


def write_jsonl(path, records):
    """Writes dicts as compact, key-sorted JSON Lines (byte-stable output)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            f.write("\n")
            count += 1
    logger.debug(f"Wrote {count} records to {path}")
    return count


# --- Provenance ---

def config_hash(payload):
    """First 12 hex digits of SHA-256 over the key-sorted JSON of `payload`."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]


def file_checksum(path):
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def provenance_header(seed, cfg_hash):
    """The first line every text artifact carries."""
    return f"# {config.APP_NAME} {config.APP_VERSION} seed={seed} config={cfg_hash}"
