"""Small shared helpers: rounding, hashing, seeding and atomic file writes."""
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np


def round_half_up(x):
    """Round half away from zero (Python's round() is banker's rounding)."""
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(*parts):
    h = hashlib.sha256()
    for part in parts:
        if not isinstance(part, str):
            part = canonical_json(part)
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def derive_seed(*parts):
    """64-bit seed derived from arbitrary (JSON-serializable) parts."""
    return int(digest(*parts)[:16], 16)


def make_rng(*parts):
    return np.random.default_rng(derive_seed(*parts))


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_root():
    env = os.environ.get("OPENALX_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "openalx"
