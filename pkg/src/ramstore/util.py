"""Small shared helpers: size parsing, secrets, seeded payloads, file I/O."""

from __future__ import annotations

import json
import os
import random
import secrets
import threading
import time
from pathlib import Path

# Block-size shorthand used by the bench tables: K/M are binary multipliers.
_SIZE_SUFFIXES = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


def parse_size(text: str) -> int:
    """Parse ``4K``/``40M``-style size labels (K/M = 2**10/2**20) or plain bytes."""
    s = text.strip().upper()
    if not s:
        raise ValueError("empty size")
    if s[-1] in _SIZE_SUFFIXES:
        number, mult = s[:-1], _SIZE_SUFFIXES[s[-1]]
    else:
        number, mult = s, 1
    value = int(number)
    if value <= 0:
        raise ValueError(f"size must be positive: {text!r}")
    return value * mult


def format_size(nbytes: int) -> str:
    """Inverse of parse_size for whole multiples; falls back to plain bytes."""
    for suffix in ("G", "M", "K"):
        mult = _SIZE_SUFFIXES[suffix]
        if nbytes % mult == 0 and nbytes >= mult:
            return f"{nbytes // mult}{suffix}"
    return str(nbytes)


def new_secret() -> str:
    """32 random bytes rendered as 64 hex characters."""
    return secrets.token_hex(32)


def deterministic_bytes(seed: str, length: int) -> bytes:
    """Reproducible pseudorandom payload for a (seed, length) pair."""
    return random.Random(seed).randbytes(length)


def write_json_atomic(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


class TokenBucket:
    """Byte-rate limiter: acquire(n) blocks until n tokens have accrued."""

    def __init__(self, rate_bytes_per_second: float, burst_bytes: int | None = None):
        if rate_bytes_per_second <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate_bytes_per_second)
        self.burst = float(burst_bytes if burst_bytes is not None else rate_bytes_per_second)
        self._tokens = self.burst
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self, nbytes: int) -> None:
        while nbytes > 0:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
                self._last = now
                take = min(nbytes, int(self._tokens))
                if take > 0:
                    self._tokens -= take
                    nbytes -= take
                if nbytes == 0:
                    break
                shortfall = min(nbytes, self.burst)
                wait = max(shortfall - self._tokens, 1.0) / self.rate
            time.sleep(min(wait, 0.05))
