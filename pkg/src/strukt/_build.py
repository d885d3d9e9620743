"""Toolkit identity: version plus a hash of the installed sources."""

from functools import lru_cache
import hashlib
from pathlib import Path

from . import __version__


@lru_cache(maxsize=1)
def build_hash() -> str:
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def implementation_id() -> str:
    return f"strukt-{__version__}+{build_hash()[:16]}"
