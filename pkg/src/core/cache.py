import hashlib
import json
import os
import tempfile
import threading
from typing import Any, Optional

CACHE_DIR = "cache"

_write_lock = threading.Lock()


def ensure_dir(path: str):
    os.makedirs(path, exist_ok=True)


def content_key(payload: Any) -> str:
    """sha256 over a canonical JSON rendering of the payload."""
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cache_path(key: str, folder: str, root: Optional[str] = None) -> str:
    base = os.path.join(root or CACHE_DIR, folder)
    ensure_dir(base)
    return os.path.join(base, f"{key}.json")


def load_cache(key: str, folder: str, root: Optional[str] = None) -> Optional[Any]:
    path = cache_path(key, folder, root)
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        return None


def save_cache(key: str, folder: str, data: Any, root: Optional[str] = None):
    path = cache_path(key, folder, root)
    # temp file + rename so concurrent readers never see half a file
    with _write_lock:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
