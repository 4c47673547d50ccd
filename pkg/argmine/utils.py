import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator

from dotenv import load_dotenv, find_dotenv


# these expect to find a .env file somewhere above the working directory.
# the format for that file is (without the comment)
# OPENAI_API_KEY=AStringThatIsTheLongAPIKeyFromSomeService
def load_env():
    _ = load_dotenv(find_dotenv(usecwd=True))


def get_api_key(env_name: str = "OPENAI_API_KEY"):
    load_env()
    return os.getenv(env_name)


def canonical_json(record: Any) -> str:
    """One JSON document with sorted keys and no incidental whitespace."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path: Path, records: Iterable[Any]) -> str:
    """Write one JSON object per line (sorted keys) and return the file's sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [canonical_json(r) + "\n" for r in records]
    payload = "".join(lines).encode("utf-8")
    path.write_bytes(payload)
    return hashlib.sha256(payload).hexdigest()


def read_jsonl(path: Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def digest(*parts: Any) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(canonical_json(part).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def derive_seed(seed: int, name: str) -> int:
    """Deterministic per-subsystem seed derived from the run seed."""
    raw = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(raw[:4], "big") & 0x7FFFFFFF


def count_words(text: str) -> int:
    # str.split() with no argument splits on Unicode whitespace
    return len(text.split())

