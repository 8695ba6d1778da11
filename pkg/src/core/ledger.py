import fnmatch
import threading
from dataclasses import dataclass
from typing import List, Optional

from src.core.models import TokenUsage


@dataclass(frozen=True)
class LedgerRow:
    call_tag: str
    kind: str  # generation | embedding | rerank | nli
    input_tokens: int
    output_tokens: int
    scope: Optional[str] = None


class TokenLedger:
    """Append-only record of billed backend calls."""

    def __init__(self):
        self._rows: List[LedgerRow] = []
        self._lock = threading.Lock()

    def record(self, row: LedgerRow):
        if row.input_tokens < 0 or row.output_tokens < 0:
            raise ValueError("token counts are never negative")
        with self._lock:
            self._rows.append(row)

    def rows(self) -> List[LedgerRow]:
        with self._lock:
            return list(self._rows)

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def report(self, pattern: str = "*", kind: Optional[str] = None, scope: Optional[str] = None) -> TokenUsage:
        inp = 0
        out = 0
        for row in self.rows():
            if not fnmatch.fnmatchcase(row.call_tag, pattern):
                continue
            if kind is not None and row.kind != kind:
                continue
            if scope is not None and row.scope != scope:
                continue
            inp += row.input_tokens
            out += row.output_tokens
        return TokenUsage(input_tokens=inp, output_tokens=out, call_tag=pattern)


class ScopeMeter:
    """Logical usage of one task, cache hits included, so bundles do not depend on cache state."""

    def __init__(self, name: str):
        self.name = name
        self._rows: List[LedgerRow] = []
        self._lock = threading.Lock()

    def add(self, row: LedgerRow):
        with self._lock:
            self._rows.append(row)

    def usage(self, pattern: str = "*", kind: Optional[str] = None) -> TokenUsage:
        inp = out = 0
        with self._lock:
            rows = list(self._rows)
        for row in rows:
            if fnmatch.fnmatchcase(row.call_tag, pattern) and (kind is None or row.kind == kind):
                inp += row.input_tokens
                out += row.output_tokens
        return TokenUsage(input_tokens=inp, output_tokens=out, call_tag=pattern)

    def calls(self, pattern: str = "*", kind: Optional[str] = None) -> int:
        with self._lock:
            return sum(
                1 for r in self._rows
                if fnmatch.fnmatchcase(r.call_tag, pattern) and (kind is None or r.kind == kind)
            )
