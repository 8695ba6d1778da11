import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple

PROMPT_DIR = Path(__file__).resolve().parent.parent / "prompts"

_FIELD = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: int
    system: str
    user: str

    def render(self, **fields) -> Tuple[str, str]:
        """Fill {name} placeholders. Unknown placeholders and JSON braces are left alone."""

        def sub(m: re.Match) -> str:
            key = m.group(1)
            return str(fields[key]) if key in fields else m.group(0)

        return _FIELD.sub(sub, self.system), _FIELD.sub(sub, self.user)


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptTemplate:
    path = PROMPT_DIR / f"{name}.txt"
    raw = path.read_text(encoding="utf-8")
    header, _, body = raw.partition("\n")
    m = re.match(r"#\s*version:\s*(\d+)", header)
    if not m:
        raise ValueError(f"prompt asset {name} lacks a version header")

    system, user = "", ""
    section = None
    lines = {"system": [], "user": []}
    for line in body.splitlines():
        marker = re.match(r"^=== (system|user) ===$", line)
        if marker:
            section = marker.group(1)
            continue
        if section:
            lines[section].append(line)
    system = "\n".join(lines["system"]).strip()
    user = "\n".join(lines["user"]).strip()
    return PromptTemplate(name=name, version=int(m.group(1)), system=system, user=user)
