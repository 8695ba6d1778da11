# src/evaluation/benchmark.py
import csv
from enum import Enum
from pathlib import Path
from typing import List, Optional

from loguru import logger
from pydantic import BaseModel, ValidationError, field_validator

from src.core.errors import BenchmarkSchemaError
from src.core.models import TaxonomyCode, VerdictLabel

REQUIRED_COLUMNS = (
    "Miscitation",
    "Explanation",
    "Correct Statement",
    "Original Text",
    "Miscite Type",
    "Difficulties",
)
# optional columns
SOURCE_COLUMN = "Source ID"
CONTEXT_COLUMN = "Citing Context"


class Difficulty(str, Enum):
    SURFACE = "SURFACE"
    DEEP = "DEEP"


class BenchmarkInstance(BaseModel):
    instance_id: str
    miscitation_text: str
    explanation: str
    correct_statement: str = ""
    original_text: str
    miscite_type: TaxonomyCode
    difficulty: Difficulty
    source_id: str = ""
    citing_context: str = ""

    @field_validator("miscite_type", mode="before")
    @classmethod
    def _code(cls, v):
        if isinstance(v, TaxonomyCode):
            return v
        return TaxonomyCode.parse(str(v))

    @field_validator("difficulty", mode="before")
    @classmethod
    def _difficulty(cls, v):
        return str(v).strip().upper()

    @field_validator("miscitation_text", "explanation", "original_text")
    @classmethod
    def _not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must not be empty")
        return v.strip()

    @property
    def gold_label(self) -> VerdictLabel:
        return VerdictLabel.MISCITATION

    @property
    def context(self) -> str:
        return self.citing_context or self.miscitation_text


def load_benchmark(path: str) -> List[BenchmarkInstance]:
    """Rows that fail validation are reported together with their CSV row numbers."""
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise BenchmarkSchemaError(f"{path}: missing columns {missing}")

        instances: List[BenchmarkInstance] = []
        bad: List[int] = []
        problems: List[str] = []
        for row_number, raw in enumerate(reader, start=2):
            row = {(k or "").strip(): (v or "") for k, v in raw.items()}
            try:
                instances.append(BenchmarkInstance(
                    instance_id=f"{Path(path).stem}-{row_number - 1}",
                    miscitation_text=row["Miscitation"],
                    explanation=row["Explanation"],
                    correct_statement=row["Correct Statement"].strip(),
                    original_text=row["Original Text"],
                    miscite_type=row["Miscite Type"],
                    difficulty=row["Difficulties"],
                    source_id=row.get(SOURCE_COLUMN, "").strip(),
                    citing_context=row.get(CONTEXT_COLUMN, "").strip(),
                ))
            except (ValidationError, ValueError) as e:
                bad.append(row_number)
                problems.append(f"row {row_number}: {e}")

    if bad:
        for p in problems:
            logger.bind(stage="eval").error(p)
        raise BenchmarkSchemaError(f"{path}: {len(bad)} malformed rows", rows=bad)
    logger.bind(stage="eval").info("loaded {} benchmark instances from {}", len(instances), path)
    return instances


def source_text(instance: BenchmarkInstance, sources_dir: Optional[str] = None) -> str:
    """Full text of the cited paper when available, else the annotated original passage."""
    if sources_dir and instance.source_id:
        candidate = Path(sources_dir) / f"{instance.source_id}.md"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return instance.original_text
