# src/core/config.py
import os
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

ENV_PREFIX = "BIBAGENT_"

# Stage → model defaults. Treated as configuration, never hard-wired in stages.
DEFAULT_STAGE_MODELS: Dict[str, str] = {
    "dpcm": "gpt-4o-2024-08-06",
    "icsv": "gpt-4o-2024-08-06",
    "icsv/cluster": "gpt-4o-2025-08-06",
    "acsv/lrm": "gemini-2.5-pro",
    "taxonomy": "gpt-4o-2024-08-06",
    "grader": "gpt-4o-2024-08-06",
    "baseline": "gpt-4o-2024-08-06",
    "nli": "MoritzLaurer/DeBERTa-v3-large-mnli-fever-anli-ling-wanli",
    "rerank": "cross-encoder/ms-marco-MiniLM-L6-v2",
    "embedding": "sentence-transformers/all-MiniLM-L6-v2",
}


class BackendSettings(BaseModel):
    id: str
    kind: Literal["stub", "openai", "hf"] = "stub"
    model: Optional[str] = None
    base_url: Optional[str] = None
    fixtures_dir: Optional[str] = None
    vision: bool = False

    @field_validator("id")
    @classmethod
    def _id_is_env_safe(cls, v: str) -> str:
        if not v or not v.replace("-", "_").replace("_", "").isalnum():
            raise ValueError("backend id must be alphanumeric (dashes/underscores allowed)")
        return v

    @property
    def api_key_env(self) -> str:
        return f"{ENV_PREFIX}BACKEND_{self.id.upper().replace('-', '_')}_KEY"

    def api_key(self) -> Optional[str]:
        return os.getenv(self.api_key_env)


class GatewaySettings(BaseModel):
    backends: List[BackendSettings] = Field(
        default_factory=lambda: [BackendSettings(id="stub", kind="stub", vision=True)]
    )
    generation: str = "stub"
    embedding: str = "stub"
    nli: str = "stub"
    rerank: str = "stub"
    stage_models: Dict[str, str] = Field(default_factory=lambda: dict(DEFAULT_STAGE_MODELS))
    max_parallel: int = Field(default=8, ge=1)
    retry_attempts: int = Field(default=3, ge=1)
    backoff_seconds: float = Field(default=0.5, ge=0.0)
    cache_dir: Optional[str] = "cache"
    force_cache_on: List[str] = Field(default_factory=list)
    force_cache_off: List[str] = Field(default_factory=list)

    def backend(self, backend_id: str) -> BackendSettings:
        for b in self.backends:
            if b.id == backend_id:
                return b
        raise KeyError(backend_id)

    def model_for(self, call_tag: str) -> Optional[str]:
        """Longest configured prefix of the call tag wins: 'icsv/cluster' beats 'icsv'."""
        best = None
        for prefix, model in self.stage_models.items():
            if call_tag == prefix or call_tag.startswith(prefix + "/"):
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, model)
        return best[1] if best else None
