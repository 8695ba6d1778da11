# src/config.py
"""
Run configuration: JSON file, then BIBAGENT_* environment variables, then CLI flags.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError

from src.core.config import ENV_PREFIX, GatewaySettings
from src.core.errors import ConfigError
from src.verification.acsv import FunnelConfig
from src.verification.icsv.consensus import K_MIN
from src.verification.pipeline import VerificationConfig
from src.verification.taxonomy import LabelerConfig


class CommitteeConfig(BaseModel):
    k_min: int = Field(default=K_MIN, ge=1)
    reference_stats: Optional[str] = None


class MetadataConfig(BaseModel):
    kind: Literal["fixture", "openalex"] = "fixture"
    fixtures_dir: Optional[str] = None


class RunConfig(BaseModel):
    inputs: List[str] = Field(default_factory=list)
    bib_path: Optional[str] = None
    gateway: GatewaySettings = Field(default_factory=GatewaySettings)
    funnel: FunnelConfig = Field(default_factory=FunnelConfig)
    committee: CommitteeConfig = Field(default_factory=CommitteeConfig)
    labeler: LabelerConfig = Field(default_factory=LabelerConfig)
    metadata: MetadataConfig = Field(default_factory=MetadataConfig)
    cache_dir: Optional[str] = "cache"
    out: str = "out"
    seed: int = 0
    max_parallel: int = Field(default=8, ge=1)
    route: Literal["auto", "accessible", "inaccessible"] = "auto"
    log_level: str = "INFO"
    log_json: bool = False

    def verification(self) -> VerificationConfig:
        return VerificationConfig(
            route=self.route, seed=self.seed, funnel=self.funnel, labeler=self.labeler, k_min=self.committee.k_min,
        )

    def gateway_settings(self) -> GatewaySettings:
        return self.gateway.model_copy(update={"cache_dir": self.cache_dir, "max_parallel": self.max_parallel})


# environment variable → top-level field
ENV_FIELDS = {
    "SEED": "seed",
    "MAX_PARALLEL": "max_parallel",
    "CACHE_DIR": "cache_dir",
    "OUT": "out",
    "ROUTE": "route",
    "LOG_LEVEL": "log_level",
}


def _field_paths(err: ValidationError) -> List[str]:
    return [".".join(str(p) for p in e["loc"]) or "<root>" for e in err.errors()]


def _merge(base: Dict[str, Any], overlay: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in overlay.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def env_overrides(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    return {
        field: environ[f"{ENV_PREFIX}{name}"]
        for name, field in ENV_FIELDS.items()
        if environ.get(f"{ENV_PREFIX}{name}") not in (None, "")
    }


def load_run_config(
    path: Optional[str] = None,
    cli: Optional[Dict[str, Any]] = None,
    environ: Optional[Dict[str, str]] = None,
    backend_path: Optional[str] = None,
) -> RunConfig:
    data: Dict[str, Any] = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file {path} not found", ["config"]) from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}", ["config"]) from e
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object", ["<root>"])
    if backend_path:
        try:
            data = _merge(data, {"gateway": json.loads(Path(backend_path).read_text(encoding="utf-8"))})
        except (FileNotFoundError, json.JSONDecodeError) as e:
            raise ConfigError(f"backend config {backend_path} unreadable: {e}", ["backend"]) from e

    data = _merge(data, env_overrides(environ))
    data = _merge(data, {k: v for k, v in (cli or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid run configuration", _field_paths(e)) from e
