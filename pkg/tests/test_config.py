import json

import pytest

from src.config import RunConfig, env_overrides, load_run_config
from src.core.errors import ConfigError


def test_defaults():
    config = load_run_config(environ={})
    assert config == RunConfig()
    assert config.route == "auto"
    assert config.verification().k_min == 6
    assert config.gateway_settings().cache_dir == "cache"


def test_file_then_env_then_cli(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 1, "out": "from-file", "funnel": {"top_k": 20}}), encoding="utf-8")
    environ = {"BIBAGENT_SEED": "2", "BIBAGENT_OUT": "from-env"}

    config = load_run_config(str(path), cli={"seed": 3, "out": None}, environ=environ)
    assert config.seed == 3
    assert config.out == "from-env"
    assert config.funnel.top_k == 20
    assert config.funnel.focus_n == 3


def test_env_ignores_blank_values():
    assert env_overrides({"BIBAGENT_SEED": "", "BIBAGENT_ROUTE": "inaccessible", "OTHER": "x"}) == {
        "route": "inaccessible"
    }


def test_backend_file_merges_into_gateway(tmp_path):
    backend = tmp_path / "backend.json"
    backend.write_text(json.dumps({"retry_attempts": 5, "backends": [{"id": "stub", "kind": "stub"}]}))
    config = load_run_config(backend_path=str(backend), cli={"cache_dir": "c", "max_parallel": 2}, environ={})
    settings = config.gateway_settings()
    assert settings.retry_attempts == 5
    assert (settings.cache_dir, settings.max_parallel) == ("c", 2)


def test_nested_sections_flow_into_verification():
    config = load_run_config(cli={"committee": {"k_min": 4}, "labeler": {"samples": 3}, "route": "accessible"},
                             environ={})
    verification = config.verification()
    assert (verification.k_min, verification.labeler.samples, verification.route) == (4, 3, "accessible")


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError) as err:
        load_run_config(cli={"max_parallel": 0, "funnel": {"top_k": 1}}, environ={})
    assert "max_parallel" in err.value.fields
    assert any(f.startswith("funnel") for f in err.value.fields)


@pytest.mark.parametrize("content", [None, "{not json", "[1, 2]"])
def test_unreadable_config_file(tmp_path, content):
    path = tmp_path / "run.json"
    if content is not None:
        path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(path), environ={})
