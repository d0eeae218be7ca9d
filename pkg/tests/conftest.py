import json
from pathlib import Path

import pytest

import bundlegen as bg
from bundlegen import mockscripts


@pytest.fixture(scope="session")
def fixture_data():
    sessions, catalog, gt = bg.load_dataset(bg.fixture_path())
    return sessions, catalog, gt


@pytest.fixture()
def perfect_script(fixture_data):
    sessions, catalog, gt = fixture_data
    return mockscripts.perfect_oracle_script(sessions, catalog, gt)


def make_client(script: bg.MockScript, name: str = "generator", **kwargs) -> bg.LlmClient:
    """Fresh mock-backed client with its own copy of the script state."""
    provider = bg.MockProvider(bg.MockScript.from_dict(script.to_dict()))
    return bg.LlmClient(provider, name=name, backoff=0.0, **kwargs)


def write_dataset(path: Path, records: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", "utf-8")
    return path
