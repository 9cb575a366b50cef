from pathlib import Path

import pytest

import dglstm.fixtures

FIXTURES = Path(dglstm.fixtures.__file__).parent


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURES
