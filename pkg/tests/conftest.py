import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engagedetector import config  # noqa: E402


@pytest.fixture(autouse=True)
def isolated_config_dir(tmp_path, monkeypatch):
    """Keeps settings and logs of every test inside its own temporary directory."""
    monkeypatch.setenv(config.CONFIG_DIR_ENV, str(tmp_path / "config"))
    config.reset_settings_cache()
    yield tmp_path / "config"
    config.reset_settings_cache()
