# SPDX-License-Identifier: Apache-2.0
import os
import pathlib

import pytest


@pytest.fixture(scope="session")
def source_dir():
    return pathlib.Path(os.environ.get("MVP_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))


@pytest.fixture(scope="session")
def seed_templates(source_dir):
    return source_dir / "data" / "templates" / "seed_templates.json"
