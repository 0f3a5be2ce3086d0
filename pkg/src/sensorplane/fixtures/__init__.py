"""Bundled WGB deployment data used by tests, examples and the default config."""

from __future__ import annotations

import os

FIXTURE_DIR = os.path.dirname(os.path.abspath(__file__))


def path(name: str) -> str:
    return os.path.join(FIXTURE_DIR, name)
