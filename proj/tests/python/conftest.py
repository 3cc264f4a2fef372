import os
import subprocess

import pytest


@pytest.fixture
def cli():
    exe = os.environ.get("MRREPARAM_CLI")
    if not exe:
        pytest.skip("MRREPARAM_CLI is not set")

    def run(*args):
        subprocess.run([exe, *map(str, args)], check=True, capture_output=True)

    return run
