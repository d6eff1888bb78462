from __future__ import annotations

import subprocess
import sys

import pytest

from tests.python.utils import subprocess_env


def _run(*args: str) -> subprocess.CompletedProcess[str]:
    return subprocess.run(
        [sys.executable, "-m", "lensbench", *args],
        capture_output=True,
        text=True,
        env=subprocess_env(),
    )


@pytest.mark.parametrize("args", [["--version"], ["--help"]])
def test_python_m_lensbench_executes(args):
    result = _run(*args)
    assert result.returncode == 0, f"stdout: {result.stdout}\nstderr: {result.stderr}"
    assert len(result.stdout) > 0, "Expected output on stdout"


def test_python_m_lensbench_version_output():
    result = _run("--version")
    assert result.returncode == 0
    assert "lensbench" in result.stdout.lower(), (
        f"Expected 'lensbench' in output, got: {result.stdout}"
    )


def test_python_m_lensbench_help_output():
    result = _run("--help")
    assert result.returncode == 0
    output_lower = result.stdout.lower()
    assert "usage" in output_lower or "help" in output_lower, (
        f"Expected help text, got: {result.stdout}"
    )


def test_python_m_lensbench_invalid_arg_returns_error():
    result = _run("--nonexistent-flag-xyz")
    assert result.returncode != 0


def test_python_m_lensbench_bad_replay_input(tmp_path):
    path = tmp_path / "scores.csv"
    path.write_text("not,a,score,file\n", encoding="utf-8")
    result = _run("--out", str(tmp_path), "replay", str(path))
    assert result.returncode == 3
    assert "error" in result.stderr
