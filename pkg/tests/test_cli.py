import io
import subprocess
import sys

import pytest

from contractloop.cli import EXIT_CODES, main
from contractloop.pipeline import FinalStatus

from conftest import CORPUS, REPLAY


def invoke(argv, env=None):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, env or {}, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def replay_args(tmp_path, fixtures="corpus", target="absolute.py", *extra):
    return [
        "--target", str(CORPUS / target), "--provider", "replay", "--fixtures", str(REPLAY / fixtures),
        "--output-dir", str(tmp_path / "out"), "--log-dir", str(tmp_path / "logs"), *extra,
    ]


def test_exit_code_table():
    assert EXIT_CODES == {FinalStatus.PASSED: 0, FinalStatus.REFUTED: 1,
                          FinalStatus.INCONCLUSIVE: 2, FinalStatus.ERROR: 3}


def test_help_exits_zero():
    code, out, _ = invoke(["--help"])
    assert code == 0 and "--target" in out and "--refine" in out


def test_missing_target_exits_3(tmp_path):
    code, out, err = invoke(["--provider", "replay", "--fixtures", str(REPLAY / "corpus")])
    assert code == 3
    assert "target" in err and out == ""


def test_unknown_flag_exits_3():
    code, _, err = invoke(["--bogus"])
    assert code == 3 and "--bogus" in err


def test_missing_credential_exits_3():
    code, _, err = invoke(["--target", str(CORPUS / "absolute.py"), "--provider", "openai"])
    assert code == 3 and "OPENAI_API_KEY" in err


@pytest.mark.checker
def test_documented_invocation_with_replay(tmp_path):
    code, out, _ = invoke(replay_args(tmp_path, "absolute_refine", "absolute.py", "--refine", "2", "--coverage"))
    assert code == 0
    assert "status:       PASSED" in out
    assert "1 refinement, 2 LLM call(s)" in out
    assert "test stubs:" in out and "(2 tests)" in out
    assert list((tmp_path / "out" / "absolute").glob("*/summary.json"))
    assert list((tmp_path / "logs" / "absolute").glob("*/round01_call01_prompt.txt"))


@pytest.mark.checker
def test_exhausted_refinement_exits_1(tmp_path):
    code, out, _ = invoke(replay_args(tmp_path, "absolute_exhaust", "absolute.py", "--refine", "2"))
    assert code == 1
    assert "REFUTED (round_cap)" in out
    assert "absolute(Absolute(), -1)" in out


@pytest.mark.checker
def test_inconclusive_exits_2(tmp_path):
    code, out, _ = invoke(replay_args(
        tmp_path, "corpus", "digit_root.py",
        "--check-timeout-s", "10", "--check-per-condition-s", "1", "--check-per-path-s", "0.5",
    ))
    assert code == 2 and "INCONCLUSIVE" in out


def test_fixture_miss_exits_3(tmp_path):
    code, out, _ = invoke(replay_args(tmp_path, "absolute_exhaust", "max2.py"))
    assert code == 3 and "FixtureMiss" in out


@pytest.mark.checker
def test_no_logs_flag(tmp_path):
    code, out, _ = invoke(replay_args(tmp_path, "corpus", "absolute.py", "--no-logs"))
    assert code == 0
    assert not (tmp_path / "logs").exists()


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "contractloop", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "--target" in proc.stdout
