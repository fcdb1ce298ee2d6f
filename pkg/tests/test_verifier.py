import json
import time

import pytest

from contractloop.config import VerifierLimits
from contractloop.contracts import AnnotatedSource
from contractloop.verifier import (
    DIAGNOSTIC_CAP,
    CheckerAdapter,
    CheckReport,
    Counterexample,
    EvidenceBundle,
    PathStats,
    ToolCrash,
    VerificationStatus,
    classify_outcome,
    compute_path_stats,
    count_test_functions,
    diagnostic_context,
    extract_counterexamples,
    probe,
    run_check,
    run_cover,
)

from conftest import ANNOTATED, GOLDEN, TIGHT_LIMITS, absolute_with

EXPECTED = json.loads((GOLDEN / "expected.json").read_text())
CASES = sorted(k for k in EXPECTED if not k.startswith("_"))
WRONG = "    @ensure(lambda num, result: result == num)\n"


def golden(case: str) -> dict:
    d = GOLDEN / case
    return {
        "input": (d / "input.py").read_text(),
        "stdout": (d / "stdout.txt").read_text(),
        "stderr": (d / "stderr.txt").read_text(),
        "exit_code": int((d / "exit_code.txt").read_text()),
        "timed_out": (d / "timed_out.txt").read_text().strip().lower() == "true",
    }


@pytest.mark.parametrize("case", CASES)
def test_golden_capture_field_for_field(case):
    g, want = golden(case), EXPECTED[case]
    annotated = AnnotatedSource.from_text(g["input"])
    cxs = extract_counterexamples(g["stdout"], annotated.contracts)
    stats = compute_path_stats(g["stderr"])
    status = classify_outcome(cxs, g["timed_out"], stats.unknown_paths)

    assert status.value == want["status"]
    assert stats == PathStats(want["confirmed"], want["unknown"], True)
    assert g["timed_out"] is want["timed_out"]
    assert len(cxs) == len(want["counterexamples"])
    for got, exp in zip(cxs, want["counterexamples"]):
        assert got.failing_call == exp["failing_call"]
        assert got.message == exp["message"]
        assert got.location == exp["location"]
        assert got.violated_contract is not None
        assert got.violated_contract.predicate_text == exp["violated"]
    # The report type accepts exactly the classified combination.
    CheckReport(status, tuple(cxs), stats, g["timed_out"])


def test_counterexamples_are_deduplicated_and_ignore_non_call_errors():
    out = (
        "/tmp/x/absolute.py:7: error: false when calling absolute(Absolute(), -1) (which returns 1)\n"
        "/tmp/x/absolute.py:7: error: false when calling absolute(Absolute(), -1) (which returns 1)\n"
        "/tmp/x/absolute.py:3: error: NameError: name 'ensure' is not defined\n"
        "C:\\x\\absolute.py:8: error: false when calling absolute(Absolute(), -5)\n"
    )
    cxs = extract_counterexamples(out)
    assert [c.failing_call for c in cxs] == ["absolute(Absolute(), -1)", "absolute(Absolute(), -5)"]
    assert [c.location for c in cxs] == ["absolute.py:7", "absolute.py:8"]
    assert cxs[0].violated_contract is None


def test_failing_call_must_be_nonempty():
    with pytest.raises(ValueError):
        Counterexample("", "msg")


def test_classification_table():
    cx = (Counterexample("f(1)", "false when calling f(1)"),)
    assert classify_outcome(cx, False) is VerificationStatus.REFUTED
    assert classify_outcome(cx, True) is VerificationStatus.REFUTED
    assert classify_outcome((), True) is VerificationStatus.INCONCLUSIVE
    assert classify_outcome((), False, unknown_paths=3) is VerificationStatus.INCONCLUSIVE
    assert classify_outcome((), False) is VerificationStatus.PASSED


def test_report_invariants():
    cx = (Counterexample("f(1)", "m"),)
    with pytest.raises(ValueError):
        CheckReport(VerificationStatus.REFUTED)
    with pytest.raises(ValueError):
        CheckReport(VerificationStatus.PASSED, cx)
    with pytest.raises(ValueError):
        CheckReport(VerificationStatus.PASSED, timed_out=True)
    with pytest.raises(ValueError):
        CheckReport(VerificationStatus.INCONCLUSIVE)
    CheckReport(VerificationStatus.INCONCLUSIVE, timed_out=True)


def test_path_stats_parse_flag():
    assert compute_path_stats("").parsed
    assert not compute_path_stats("something unrelated\n").parsed
    stats = compute_path_stats(
        "Verification status: CONFIRMED\nVerification status: UNKNOWN\nAborted calltree search with UNKNOWN\n"
    )
    assert stats == PathStats(1, 2, True)


def test_diagnostic_context_is_capped_and_basenamed():
    out = "".join(f"/deep/dir/t.py:{i}: error: false when calling f({i})\n" for i in range(500))
    ctx = diagnostic_context(out)
    assert len(ctx) == DIAGNOSTIC_CAP
    assert "/deep/dir" not in ctx and ctx.startswith("t.py:0:")


def test_evidence_bundle_render(canonical_absolute):
    g = golden("absolute_refuted")
    annotated = AnnotatedSource.from_text(g["input"])
    cxs = tuple(extract_counterexamples(g["stdout"], annotated.contracts))
    report = CheckReport(VerificationStatus.REFUTED, cxs, raw_stdout=g["stdout"])
    text = EvidenceBundle.from_report(report, 1).render()
    assert "absolute(Absolute(), -1)" in text
    assert "@ensure(lambda num, result: result == num)" in text
    assert "<workdir>" not in text
    with pytest.raises(ValueError):
        EvidenceBundle((), "", 1)


def test_count_test_functions():
    src = "def test_a():\n    pass\n\ndef test_b():\n    pass\n\ndef helper():\n    pass\n"
    assert count_test_functions(src) == 2
    assert count_test_functions("def test_a(:\ndef test_b():\n") == 2


def test_adapter_argv_uses_probed_spellings():
    flags = {
        mode: {
            "analysis_kind": "--analysis-kind",
            "verbose": "-v",
            "example_output_format": "--example-output-format",
            "per_condition_timeout": "--pct",
            "per_path_timeout": "--ppt",
            "max_uninteresting_iterations": "--mui",
        }
        for mode in ("check", "cover")
    }
    adapter = CheckerAdapter(("crosshair",), flags)
    argv = adapter.argv("check", VerifierLimits(60, 30, 10, 64), "t.py")
    assert argv == ["crosshair", "check", "--analysis-kind", "icontract", "-v",
                    "--pct", "30.0", "--ppt", "10.0", "--mui", "64", "t.py"]
    assert adapter.argv("cover", VerifierLimits(), "t.py")[2:4] == ["--example-output-format", "pytest"]


# --- real checker ----------------------------------------------------------------


@pytest.mark.checker
def test_probe_finds_required_flags():
    adapter = probe()
    assert adapter.flags["check"]["analysis_kind"] in ("--analysis_kind", "--analysis-kind")


@pytest.mark.checker
def test_canonical_absolute_passes(canonical_absolute, tmp_path):
    report = run_check(AnnotatedSource.from_text(canonical_absolute), VerifierLimits(), tmp_path, "absolute")
    assert report.status is VerificationStatus.PASSED
    assert report.counterexamples == () and not report.timed_out
    assert report.path_stats.confirmed_paths > 0


@pytest.mark.checker
def test_wrong_postcondition_is_refuted_deterministically(tmp_path):
    annotated = AnnotatedSource.from_text(absolute_with(WRONG))
    calls = set()
    for _ in range(3):
        report = run_check(annotated, VerifierLimits(), tmp_path, "absolute")
        assert report.status is VerificationStatus.REFUTED
        cx = report.counterexamples[0]
        assert cx.violated_contract is not None and cx.violated_contract.predicate_text == "result == num"
        assert cx.location == "absolute.py:7"
        calls.add(cx.failing_call)
    assert calls == {"absolute(Absolute(), -1)"}


@pytest.mark.checker
def test_overall_timeout_kills_checker(tmp_path):
    annotated = AnnotatedSource.from_text((ANNOTATED / "collatz_steps.py").read_text())
    limits = VerifierLimits(overall_timeout_s=3, per_condition_timeout_s=3, per_path_timeout_s=1)
    start = time.monotonic()
    report = run_check(annotated, limits, tmp_path, "collatz_steps")
    assert time.monotonic() - start < 3 + 2 + 5
    assert report.timed_out
    assert report.status is VerificationStatus.INCONCLUSIVE


@pytest.mark.checker
def test_tight_limits_leave_loop_inconclusive(tmp_path):
    annotated = AnnotatedSource.from_text((ANNOTATED / "digit_root.py").read_text())
    report = run_check(annotated, TIGHT_LIMITS, tmp_path, "digit_root")
    assert report.status is VerificationStatus.INCONCLUSIVE
    assert report.path_stats.unknown_paths >= 1 and not report.timed_out


@pytest.mark.checker
def test_crash_without_counterexamples_raises(tmp_path):
    annotated = AnnotatedSource.from_text("import no_such_module_xyz\n\ndef f(x: int) -> int:\n    return x\n")
    with pytest.raises(ToolCrash):
        run_check(annotated, VerifierLimits(), tmp_path, "broken")


@pytest.mark.checker
def test_cover_emits_one_test_per_branch(canonical_absolute, tmp_path):
    suite = run_cover(AnnotatedSource.from_text(canonical_absolute), VerifierLimits(), tmp_path / "w", tmp_path / "out", "absolute")
    assert suite.test_count == 2
    assert suite.path == tmp_path / "out" / "test_absolute.py"
    assert "from absolute import" in suite.source_text or "import absolute" in suite.source_text
