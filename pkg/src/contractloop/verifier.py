"""CrossHair subprocess driver.

``crosshair check`` reports counterexamples on stdout as
``<file>:<line>: error: <message> when calling <call> (which returns <value>)``
and, with ``--verbose``, logs one ``Verification status: <STATUS>`` line per
explored path on stderr. A condition whose search stops early (per-condition
timeout, uninteresting-iteration cap) logs ``Aborted calltree search``; that
abandoned search counts as one unknown path, since CrossHair still exits 0.
"""

from __future__ import annotations

import ast
import enum
import functools
import importlib.util
import logging
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .config import VerifierLimits
from .contracts import AnnotatedSource, Contract

log = logging.getLogger(__name__)

# Seconds between the overall timeout and SIGKILL of the checker's process group.
KILL_GRACE_S = 2.0
DIAGNOSTIC_CAP = 2000


class VerifierError(Exception):
    pass


class ToolMissing(VerifierError):
    pass


class ToolCrash(VerifierError):
    def __init__(self, message: str, stdout: str = "", stderr: str = "", exit_code: Optional[int] = None):
        super().__init__(message)
        self.stdout = stdout
        self.stderr = stderr
        self.exit_code = exit_code


class CoverageEmpty(VerifierError):
    pass


class VerificationStatus(str, enum.Enum):
    PASSED = "PASSED"
    REFUTED = "REFUTED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Counterexample:
    failing_call: str
    message: str
    violated_contract: Optional[Contract] = None
    location: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.failing_call:
            raise ValueError("failing_call must be non-empty")


@dataclass(frozen=True)
class PathStats:
    confirmed_paths: int = 0
    unknown_paths: int = 0
    parsed: bool = True


@dataclass(frozen=True)
class CheckReport:
    status: VerificationStatus
    counterexamples: tuple[Counterexample, ...] = ()
    path_stats: PathStats = field(default_factory=PathStats)
    timed_out: bool = False
    wall_time_s: float = 0.0
    raw_stdout: str = ""
    raw_stderr: str = ""
    exit_code: int = 0

    def __post_init__(self) -> None:
        if self.status is VerificationStatus.REFUTED and not self.counterexamples:
            raise ValueError("REFUTED report without counterexamples")
        if self.status is VerificationStatus.PASSED and (
            self.counterexamples or self.timed_out or self.path_stats.unknown_paths > 0
        ):
            raise ValueError("PASSED report with counterexamples, timeout or unknown paths")
        if self.status is VerificationStatus.INCONCLUSIVE and (
            self.counterexamples or not (self.timed_out or self.path_stats.unknown_paths > 0)
        ):
            raise ValueError("INCONCLUSIVE report needs no counterexamples and timeout or unknown paths")


@dataclass(frozen=True)
class EvidenceBundle:
    """What the model sees about a refutation."""

    counterexamples: tuple[Counterexample, ...]
    diagnostic_context: str
    round_index: int

    def __post_init__(self) -> None:
        if not self.counterexamples:
            raise ValueError("evidence needs at least one counterexample")
        if len(self.diagnostic_context) > DIAGNOSTIC_CAP:
            raise ValueError(f"diagnostic_context longer than {DIAGNOSTIC_CAP} characters")

    @classmethod
    def from_report(cls, report: CheckReport, round_index: int) -> "EvidenceBundle":
        return cls(
            counterexamples=report.counterexamples,
            diagnostic_context=diagnostic_context(report.raw_stdout),
            round_index=round_index,
        )

    def render(self) -> str:
        parts = []
        for i, cx in enumerate(self.counterexamples, start=1):
            parts.append(f"Counterexample {i}:")
            parts.append(f"  failing call: {cx.failing_call}")
            parts.append(f"  message: {cx.message}")
            if cx.violated_contract is not None:
                c = cx.violated_contract
                parts.append(f"  violated contract (line {c.lineno}): @{c.kind.value.lower()}({c.condition_text})")
            if cx.location:
                parts.append(f"  location: {cx.location}")
        if self.diagnostic_context:
            parts.append("Checker output:")
            parts.append(self.diagnostic_context)
        return "\n".join(parts)


@dataclass(frozen=True)
class TestStubSuite:
    __test__ = False

    source_text: str
    test_count: int
    path: Optional[Path] = None


_ERROR_LINE = re.compile(r"^(?P<file>.*?):(?P<line>\d+): error: (?P<msg>.*?)\s*$")
_WHEN_CALLING = "when calling "
_CONFIRMED = re.compile(r"Verification status:\s*CONFIRMED\b")
_UNKNOWN = re.compile(r"Verification status:\s*UNKNOWN\b")
_ABORTED = re.compile(r"Aborted calltree search\b")
_VERBOSE_MARKERS = re.compile(r"Verification status:|calltree search|explore_loop\(\)|analyze_calltree\(\)")


def _normalize_path(text: str) -> str:
    return text.replace("\\", "/").rsplit("/", 1)[-1]


def _split_call(message: str) -> str:
    at = message.find(_WHEN_CALLING)
    call = message[at + len(_WHEN_CALLING):].strip()
    returns = call.rfind(" (which returns ")
    if returns > 0 and call.endswith(")"):
        call = call[:returns]
    return call


def extract_counterexamples(output: str, contracts: Iterable[Contract] = ()) -> list[Counterexample]:
    """One :class:`Counterexample` per distinct ``error: ... when calling ...`` line, in order."""
    by_line = {c.lineno: c for c in contracts}
    seen: set[tuple[str, int, str]] = set()
    found: list[Counterexample] = []
    for raw in output.splitlines():
        m = _ERROR_LINE.match(raw)
        if not m or _WHEN_CALLING not in m.group("msg"):
            continue
        filename, line, msg = _normalize_path(m.group("file")), int(m.group("line")), m.group("msg")
        key = (filename, line, msg)
        if key in seen:
            continue
        seen.add(key)
        call = _split_call(msg) or msg
        found.append(
            Counterexample(
                failing_call=call,
                message=msg,
                violated_contract=by_line.get(line),
                location=f"{filename}:{line}",
            )
        )
    return found


def compute_path_stats(verbose_output: str) -> PathStats:
    """Count confirmed and unknown paths in ``crosshair --verbose`` stderr."""
    confirmed = len(_CONFIRMED.findall(verbose_output))
    unknown = len(_UNKNOWN.findall(verbose_output)) + len(_ABORTED.findall(verbose_output))
    parsed = bool(_VERBOSE_MARKERS.search(verbose_output)) or not verbose_output.strip()
    return PathStats(confirmed_paths=confirmed, unknown_paths=unknown, parsed=parsed)


def classify_outcome(counterexamples: Sequence[Counterexample], timed_out: bool, unknown_paths: int = 0) -> VerificationStatus:
    # A counterexample found before the clock ran out is still a refutation.
    if counterexamples:
        return VerificationStatus.REFUTED
    if timed_out or unknown_paths > 0:
        return VerificationStatus.INCONCLUSIVE
    return VerificationStatus.PASSED


def diagnostic_context(stdout: str, cap: int = DIAGNOSTIC_CAP) -> str:
    """Checker stdout with directories removed from file names, cut to ``cap`` characters."""
    lines = []
    for raw in stdout.splitlines():
        m = _ERROR_LINE.match(raw)
        if m:
            raw = f"{_normalize_path(m.group('file'))}:{m.group('line')}: error: {m.group('msg')}"
        lines.append(raw.rstrip())
    return "\n".join(lines).strip()[:cap]


# Flag spellings differ across CrossHair releases; the first one `--help` lists wins.
_FLAG_CANDIDATES = {
    "analysis_kind": ("--analysis_kind", "--analysis-kind"),
    "per_condition_timeout": ("--per_condition_timeout", "--per-condition-timeout"),
    "per_path_timeout": ("--per_path_timeout", "--per-path-timeout"),
    "max_uninteresting_iterations": ("--max_uninteresting_iterations", "--max-uninteresting-iterations"),
    "verbose": ("--verbose", "-v"),
    "example_output_format": ("--example_output_format", "--example-output-format"),
}
_REQUIRED = {
    "check": ("analysis_kind", "per_condition_timeout", "per_path_timeout", "max_uninteresting_iterations", "verbose"),
    "cover": ("example_output_format", "per_condition_timeout", "per_path_timeout", "max_uninteresting_iterations"),
}


@dataclass(frozen=True)
class CheckerAdapter:
    command: tuple[str, ...]
    flags: dict

    def argv(self, mode: str, limits: VerifierLimits, target: str) -> list[str]:
        f = self.flags[mode]
        args = [*self.command, mode]
        if mode == "check":
            args += [f["analysis_kind"], "icontract", f["verbose"]]
        else:
            args += [f["example_output_format"], "pytest"]
        args += [
            f["per_condition_timeout"], _fmt(limits.per_condition_timeout_s),
            f["per_path_timeout"], _fmt(limits.per_path_timeout_s),
            f["max_uninteresting_iterations"], str(limits.max_uninteresting_iterations),
            target,
        ]
        return args


def _fmt(seconds: float) -> str:
    return repr(float(seconds))


def default_command() -> tuple[str, ...]:
    if importlib.util.find_spec("crosshair") is not None:
        return (sys.executable, "-m", "crosshair")
    exe = shutil.which("crosshair")
    if exe is None:
        raise ToolMissing("CrossHair is not installed (pip install crosshair-tool)")
    return (exe,)


@functools.lru_cache(maxsize=8)
def probe(command: Optional[tuple[str, ...]] = None) -> CheckerAdapter:
    """Confirm the installed checker's flag spellings via ``--help``."""
    command = command or default_command()
    flags = {}
    for mode, required in _REQUIRED.items():
        try:
            proc = subprocess.run([*command, mode, "--help"], capture_output=True, text=True, timeout=60)
        except (FileNotFoundError, PermissionError) as exc:
            raise ToolMissing(f"cannot run {' '.join(command)}: {exc}") from exc
        if proc.returncode != 0:
            raise ToolMissing(f"`{' '.join(command)} {mode} --help` failed: {proc.stderr.strip()[:300]}")
        chosen = {}
        for knob in required:
            spelling = next((c for c in _FLAG_CANDIDATES[knob] if re.search(rf"(?<![\w-]){re.escape(c)}\b", proc.stdout)), None)
            if spelling is None:
                raise ToolMissing(f"installed CrossHair `{mode}` lacks a {knob} option")
            chosen[knob] = spelling
        flags[mode] = chosen
    return CheckerAdapter(command=tuple(command), flags=flags)


def _run(argv: list[str], cwd: Path, timeout_s: float) -> tuple[str, str, int, bool, float]:
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=cwd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
            env={**os.environ, "PYTHONDONTWRITEBYTECODE": "1"},
        )
    except (FileNotFoundError, PermissionError) as exc:
        raise ToolMissing(f"cannot start {argv[0]}: {exc}") from exc
    timed_out = False
    try:
        out, err = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        timed_out = True
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, err = proc.communicate()
    wall = time.monotonic() - start
    decode = lambda b: (b or b"").decode("utf-8", errors="replace")  # noqa: E731
    return decode(out), decode(err), proc.returncode, timed_out, wall


def _module_file(workdir: Path, prefix: str, module_name: str, source_text: str) -> Path:
    if not module_name.isidentifier():
        raise ValueError(f"module name {module_name!r} is not a Python identifier")
    Path(workdir).mkdir(parents=True, exist_ok=True)
    rundir = Path(tempfile.mkdtemp(prefix=prefix, dir=workdir))
    path = rundir / f"{module_name}.py"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(source_text)
    return path


def run_check(
    annotated: AnnotatedSource,
    limits: VerifierLimits,
    workdir: Path,
    module_name: str = "target",
    adapter: Optional[CheckerAdapter] = None,
) -> CheckReport:
    """Run ``crosshair check`` on ``annotated`` in a fresh directory under ``workdir``."""
    adapter = adapter or probe()
    path = _module_file(Path(workdir), "check-", module_name, annotated.source_text)
    argv = adapter.argv("check", limits, path.name)
    log.debug("running %s", " ".join(argv))
    stdout, stderr, code, timed_out, wall = _run(argv, path.parent, limits.overall_timeout_s + KILL_GRACE_S)

    counterexamples = tuple(extract_counterexamples(stdout, annotated.contracts))
    if not timed_out and code != 0 and not counterexamples:
        raise ToolCrash(
            f"crosshair check exited {code} without counterexamples: {(stdout + stderr).strip()[-500:]}",
            stdout, stderr, code,
        )
    stats = compute_path_stats(stderr)
    if not stats.parsed:
        log.warning("could not find per-path lines in CrossHair verbose output; path counts are 0")
    return CheckReport(
        status=classify_outcome(counterexamples, timed_out, stats.unknown_paths),
        counterexamples=counterexamples,
        path_stats=stats,
        timed_out=timed_out,
        wall_time_s=wall,
        raw_stdout=stdout,
        raw_stderr=stderr,
        exit_code=code if code is not None else -1,
    )


def count_test_functions(stub_source: str) -> int:
    try:
        tree = ast.parse(stub_source)
    except SyntaxError:
        return len(re.findall(r"^def test_\w*\(", stub_source, flags=re.M))
    return sum(
        isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name.startswith("test")
        for node in ast.walk(tree)
    )


def run_cover(
    annotated: AnnotatedSource,
    limits: VerifierLimits,
    workdir: Path,
    output_dir: Optional[Path] = None,
    module_name: str = "target",
    adapter: Optional[CheckerAdapter] = None,
) -> TestStubSuite:
    """Generate pytest stubs with ``crosshair cover``.

    The stubs import from ``module_name``; when ``output_dir`` is given they are
    written there as ``test_<module_name>.py``.
    """
    adapter = adapter or probe()
    path = _module_file(Path(workdir), "cover-", module_name, annotated.source_text)
    argv = adapter.argv("cover", limits, path.name)
    stdout, stderr, code, timed_out, _ = _run(argv, path.parent, limits.overall_timeout_s + KILL_GRACE_S)
    if not timed_out and code != 0:
        raise ToolCrash(f"crosshair cover exited {code}: {(stdout + stderr).strip()[-500:]}", stdout, stderr, code)
    count = count_test_functions(stdout)
    if count == 0:
        why = "timed out" if timed_out else "produced no tests"
        raise CoverageEmpty(f"crosshair cover {why}")
    stub_path = None
    if output_dir is not None:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        stub_path = Path(output_dir) / f"test_{module_name}.py"
        stub_path.write_text(stdout, encoding="utf-8")
    return TestStubSuite(source_text=stdout, test_count=count, path=stub_path)
