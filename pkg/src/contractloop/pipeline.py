"""Generate -> check -> refine loop."""

from __future__ import annotations

import enum
import logging
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import artifacts
from .config import BudgetPolicy, Config
from .contracts import AnnotatedSource, CodeMutation, contracts_only_diff
from .provider import (
    Backend,
    Exchange,
    FixtureMiss,
    RetriesExhausted,
    TemplateError,
    TemplateSet,
    TokenUsage,
    TransportError,
    generate_with_retries,
    render_generation_prompt,
    render_refinement_prompt,
)
from .verifier import (
    CheckerAdapter,
    CheckReport,
    CoverageEmpty,
    EvidenceBundle,
    TestStubSuite,
    ToolCrash,
    ToolMissing,
    VerificationStatus,
    run_check,
    run_cover,
)

log = logging.getLogger(__name__)

__all__ = [
    "EvidenceBundle",
    "FinalStatus",
    "RefinementTraceEntry",
    "RunRecord",
    "refinement_allowed",
    "run_pipeline",
]

# Module name of the final annotated file; cover stubs import from it.
FINAL_MODULE = "final_annotated"


class FinalStatus(str, enum.Enum):
    PASSED = "PASSED"
    REFUTED = "REFUTED"
    INCONCLUSIVE = "INCONCLUSIVE"
    ERROR = "ERROR"

    @classmethod
    def of(cls, status: VerificationStatus) -> "FinalStatus":
        return cls(status.value)


@dataclass(frozen=True)
class RefinementTraceEntry:
    round_index: int
    evidence: EvidenceBundle
    revised_source: AnnotatedSource
    check_report: CheckReport
    isolation_verdict: Optional[CodeMutation] = None  # None means accepted


@dataclass
class RunRecord:
    target_path: Path
    model_id: str = ""
    initial_annotated: Optional[AnnotatedSource] = None
    initial_report: Optional[CheckReport] = None
    trace: list[RefinementTraceEntry] = field(default_factory=list)
    final_status: FinalStatus = FinalStatus.ERROR
    stop_reason: str = ""
    error: Optional[str] = None
    # (round index, exchange); round 0 is generation.
    exchanges: list[tuple[int, Exchange]] = field(default_factory=list)
    wall_time_s: float = 0.0
    coverage: Optional[TestStubSuite] = None
    coverage_note: Optional[str] = None
    run_dir: Optional[Path] = None
    log_files: list[Path] = field(default_factory=list)

    @property
    def total_llm_iterations(self) -> int:
        return len(self.exchanges)

    @property
    def refinement_rounds(self) -> int:
        return len(self.trace)

    @property
    def repair_calls(self) -> int:
        return sum(1 for _, ex in self.exchanges if ex.is_repair)

    @property
    def usage_total(self) -> TokenUsage:
        total = TokenUsage()
        for _, ex in self.exchanges:
            total = total + ex.response.usage
        return total

    @property
    def final_annotated(self) -> Optional[AnnotatedSource]:
        return self.trace[-1].revised_source if self.trace else self.initial_annotated

    @property
    def final_report(self) -> Optional[CheckReport]:
        return self.trace[-1].check_report if self.trace else self.initial_report

    @property
    def test_stub_path(self) -> Optional[Path]:
        return self.coverage.path if self.coverage else None


def refinement_allowed(report: CheckReport, budget: BudgetPolicy, rounds_used: int, elapsed_s: float) -> bool:
    """Refine only a refutation with a counterexample, no timeout, inside the time window and round cap."""
    within_time = budget.refinement_time_budget_s is None or elapsed_s <= budget.refinement_time_budget_s
    return (
        report.status is VerificationStatus.REFUTED
        and bool(report.counterexamples)
        and not report.timed_out
        and within_time
        and rounds_used < budget.max_refinement_rounds
    )


def _refusal_reason(report: CheckReport, budget: BudgetPolicy, rounds_used: int) -> str:
    if budget.max_refinement_rounds == 0:
        return "refinement_disabled"
    if rounds_used >= budget.max_refinement_rounds:
        return "round_cap"
    if report.timed_out:
        return "timed_out"
    return "time_budget"


def module_name_for(target: Path) -> str:
    name = re.sub(r"\W", "_", Path(target).stem) or "target"
    return name if name.isidentifier() else f"m_{name}"


def run_pipeline(
    cfg: Config,
    backend: Backend,
    templates: Optional[TemplateSet] = None,
    adapter: Optional[CheckerAdapter] = None,
    clock: Callable[[], float] = time.monotonic,
    price_table: Optional[dict] = None,
) -> RunRecord:
    """Run one target end to end and write its artifacts.

    Backend, template and checker failures end the run with status ERROR and
    the cause in ``record.error``; they are not raised.
    """
    start = clock()
    templates = templates or TemplateSet.load()
    module = module_name_for(cfg.target_path)
    record = RunRecord(target_path=Path(cfg.target_path), model_id=cfg.model_id)

    with tempfile.TemporaryDirectory(prefix="contractloop-") as tmp:
        workdir = Path(tmp)
        try:
            _loop(cfg, backend, templates, adapter, clock, start, module, workdir, record)
        except (RetriesExhausted, ToolMissing, ToolCrash, TransportError, FixtureMiss, TemplateError, OSError) as exc:
            log.warning("run on %s ended with error: %s", cfg.target_path, exc)
            record.final_status = FinalStatus.ERROR
            record.stop_reason = "error"
            record.error = f"{type(exc).__name__}: {exc}"
            if isinstance(exc, RetriesExhausted):
                round_index = 0 if record.initial_annotated is None else len(record.trace) + 1
                record.exchanges.extend((round_index, ex) for ex in exc.exchanges)

        record.run_dir = artifacts.run_directory(cfg.output_dir, module)
        if cfg.coverage_enabled and record.final_status is FinalStatus.PASSED:
            try:
                record.coverage = run_cover(
                    record.final_annotated, cfg.cover_limits, workdir, record.run_dir, FINAL_MODULE, adapter
                )
            except (CoverageEmpty, ToolCrash, ToolMissing) as exc:
                record.coverage_note = f"{type(exc).__name__}: {exc}"

    record.wall_time_s = clock() - start
    ledger = None
    if price_table is not None:
        try:
            ledger = artifacts.estimate_cost(artifacts.usage_entries(record), price_table)
        except artifacts.UnknownModel as exc:
            log.warning("%s", exc)
    artifacts.write_run_summary(record, record.run_dir, ledger=ledger)
    log_dir = artifacts.run_directory(cfg.log_dir, module, record.run_dir.name, create=False)
    record.log_files = artifacts.write_debug_logs(record, log_dir, cfg.logging_enabled)
    return record


def _loop(cfg, backend, templates, adapter, clock, start, module, workdir, record: RunRecord) -> None:
    source = Path(cfg.target_path).read_text(encoding="utf-8")
    request = render_generation_prompt(source, templates, cfg)
    gen = generate_with_retries(request, backend, cfg.budget, templates=templates)
    record.exchanges.extend((0, ex) for ex in gen.exchanges)
    record.initial_annotated = current = gen.annotated
    report = run_check(current, cfg.check_limits, workdir, module, adapter)
    record.initial_report = report

    def isolated(revision: AnnotatedSource) -> Optional[CodeMutation]:
        return contracts_only_diff(record.initial_annotated, revision)

    rounds = 0
    while True:
        if report.status is VerificationStatus.PASSED:
            record.stop_reason = "passed"
            break
        if report.status is VerificationStatus.INCONCLUSIVE:
            record.stop_reason = "inconclusive"
            break
        if not refinement_allowed(report, cfg.budget, rounds, clock() - start):
            record.stop_reason = _refusal_reason(report, cfg.budget, rounds)
            break
        rounds += 1
        evidence = EvidenceBundle.from_report(report, rounds)
        refine = render_refinement_prompt(current, evidence, cfg, templates)
        gen = generate_with_retries(refine, backend, cfg.budget, accept=isolated, templates=templates)
        record.exchanges.extend((rounds, ex) for ex in gen.exchanges)
        current = gen.annotated
        report = run_check(current, cfg.check_limits, workdir, module, adapter)
        record.trace.append(RefinementTraceEntry(rounds, evidence, current, report, isolated(current)))
    record.final_status = FinalStatus.of(report.status)
