"""Run summaries, debug logs and the token cost ledger."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Union

if TYPE_CHECKING:
    from .pipeline import RunRecord
    from .provider import TokenUsage
    from .verifier import CheckReport

SCHEMA_VERSION = 1
SUMMARY_NAME = "summary.json"
FINAL_ANNOTATED_NAME = "final_annotated.py"


class IoError(OSError):
    pass


class UnknownModel(KeyError):
    def __str__(self) -> str:
        return f"no price for model {self.args[0]!r} in the price table"


# -- costs -------------------------------------------------------------------

@dataclass(frozen=True)
class ModelPrice:
    prompt_price_per_1M: float
    completion_price_per_1M: float


@dataclass(frozen=True)
class UsageEntry:
    call_kind: str
    model_id: str
    usage: "TokenUsage"


@dataclass(frozen=True)
class LedgerLine:
    call_kind: str
    model_id: str
    prompt_tokens: int
    completion_tokens: int
    price: ModelPrice
    cost_usd: float

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class CostLedger:
    per_call: tuple[LedgerLine, ...]
    total_tokens: int
    total_cost_usd: float

    def to_dict(self) -> dict:
        return {
            "calls": len(self.per_call),
            "prompt_tokens": sum(line.prompt_tokens for line in self.per_call),
            "completion_tokens": sum(line.completion_tokens for line in self.per_call),
            "total_tokens": self.total_tokens,
            "total_cost_usd": self.total_cost_usd,
        }


PriceTable = Mapping[str, ModelPrice]


def load_price_table(path: Union[str, Path, None] = None) -> dict[str, ModelPrice]:
    """Read ``model_id -> {prompt_price_per_1M, completion_price_per_1M}`` JSON.

    Without ``path`` the bundled table is used; its figures are a snapshot and
    should be edited when provider pricing changes.
    """
    if path is None:
        raw = (resources.files("contractloop") / "prices.json").read_text(encoding="utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    data = json.loads(raw)
    return {
        model: ModelPrice(float(p["prompt_price_per_1M"]), float(p["completion_price_per_1M"]))
        for model, p in data.items()
        if not model.startswith("_")
    }


def estimate_cost(usages: Iterable[UsageEntry], price_table: PriceTable) -> CostLedger:
    lines = []
    for entry in usages:
        try:
            price = price_table[entry.model_id]
        except KeyError:
            raise UnknownModel(entry.model_id) from None
        cost = (
            entry.usage.prompt_tokens * price.prompt_price_per_1M
            + entry.usage.completion_tokens * price.completion_price_per_1M
        ) / 1_000_000
        lines.append(
            LedgerLine(entry.call_kind, entry.model_id, entry.usage.prompt_tokens, entry.usage.completion_tokens, price, cost)
        )
    return CostLedger(
        per_call=tuple(lines),
        total_tokens=sum(line.total_tokens for line in lines),
        total_cost_usd=math.fsum(line.cost_usd for line in lines),
    )


def usage_entries(record: "RunRecord") -> list[UsageEntry]:
    entries = []
    for round_index, ex in record.exchanges:
        kind = ex.request.kind.value.lower() + ("_repair" if ex.is_repair else "")
        entries.append(UsageEntry(kind, ex.request.model_id, ex.response.usage))
    return entries


# -- output layout -----------------------------------------------------------

def run_directory(base: Union[str, Path], stem: str, stamp: Optional[str] = None, create: bool = True) -> Path:
    """``<base>/<stem>/<timestamp>/``; a fresh timestamp never reuses an existing directory."""
    parent = Path(base) / stem
    if stamp is None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S_%fZ")
        candidate, n = parent / stamp, 1
        while candidate.exists():
            candidate, n = parent / f"{stamp}-{n}", n + 1
    else:
        candidate = parent / stamp
    if create:
        try:
            candidate.mkdir(parents=True, exist_ok=False)
        except OSError as exc:
            raise IoError(f"cannot create run directory {candidate}: {exc}") from exc
    return candidate


def _report_dict(report: Optional["CheckReport"]) -> Optional[dict]:
    if report is None:
        return None
    return {
        "status": report.status.value,
        "counterexamples": [
            {
                "failing_call": cx.failing_call,
                "message": cx.message,
                "location": cx.location,
                "violated_contract": cx.violated_contract.condition_text if cx.violated_contract else None,
            }
            for cx in report.counterexamples
        ],
        "path_stats": {
            "confirmed_paths": report.path_stats.confirmed_paths,
            "unknown_paths": report.path_stats.unknown_paths,
            "parsed": report.path_stats.parsed,
        },
        "timed_out": report.timed_out,
        "exit_code": report.exit_code,
        "wall_time_s": round(report.wall_time_s, 3),
    }


def summary_dict(record: "RunRecord", ledger: Optional[CostLedger] = None) -> dict:
    usage = record.usage_total
    return {
        "schema_version": SCHEMA_VERSION,
        "target": str(record.target_path),
        "model": record.model_id,
        "final_status": record.final_status.value,
        "stop_reason": record.stop_reason,
        "error": record.error,
        "refinement_rounds": record.refinement_rounds,
        "llm_calls": record.total_llm_iterations,
        "repair_calls": record.repair_calls,
        "initial_check": _report_dict(record.initial_report),
        "rounds": [
            {
                "round": entry.round_index,
                "evidence": [cx.failing_call for cx in entry.evidence.counterexamples],
                "isolation": "accepted" if entry.isolation_verdict is None else str(entry.isolation_verdict),
                "check": _report_dict(entry.check_report),
            }
            for entry in record.trace
        ],
        "final_path_stats": _report_dict(record.final_report)["path_stats"] if record.final_report else None,
        "tokens": {
            "prompt": usage.prompt_tokens,
            "completion": usage.completion_tokens,
            "total": usage.total,
        },
        "cost": ledger.to_dict() if ledger is not None else None,
        "timings": {
            "wall_time_s": round(record.wall_time_s, 3),
            "llm_latency_s": round(sum(ex.response.latency_s for _, ex in record.exchanges), 3),
            "check_time_s": round(
                sum(r.wall_time_s for r in [record.initial_report, *(e.check_report for e in record.trace)] if r), 3
            ),
        },
        "final_annotated": FINAL_ANNOTATED_NAME if record.final_annotated is not None else None,
        "coverage": {
            "test_stub": record.test_stub_path.name if record.test_stub_path else None,
            "test_count": record.coverage.test_count if record.coverage else 0,
            "note": record.coverage_note,
        },
    }


def write_run_summary(record: "RunRecord", output_dir: Union[str, Path], ledger: Optional[CostLedger] = None) -> Path:
    """Write ``summary.json`` and ``final_annotated.py`` into ``output_dir``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if record.final_annotated is not None:
            with open(out / FINAL_ANNOTATED_NAME, "w", encoding="utf-8", newline="") as fh:
                fh.write(record.final_annotated.source_text)
        path = out / SUMMARY_NAME
        path.write_text(json.dumps(summary_dict(record, ledger), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write run summary to {out}: {exc}") from exc
    return path


def load_summary(path: Union[str, Path]) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported summary schema_version {data.get('schema_version')!r}")
    return data


def write_debug_logs(record: "RunRecord", log_dir: Union[str, Path], enabled: bool) -> list[Path]:
    """Per round: prompt and raw response of each call, annotated code, checker stdout and stderr."""
    if not enabled:
        return []
    log_dir = Path(log_dir)
    written: list[Path] = []

    def put(name: str, text: str) -> None:
        path = log_dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)

    rounds: dict[int, list] = {}
    for round_index, ex in record.exchanges:
        rounds.setdefault(round_index, []).append(ex)
    sources = {}
    reports = {}
    if record.initial_annotated is not None:
        sources[0], reports[0] = record.initial_annotated, record.initial_report
    for entry in record.trace:
        sources[entry.round_index], reports[entry.round_index] = entry.revised_source, entry.check_report

    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        for r in sorted(set(rounds) | set(sources)):
            for call, ex in enumerate(rounds.get(r, []), start=1):
                put(f"round{r:02d}_call{call:02d}_prompt.txt",
                    f"[system]\n{ex.request.system_text}\n[user]\n{ex.request.user_text}\n")
                put(f"round{r:02d}_call{call:02d}_response.txt", ex.response.raw_text)
            if r in sources:
                put(f"round{r:02d}_annotated.py", sources[r].source_text)
            report = reports.get(r)
            if report is not None:
                put(f"round{r:02d}_checker_stdout.txt", report.raw_stdout)
                put(f"round{r:02d}_checker_stderr.txt", report.raw_stderr)
    except OSError as exc:
        raise IoError(f"cannot write debug logs to {log_dir}: {exc}") from exc
    return written
