"""``contractloop`` command-line entry point."""

from __future__ import annotations

import logging
import os
import sys
from typing import Mapping, Optional, Sequence, TextIO

from . import artifacts
from .config import ConfigError, UsageError, build_parser, load_config
from .pipeline import FinalStatus, RunRecord, run_pipeline
from .provider import make_backend

EXIT_CODES = {
    FinalStatus.PASSED: 0,
    FinalStatus.REFUTED: 1,
    FinalStatus.INCONCLUSIVE: 2,
    FinalStatus.ERROR: 3,
}
EXIT_USAGE = 3


def exit_code(status: FinalStatus) -> int:
    return EXIT_CODES[status]


def format_result(record: RunRecord, ledger: Optional[artifacts.CostLedger]) -> str:
    lines = [f"status:       {record.final_status.value} ({record.stop_reason})"]
    if record.error:
        lines.append(f"error:        {record.error}")
    lines.append(
        f"rounds:       {record.refinement_rounds} refinement, {record.total_llm_iterations} LLM call(s), "
        f"{record.repair_calls} repair"
    )
    report = record.final_report
    if report is not None:
        for cx in report.counterexamples:
            lines.append(f"counterexample: {cx.failing_call}  [{cx.location}] {cx.message}")
        lines.append(
            f"paths:        {report.path_stats.confirmed_paths} confirmed, {report.path_stats.unknown_paths} unknown"
            + (" (checker timed out)" if report.timed_out else "")
        )
    usage = record.usage_total
    lines.append(f"tokens:       {usage.total} ({usage.prompt_tokens} prompt + {usage.completion_tokens} completion)")
    lines.append(f"cost:         {'$%.4f' % ledger.total_cost_usd if ledger else 'unpriced'}")
    lines.append(f"wall time:    {record.wall_time_s:.1f}s")
    if record.run_dir is not None:
        lines.append(f"artifacts:    {record.run_dir}")
    if record.test_stub_path is not None:
        lines.append(f"test stubs:   {record.test_stub_path} ({record.coverage.test_count} tests)")
    elif record.coverage_note:
        lines.append(f"test stubs:   none ({record.coverage_note})")
    if record.log_files:
        lines.append(f"logs:         {record.log_files[0].parent} ({len(record.log_files)} files)")
    return "\n".join(lines)


def main(
    argv: Sequence[str],
    environment: Mapping[str, str],
    stdout: TextIO = sys.stdout,
    stderr: TextIO = sys.stderr,
) -> int:
    if any(a in ("-h", "--help") for a in argv):
        stdout.write(build_parser().format_help())
        return 0
    try:
        cfg = load_config(argv, environment)
        backend = make_backend(cfg)
        prices = artifacts.load_price_table(cfg.prices_path)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except (ConfigError, OSError, ValueError) as exc:
        stderr.write(f"{build_parser().format_usage()}contractloop: error: {exc}\n")
        return EXIT_USAGE

    record = run_pipeline(cfg, backend, price_table=prices)
    ledger = None
    try:
        ledger = artifacts.estimate_cost(artifacts.usage_entries(record), prices)
    except artifacts.UnknownModel:
        pass
    stdout.write(format_result(record, ledger) + "\n")
    return exit_code(record.final_status)


def run() -> None:
    logging.basicConfig(level=os.environ.get("CONTRACTLOOP_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(main(sys.argv[1:], os.environ))


if __name__ == "__main__":
    run()
