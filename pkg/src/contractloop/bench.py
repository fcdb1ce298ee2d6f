"""Run the pipeline over a corpus of programs and aggregate pass/inconclusive rates."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import artifacts
from .config import Config, ConfigError, UsageError, load_config
from .pipeline import FinalStatus, RunRecord, run_pipeline
from .provider import Backend, make_backend

log = logging.getLogger(__name__)

CATEGORIES = ("sequential", "branched", "single-loop", "multi-path-loop", "nested-loop")
UNCATEGORIZED = "uncategorized"
MANIFEST_NAME = "manifest.json"


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class ProgramResult:
    name: str
    category: str
    final_status: str
    confirmed_paths: int
    unknown_paths: int
    llm_iterations: int
    refinement_rounds: int
    tokens: int
    wall_time_s: float
    error: Optional[str] = None


@dataclass(frozen=True)
class MeanSem:
    n: int
    mean: Optional[float]
    sem: Optional[float]  # undefined for n < 2


@dataclass(frozen=True)
class BenchReport:
    per_program: tuple[ProgramResult, ...]
    pass_rate: float
    inconclusive_rate: float
    refuted_rate: float
    error_rate: float
    confirmed_paths_inconclusive: MeanSem
    unknown_paths_inconclusive: MeanSem
    avg_iterations: float
    avg_refinement_rounds: float
    avg_tokens: float
    total_cost_usd: Optional[float]

    @property
    def avg_confirmed_paths_inconclusive(self) -> Optional[float]:
        return self.confirmed_paths_inconclusive.mean

    @property
    def avg_unknown_paths_inconclusive(self) -> Optional[float]:
        return self.unknown_paths_inconclusive.mean

    def to_dict(self, include_timings: bool = False) -> dict:
        programs = []
        for p in self.per_program:
            row = dataclasses.asdict(p)
            if not include_timings:
                row.pop("wall_time_s")
            programs.append(row)
        return {
            "schema_version": 1,
            "programs": len(self.per_program),
            "pass_rate": self.pass_rate,
            "inconclusive_rate": self.inconclusive_rate,
            "refuted_rate": self.refuted_rate,
            "error_rate": self.error_rate,
            "inconclusive_paths": {
                "confirmed": dataclasses.asdict(self.confirmed_paths_inconclusive),
                "unknown": dataclasses.asdict(self.unknown_paths_inconclusive),
            },
            "avg_llm_calls": self.avg_iterations,
            "avg_refinement_rounds": self.avg_refinement_rounds,
            "avg_tokens": self.avg_tokens,
            "total_cost_usd": self.total_cost_usd,
            "per_program": programs,
        }

    def rate_table_csv(self, label: str = "run") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "programs", "pass_rate_pct", "inconclusive_rate_pct", "refuted_rate_pct", "error_rate_pct"])
        writer.writerow([
            label,
            len(self.per_program),
            *(f"{100 * r:.1f}" for r in (self.pass_rate, self.inconclusive_rate, self.refuted_rate, self.error_rate)),
        ])
        return buf.getvalue()


def mean_sem(values: Sequence[float]) -> MeanSem:
    """Mean and standard error of the mean (sample standard deviation / sqrt n)."""
    n = len(values)
    if n == 0:
        return MeanSem(0, None, None)
    mean = statistics.fmean(values)
    sem = statistics.stdev(values) / math.sqrt(n) if n > 1 else None
    return MeanSem(n, mean, sem)


def _result(record: RunRecord, category: str) -> ProgramResult:
    report = record.final_report
    return ProgramResult(
        name=record.target_path.name,
        category=category,
        final_status=record.final_status.value,
        confirmed_paths=report.path_stats.confirmed_paths if report else 0,
        unknown_paths=report.path_stats.unknown_paths if report else 0,
        llm_iterations=record.total_llm_iterations,
        refinement_rounds=record.refinement_rounds,
        tokens=record.usage_total.total,
        wall_time_s=record.wall_time_s,
        error=record.error,
    )


def aggregate(
    records: Sequence[RunRecord],
    categories: Optional[Mapping[str, str]] = None,
    price_table: Optional[artifacts.PriceTable] = None,
) -> BenchReport:
    if not records:
        raise EmptyCorpus("no run records to aggregate")
    categories = categories or {}
    results = sorted(
        (_result(r, categories.get(r.target_path.name, UNCATEGORIZED)) for r in records),
        key=lambda p: (p.name, p.final_status, p.tokens),
    )
    n = len(results)
    count = lambda status: sum(1 for p in results if p.final_status == status.value)  # noqa: E731
    inconclusive = [p for p in results if p.final_status == FinalStatus.INCONCLUSIVE.value]

    total_cost = None
    if price_table is not None:
        usages = [u for r in records for u in artifacts.usage_entries(r)]
        total_cost = artifacts.estimate_cost(usages, price_table).total_cost_usd

    return BenchReport(
        per_program=tuple(results),
        pass_rate=count(FinalStatus.PASSED) / n,
        inconclusive_rate=count(FinalStatus.INCONCLUSIVE) / n,
        refuted_rate=count(FinalStatus.REFUTED) / n,
        error_rate=count(FinalStatus.ERROR) / n,
        confirmed_paths_inconclusive=mean_sem([p.confirmed_paths for p in inconclusive]),
        unknown_paths_inconclusive=mean_sem([p.unknown_paths for p in inconclusive]),
        avg_iterations=statistics.fmean(p.llm_iterations for p in results),
        avg_refinement_rounds=statistics.fmean(p.refinement_rounds for p in results),
        avg_tokens=statistics.fmean(p.tokens for p in results),
        total_cost_usd=total_cost,
    )


def read_manifest(corpus_dir: Path) -> dict[str, str]:
    path = Path(corpus_dir) / MANIFEST_NAME
    if not path.is_file():
        return {}
    data = json.loads(path.read_text(encoding="utf-8"))
    bad = {name: cat for name, cat in data.items() if cat not in CATEGORIES}
    if bad:
        raise ValueError(f"unknown categories in {path}: {bad}; expected one of {CATEGORIES}")
    return dict(data)


def corpus_programs(corpus_dir: Path) -> list[Path]:
    programs = sorted(p for p in Path(corpus_dir).glob("*.py") if p.is_file())
    if not programs:
        raise EmptyCorpus(f"no .py programs in {corpus_dir}")
    return programs


def run_benchmark(
    corpus_dir: Path,
    cfg: Config,
    backend: Backend,
    workers: int = 1,
    report_dir: Optional[Path] = None,
    price_table: Optional[artifacts.PriceTable] = None,
) -> BenchReport:
    """Run every program in ``corpus_dir`` and write ``bench_report.json``, ``rates.csv``, ``timings.json``.

    ``bench_report.json`` holds no wall-clock values so replayed corpora give
    byte-identical reports; timings go to ``timings.json``.
    """
    programs = corpus_programs(corpus_dir)
    categories = read_manifest(corpus_dir)
    run_cfgs = [
        dataclasses.replace(cfg, target_path=p, output_dir=Path(cfg.output_dir) / "runs", log_dir=Path(cfg.log_dir))
        for p in programs
    ]
    run = lambda c: run_pipeline(c, backend, price_table=price_table)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, run_cfgs))
    else:
        records = [run(c) for c in run_cfgs]

    report = aggregate(records, categories, price_table)
    out = Path(report_dir) if report_dir is not None else Path(cfg.output_dir) / "bench"
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "rates.csv").write_text(report.rate_table_csv(cfg.model_id), encoding="utf-8")
    timings = {p.name: round(p.wall_time_s, 3) for p in report.per_program}
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def main(argv: Sequence[str], environment: Mapping[str, str]) -> int:
    parser = argparse.ArgumentParser(prog="contractloop-bench", add_help=True, allow_abbrev=False)
    parser.add_argument("--corpus", required=True, help="directory of .py programs (optional manifest.json)")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--report-dir", default=None)
    ns, rest = parser.parse_known_args(list(argv))
    try:
        programs = corpus_programs(Path(ns.corpus))
        cfg = load_config([*rest, "--target", str(programs[0])], environment)
        backend = make_backend(cfg)
        prices = artifacts.load_price_table(cfg.prices_path)
    except (UsageError, ConfigError, EmptyCorpus, OSError, ValueError) as exc:
        sys.stderr.write(f"contractloop-bench: error: {exc}\n")
        return 3
    report = run_benchmark(Path(ns.corpus), cfg, backend, ns.workers,
                           Path(ns.report_dir) if ns.report_dir else None, prices)
    sys.stdout.write(report.rate_table_csv(cfg.model_id))
    return 0


def run() -> None:
    logging.basicConfig(level=os.environ.get("CONTRACTLOOP_LOG", "WARNING").upper())
    sys.exit(main(sys.argv[1:], os.environ))


if __name__ == "__main__":
    run()
