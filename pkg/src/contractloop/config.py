"""Run configuration: command-line flags, credentials and the optional ``.env`` file."""

from __future__ import annotations

import argparse
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from dotenv import dotenv_values

PROVIDERS = ("openai", "anthropic", "replay")

# One credential variable per live provider.
CREDENTIAL_VARS = {
    "openai": "OPENAI_API_KEY",
    "anthropic": "ANTHROPIC_API_KEY",
}

DEFAULT_MODELS = {
    "openai": "gpt-4o",
    "anthropic": "claude-sonnet-4-5",
    "replay": "replay",
}

DEFAULT_TEMPERATURE = 0.2
DEFAULT_OVERALL_TIMEOUT_S = 60.0
DEFAULT_PER_CONDITION_TIMEOUT_S = 30.0
DEFAULT_PER_PATH_TIMEOUT_S = 10.0
DEFAULT_MAX_UNINTERESTING = 64
DEFAULT_REFINE_ROUNDS = 2
DEFAULT_FORMAT_RETRIES = 2


class ConfigError(Exception):
    """Base class for configuration failures."""


class UsageError(ConfigError):
    """Bad or unrecognized command-line arguments."""


class MissingTarget(ConfigError):
    pass


class MissingCredential(ConfigError):
    pass


class InvalidLimit(ConfigError):
    pass


@dataclass(frozen=True)
class VerifierLimits:
    overall_timeout_s: float = DEFAULT_OVERALL_TIMEOUT_S
    per_condition_timeout_s: float = DEFAULT_PER_CONDITION_TIMEOUT_S
    per_path_timeout_s: float = DEFAULT_PER_PATH_TIMEOUT_S
    max_uninteresting_iterations: int = DEFAULT_MAX_UNINTERESTING

    def __post_init__(self) -> None:
        for name in ("overall_timeout_s", "per_condition_timeout_s", "per_path_timeout_s"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidLimit(f"{name} must be a positive number of seconds, got {value!r}")
        if not (isinstance(self.max_uninteresting_iterations, int) and self.max_uninteresting_iterations > 0):
            raise InvalidLimit(
                f"max_uninteresting_iterations must be a positive integer, got {self.max_uninteresting_iterations!r}"
            )
        if not self.per_path_timeout_s <= self.per_condition_timeout_s <= self.overall_timeout_s:
            raise InvalidLimit(
                "limits must satisfy per_path <= per_condition <= overall "
                f"(got {self.per_path_timeout_s} / {self.per_condition_timeout_s} / {self.overall_timeout_s})"
            )


@dataclass(frozen=True)
class BudgetPolicy:
    """When a refuted run may be sent back to the model.

    ``refinement_time_budget_s`` of ``None`` means no time window.
    """

    max_refinement_rounds: int = DEFAULT_REFINE_ROUNDS
    refinement_time_budget_s: Optional[float] = None
    max_format_retries: int = DEFAULT_FORMAT_RETRIES

    def __post_init__(self) -> None:
        if self.max_refinement_rounds < 0:
            raise InvalidLimit("max_refinement_rounds must be >= 0")
        if self.max_format_retries < 0:
            raise InvalidLimit("max_format_retries must be >= 0")
        if self.refinement_time_budget_s is not None and not self.refinement_time_budget_s > 0:
            raise InvalidLimit("refinement_time_budget_s must be > 0 when set")

    @property
    def refinement_enabled(self) -> bool:
        return self.max_refinement_rounds > 0


@dataclass(frozen=True)
class Config:
    target_path: Path
    provider_id: str = "replay"
    model_id: str = DEFAULT_MODELS["replay"]
    temperature: float = DEFAULT_TEMPERATURE
    check_limits: VerifierLimits = field(default_factory=VerifierLimits)
    cover_limits: VerifierLimits = field(default_factory=VerifierLimits)
    budget: BudgetPolicy = field(default_factory=BudgetPolicy)
    coverage_enabled: bool = False
    output_dir: Path = Path("contractloop-out")
    log_dir: Path = Path("contractloop-logs")
    logging_enabled: bool = True
    fixtures_dir: Optional[Path] = None
    prices_path: Optional[Path] = None
    api_key: Optional[str] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.provider_id not in PROVIDERS:
            raise UsageError(f"unknown provider {self.provider_id!r}; choose from {', '.join(PROVIDERS)}")
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidLimit(f"temperature must lie in [0, 2], got {self.temperature}")


class _Parser(argparse.ArgumentParser):
    """argparse exits the process on errors; raise instead so callers pick the exit code."""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def build_parser(prog: str = "contractloop") -> argparse.ArgumentParser:
    p = _Parser(
        prog=prog,
        description="Annotate a Python program with icontract contracts, check them with CrossHair, "
        "and repair refuted contracts from counterexamples.",
        allow_abbrev=False,
    )
    p.add_argument("--target", help="Python file to annotate")
    p.add_argument("--provider", choices=PROVIDERS, default="replay")
    p.add_argument("--model", help="model id (default depends on provider)")
    p.add_argument("--temperature", type=_number, default=DEFAULT_TEMPERATURE)
    p.add_argument("--fixtures", help="replay fixture directory (replay provider only)")
    p.add_argument("--prices", help="price table JSON (model -> per-1M token prices)")

    g = p.add_argument_group("refinement")
    g.add_argument("--refine", type=int, default=DEFAULT_REFINE_ROUNDS, help="maximum refinement rounds (0 disables)")
    g.add_argument("--refine-budget-s", type=_number, default=None,
                   help="refutations later than this many seconds after start are not refined")
    g.add_argument("--retries", type=int, default=DEFAULT_FORMAT_RETRIES,
                   help="maximum repair retries per model request")
    g.add_argument("--coverage", action="store_true", help="emit CrossHair cover pytest stubs after PASSED")

    for mode in ("check", "cover"):
        lg = p.add_argument_group(f"crosshair {mode} limits")
        lg.add_argument(f"--{mode}-timeout-s", type=_number, default=DEFAULT_OVERALL_TIMEOUT_S)
        lg.add_argument(f"--{mode}-per-condition-s", type=_number, default=DEFAULT_PER_CONDITION_TIMEOUT_S)
        lg.add_argument(f"--{mode}-per-path-s", type=_number, default=DEFAULT_PER_PATH_TIMEOUT_S)
        lg.add_argument(f"--{mode}-max-uninteresting", type=int, default=DEFAULT_MAX_UNINTERESTING)

    og = p.add_argument_group("output")
    og.add_argument("--output-dir", default="contractloop-out")
    og.add_argument("--log-dir", default="contractloop-logs")
    og.add_argument("--no-logs", action="store_true", help="do not write prompts, responses and checker streams")
    return p


def read_env_file(path: Path) -> dict[str, str]:
    if not path.is_file():
        return {}
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def merged_environment(environment: Mapping[str, str], env_file: Optional[Path]) -> dict[str, str]:
    """Env-file values fill gaps only; they never override ``environment``."""
    merged = read_env_file(env_file) if env_file is not None else {}
    merged.update(environment)
    return merged


def config_from_namespace(ns: argparse.Namespace, environment: Mapping[str, str]) -> Config:
    if not ns.target:
        raise MissingTarget("no target given (use --target PATH)")
    target = Path(ns.target)
    if not target.is_file() or not os.access(target, os.R_OK):
        raise MissingTarget(f"target {target} is not a readable file")

    api_key = None
    cred_var = CREDENTIAL_VARS.get(ns.provider)
    if cred_var is not None:
        api_key = environment.get(cred_var)
        if not api_key:
            raise MissingCredential(f"provider {ns.provider!r} needs {cred_var} in the environment or .env")
    fixtures = Path(ns.fixtures) if ns.fixtures else None
    if ns.provider == "replay" and fixtures is None:
        raise UsageError("--provider replay requires --fixtures DIR")

    def limits(mode: str) -> VerifierLimits:
        get = lambda suffix: getattr(ns, f"{mode}_{suffix}")  # noqa: E731
        return VerifierLimits(
            overall_timeout_s=get("timeout_s"),
            per_condition_timeout_s=get("per_condition_s"),
            per_path_timeout_s=get("per_path_s"),
            max_uninteresting_iterations=get("max_uninteresting"),
        )

    return Config(
        target_path=target,
        provider_id=ns.provider,
        model_id=ns.model or DEFAULT_MODELS[ns.provider],
        temperature=ns.temperature,
        check_limits=limits("check"),
        cover_limits=limits("cover"),
        budget=BudgetPolicy(
            max_refinement_rounds=ns.refine,
            refinement_time_budget_s=ns.refine_budget_s,
            max_format_retries=ns.retries,
        ),
        coverage_enabled=ns.coverage,
        output_dir=Path(ns.output_dir),
        log_dir=Path(ns.log_dir),
        logging_enabled=not ns.no_logs,
        fixtures_dir=fixtures,
        prices_path=Path(ns.prices) if ns.prices else None,
        api_key=api_key,
    )


def load_config(
    cli_args: Sequence[str],
    environment: Mapping[str, str],
    env_file: Optional[Path] = Path(".env"),
) -> Config:
    """Parse ``cli_args`` into a validated :class:`Config`.

    ``environment`` is usually ``os.environ``; ``env_file`` (``./.env`` by
    default) only supplies variables that ``environment`` lacks.
    """
    ns = build_parser().parse_args(list(cli_args))
    return config_from_namespace(ns, merged_environment(environment, env_file))
