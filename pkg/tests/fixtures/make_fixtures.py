"""Regenerate the replay fixtures under tests/fixtures/replay/.

Run from the repository root after changing prompt templates:

    python tests/fixtures/make_fixtures.py

Generation fixtures only need the rendered prompt. Refinement fixtures depend on
the real CrossHair counterexample text, so they are recorded by running the
pipeline with a scripted backend wrapped in a RecordingBackend.
"""

from __future__ import annotations

import json
import shutil
import tempfile
from pathlib import Path

from contractloop.config import BudgetPolicy, Config
from contractloop.pipeline import run_pipeline
from contractloop.provider import (
    ModelResponse,
    RecordingBackend,
    ScriptedBackend,
    TemplateSet,
    TokenUsage,
    render_generation_prompt,
    write_fixture,
)

HERE = Path(__file__).resolve().parent
REPLAY = HERE / "replay"
CORPUS = HERE / "corpus"
ANNOTATED = HERE / "annotated"

WRONG_ENSURE = "    @ensure(lambda num, result: result == num)\n"
CORRECTED_ENSURE = "    @ensure(lambda num, result: result == abs(num))\n"


def reply(code: str) -> str:
    return f"Here is the annotated program.\n\n```python\n{code}```\n\nThe contracts cover both branches.\n"


def absolute_variant(extra_line: str) -> str:
    lines = (ANNOTATED / "absolute.py").read_text().splitlines(keepends=True)
    at = next(i for i, line in enumerate(lines) if "result >= 0" in line) + 1
    return "".join(lines[:at] + [extra_line] + lines[at:])


# Stand-in token counts: a fixed prompt size and about four characters per completion token.
PROMPT_TOKENS = 1200


def usage_for(text: str, prompt: str) -> TokenUsage:
    return TokenUsage(len(prompt) // 4, len(text) // 4)


def make_corpus(templates: TemplateSet) -> None:
    out = REPLAY / "corpus"
    shutil.rmtree(out, ignore_errors=True)
    cfg = Config(target_path=CORPUS / "absolute.py")
    for bare in sorted(CORPUS.glob("*.py")):
        request = render_generation_prompt(bare.read_text(), templates, cfg)
        text = reply((ANNOTATED / bare.name).read_text())
        write_fixture(out, request, text, usage_for(text, request.user_text))


def record(name: str, script: list[str], rounds: int) -> None:
    out = REPLAY / name
    shutil.rmtree(out, ignore_errors=True)
    scripted = ScriptedBackend([ModelResponse(text, TokenUsage(PROMPT_TOKENS, len(text) // 4)) for text in script])
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Config(
            target_path=CORPUS / "absolute.py",
            budget=BudgetPolicy(max_refinement_rounds=rounds),
            output_dir=Path(tmp) / "out",
            logging_enabled=False,
        )
        record = run_pipeline(cfg, RecordingBackend(scripted, out))
    print(f"{name}: {record.final_status.value}, {len(record.trace)} round(s), {len(scripted.requests)} call(s)")


def main() -> None:
    templates = TemplateSet.load()
    make_corpus(templates)
    wrong = reply(absolute_variant(WRONG_ENSURE))
    corrected = reply(absolute_variant(CORRECTED_ENSURE))
    record("absolute_refine", [wrong, corrected], rounds=2)
    # A still-wrong revision identical to the first answer re-uses one fixture per prompt.
    record("absolute_exhaust", [wrong, wrong, wrong], rounds=2)
    (REPLAY / "README.json").write_text(
        json.dumps(
            {
                "corpus": "generation replies for every program in tests/fixtures/corpus",
                "absolute_refine": "absolute: wrong postcondition, then corrected after one refinement",
                "absolute_exhaust": "absolute: wrong postcondition that the model never fixes",
            },
            indent=2,
        )
        + "\n"
    )


if __name__ == "__main__":
    main()
