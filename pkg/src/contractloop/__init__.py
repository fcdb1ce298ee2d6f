"""Contract synthesis for Python programs: an LLM proposes icontract
``@require``/``@ensure`` decorators, CrossHair checks them, and refuted
contracts are revised from concrete counterexamples while the program itself
stays untouched."""

__version__ = "0.1.0"
