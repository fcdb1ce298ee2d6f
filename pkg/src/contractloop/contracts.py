"""icontract annotations: syntax validation, extraction, stripping and the contracts-only check.

The isolation check compares syntax trees of the *stripped* programs with
positions, comments and docstrings erased, so a revision that only touches
``@require``/``@ensure`` decorators (or reformats the file) is accepted and
anything else is reported as a :class:`CodeMutation`.
"""

from __future__ import annotations

import ast
import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

CONTRACT_MODULE = "icontract"

# Decorators removed by strip_contracts. ``invariant`` is deliberately absent:
# class invariants are passed through untouched.
_STRIPPED_NAMES = {"require": "REQUIRE", "ensure": "ENSURE", "snapshot": None}


class ContractKind(str, enum.Enum):
    REQUIRE = "REQUIRE"
    ENSURE = "ENSURE"


@dataclass(frozen=True)
class Contract:
    kind: ContractKind
    predicate_text: str
    attached_to: str
    ordinal: int
    lineno: int
    condition_text: str = ""

    def describe(self) -> str:
        return f"@{self.kind.value.lower()}({self.condition_text or self.predicate_text}) on {self.attached_to}"


@dataclass(frozen=True)
class SyntaxFailure:
    message: str
    lineno: Optional[int] = None
    col: Optional[int] = None

    def __str__(self) -> str:
        where = f"line {self.lineno}" if self.lineno else "unknown line"
        if self.col:
            where += f", column {self.col}"
        return f"SyntaxError at {where}: {self.message}"


@dataclass(frozen=True)
class CodeMutation:
    """The revision changed program code, not just contracts."""

    construct: str
    lineno: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        where = f" (line {self.lineno} of the revision)" if self.lineno else ""
        return f"program code changed at {self.construct}{where}: {self.detail}"


class InvalidSource(ValueError):
    def __init__(self, failure: SyntaxFailure):
        super().__init__(str(failure))
        self.failure = failure


@dataclass(frozen=True)
class AnnotatedSource:
    source_text: str
    contracts: tuple[Contract, ...] = field(default=())
    bare_skeleton: str = ""

    @classmethod
    def from_text(cls, source_text: str) -> "AnnotatedSource":
        failure = validate_syntax(source_text)
        if failure is not None:
            raise InvalidSource(failure)
        return cls(
            source_text=source_text,
            contracts=tuple(extract_contracts(source_text)),
            bare_skeleton=skeleton_dump(source_text),
        )


def validate_syntax(source_text: str) -> Optional[SyntaxFailure]:
    """Return ``None`` when ``source_text`` parses, else a :class:`SyntaxFailure`."""
    if not source_text.strip():
        return SyntaxFailure("empty module", 1, 0)
    try:
        ast.parse(source_text)
    except SyntaxError as exc:
        return SyntaxFailure(exc.msg or "invalid syntax", exc.lineno, exc.offset)
    except ValueError as exc:  # e.g. null bytes
        return SyntaxFailure(str(exc), None, None)
    return None


def _contract_aliases(tree: ast.Module) -> tuple[dict[str, str], set[str]]:
    """Map local names to icontract decorator names, and collect module aliases."""
    names = {name: name for name in _STRIPPED_NAMES}
    modules = {CONTRACT_MODULE}
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom) and node.module == CONTRACT_MODULE:
            for alias in node.names:
                if alias.name in _STRIPPED_NAMES:
                    names[alias.asname or alias.name] = alias.name
        elif isinstance(node, ast.Import):
            for alias in node.names:
                if alias.name == CONTRACT_MODULE:
                    modules.add(alias.asname or alias.name)
    return names, modules


def _decorator_name(dec: ast.expr, names: dict[str, str], modules: set[str]) -> Optional[str]:
    func = dec.func if isinstance(dec, ast.Call) else dec
    if isinstance(func, ast.Name):
        return names.get(func.id)
    if (
        isinstance(func, ast.Attribute)
        and isinstance(func.value, ast.Name)
        and func.value.id in modules
        and func.attr in _STRIPPED_NAMES
    ):
        return func.attr
    return None


def _functions(tree: ast.AST, prefix: str = "") -> Iterator[tuple[str, ast.FunctionDef | ast.AsyncFunctionDef]]:
    for node in ast.iter_child_nodes(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            qualname = prefix + node.name
            yield qualname, node
            yield from _functions(node, qualname + ".")
        elif isinstance(node, ast.ClassDef):
            yield from _functions(node, prefix + node.name + ".")
        else:
            yield from _functions(node, prefix)


def extract_contracts(source_text: str) -> list[Contract]:
    """One :class:`Contract` per ``@require``/``@ensure`` decorator, in source order."""
    tree = ast.parse(source_text)
    names, modules = _contract_aliases(tree)
    found: list[Contract] = []
    for qualname, fn in _functions(tree):
        ordinal = 0
        for dec in fn.decorator_list:
            kind = _STRIPPED_NAMES.get(_decorator_name(dec, names, modules) or "")
            if kind is None:
                continue
            condition = dec.args[0] if isinstance(dec, ast.Call) and dec.args else None
            if isinstance(condition, ast.Lambda):
                predicate = ast.get_source_segment(source_text, condition.body) or ast.unparse(condition.body)
            elif condition is not None:
                predicate = ast.get_source_segment(source_text, condition) or ast.unparse(condition)
            else:
                predicate = ""
            cond_text = ""
            if condition is not None:
                cond_text = ast.get_source_segment(source_text, condition) or ast.unparse(condition)
            found.append(
                Contract(
                    kind=ContractKind(kind),
                    predicate_text=" ".join(predicate.split()),
                    attached_to=qualname,
                    ordinal=ordinal,
                    lineno=dec.lineno,
                    condition_text=" ".join(cond_text.split()),
                )
            )
            ordinal += 1
    found.sort(key=lambda c: c.lineno)
    return found


class _Stripper(ast.NodeTransformer):
    def __init__(self, names: dict[str, str], modules: set[str]):
        self.names = names
        self.modules = modules

    def _strip_decorators(self, node):
        node.decorator_list = [
            d for d in node.decorator_list if _decorator_name(d, self.names, self.modules) is None
        ]
        self.generic_visit(node)
        return node

    visit_FunctionDef = _strip_decorators
    visit_AsyncFunctionDef = _strip_decorators

    def visit_ImportFrom(self, node: ast.ImportFrom):
        return None if _is_contract_import(node) else node

    def visit_Import(self, node: ast.Import):
        kept = [a for a in node.names if a.name != CONTRACT_MODULE and not a.name.startswith(CONTRACT_MODULE + ".")]
        if not kept:
            return None
        node.names = kept
        return node

    def generic_visit(self, node):
        super().generic_visit(node)
        body = getattr(node, "body", None)
        if isinstance(body, list) and not body and not isinstance(node, ast.Module):
            body.append(ast.Pass())
        return node


def _stripped_tree(source_text: str) -> ast.Module:
    tree = ast.parse(source_text)
    names, modules = _contract_aliases(tree)
    return _Stripper(names, modules).visit(tree)


def _is_contract_import(node: ast.AST) -> bool:
    if isinstance(node, ast.ImportFrom):
        return node.module == CONTRACT_MODULE or (node.module or "").startswith(CONTRACT_MODULE + ".")
    if isinstance(node, ast.Import):
        return any(a.name == CONTRACT_MODULE or a.name.startswith(CONTRACT_MODULE + ".") for a in node.names)
    return False


def strip_contracts(source_text: str) -> str:
    """Remove contract decorators and icontract imports, preserving all other text.

    Whole lines are deleted where possible so comments and formatting survive;
    unusual layouts (semicolons, mixed imports, emptied blocks) fall back to
    regenerating the module from its syntax tree.
    """
    tree = ast.parse(source_text)
    names, modules = _contract_aliases(tree)
    removed: list[ast.AST] = []
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            removed.extend(d for d in node.decorator_list if _decorator_name(d, names, modules) is not None)
        elif _is_contract_import(node):
            removed.append(node)
    if not removed:
        return source_text

    doomed: set[int] = set()
    for node in removed:
        doomed.update(range(node.lineno, (node.end_lineno or node.lineno) + 1))
    clean = not any(
        isinstance(node, ast.Import) and len(node.names) > 1 for node in removed
    ) and not any(
        isinstance(node, ast.stmt) and node.lineno in doomed and not any(node is r for r in removed)
        for node in ast.walk(tree)
    )
    if clean:
        lines = source_text.splitlines(keepends=True)
        out = "".join(line for i, line in enumerate(lines, start=1) if i not in doomed)
        if not out.strip() or validate_syntax(out) is None:
            return out
    return ast.unparse(_stripped_tree(source_text)) + "\n"


class _DocstringEraser(ast.NodeTransformer):
    def generic_visit(self, node):
        super().generic_visit(node)
        if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
            body = node.body
            if (
                body
                and isinstance(body[0], ast.Expr)
                and isinstance(body[0].value, ast.Constant)
                and isinstance(body[0].value.value, str)
            ):
                node.body = body[1:] or [ast.Pass()]
        return node


def skeleton_tree(source_text: str) -> ast.Module:
    """Stripped, docstring-free syntax tree used for structural comparison."""
    return _DocstringEraser().visit(_stripped_tree(source_text))


def skeleton_dump(source_text: str) -> str:
    return ast.dump(skeleton_tree(source_text), include_attributes=False)


def _label(node: ast.AST) -> str:
    name = getattr(node, "name", None)
    return f"{type(node).__name__}({name})" if isinstance(name, str) else type(node).__name__


def _first_divergence(a, b, path: str, anchor: Optional[int]) -> Optional[CodeMutation]:
    if isinstance(a, ast.AST) and isinstance(b, ast.AST):
        line = getattr(b, "lineno", None) or anchor
        if type(a) is not type(b):
            return CodeMutation(path or _label(b), line, f"{type(a).__name__} became {type(b).__name__}")
        for fname in a._fields:
            sub = f"{path}.{fname}" if path else f"{_label(a)}.{fname}"
            found = _first_divergence(getattr(a, fname, None), getattr(b, fname, None), sub, line)
            if found:
                return found
        return None
    if isinstance(a, list) and isinstance(b, list):
        for i, (x, y) in enumerate(zip(a, b)):
            label = _label(y) if isinstance(y, ast.AST) else ""
            found = _first_divergence(x, y, f"{path}[{i}]" + (f"<{label}>" if label else ""), anchor)
            if found:
                return found
        if len(a) != len(b):
            extra = b[len(a)] if len(b) > len(a) else None
            line = getattr(extra, "lineno", None) or anchor
            return CodeMutation(path, line, f"{len(a)} item(s) became {len(b)}")
        return None
    if type(a) is not type(b) or a != b:
        return CodeMutation(path, anchor, f"{a!r} became {b!r}")
    return None


def contracts_only_diff(
    original: Union[AnnotatedSource, str], revised: Union[AnnotatedSource, str]
) -> Optional[CodeMutation]:
    """``None`` when ``revised`` differs from ``original`` only in contracts.

    Otherwise the first diverging construct of the stripped programs is
    returned as a :class:`CodeMutation`.
    """
    a_text = original.source_text if isinstance(original, AnnotatedSource) else original
    b_text = revised.source_text if isinstance(revised, AnnotatedSource) else revised
    a_tree, b_tree = skeleton_tree(a_text), skeleton_tree(b_text)
    if ast.dump(a_tree) == ast.dump(b_tree):
        return None
    # Stripping keeps node positions, so reported lines refer to the revision as written.
    found = _first_divergence(a_tree, b_tree, "", None)
    return found or CodeMutation("Module", None, "syntax trees differ")
