"""Stop detection, API-call extraction, and structural tag scanning.

The call grammar (documented as EBNF in docs/grammar.md) is a single
Python-style function call, optionally assigned to an identifier:

    [ident "="] name "(" arg {"," arg} ")"

with integer, float, and quoted-string literal arguments plus one optional
leading identifier naming the working image. Parsing goes through the
stdlib ast module in eval-free mode, so arbitrary input can never execute
anything; anything outside the grammar maps to one of three classified
errors whose strings are frozen in errors.ERROR_STRINGS.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import error_text
from .ops import AugmentationOp, OP_KINDS
from . import errors as _errors

CODE_OPEN = "<code>"
CODE_CLOSE = "</code>"
OUTPUT_OPEN = "<output>"
OUTPUT_CLOSE = "</output>"
THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"

DEFAULT_STOP_SET = (CODE_CLOSE, ANSWER_CLOSE)

_STOP_KINDS = {CODE_CLOSE: "code_close", ANSWER_CLOSE: "answer_close"}

# name -> ordered parameter names following the leading image argument,
# with per-parameter value validators.
_SIGNATURES = {
    "crop": ("x0", "y0", "x1", "y1"),
    "resize": ("factor",),
    "resize_up": ("factor",),
    "resize_down": ("factor",),
    "rotate": ("degrees",),
    "flip": ("axis",),
    "denoise": ("method", "kernel_size"),
    "edge": (),
}
_DEFAULTS = {
    "denoise": {"method": "median", "kernel_size": 3},
    "flip": {},
}


@dataclass(frozen=True)
class ParseError:
    code: str  # unknown_operation | param_invalid | syntax_malformed
    message: str


@dataclass(frozen=True)
class ParsedCall:
    op: AugmentationOp
    raw_text: str
    assignment_target: Optional[str] = None


@dataclass(frozen=True)
class StopHit:
    kind: str
    stop: str
    position: int


@dataclass(frozen=True)
class TagScan:
    has_think: bool
    has_answer: bool
    code_spans: tuple = ()
    output_spans: tuple = ()
    answer_text: str = ""


def find_stop(generated: str, stop_set=DEFAULT_STOP_SET) -> Optional[StopHit]:
    """Earliest complete occurrence of any stop string, or None."""
    if not stop_set:
        raise ValueError("stop_set must be non-empty")
    best: Optional[StopHit] = None
    for stop in stop_set:
        pos = generated.find(stop)
        if pos < 0:
            continue
        if best is None or pos < best.position:
            best = StopHit(_STOP_KINDS.get(stop, stop), stop, pos)
    return best


def _find_pairs(text: str, open_tag: str, close_tag: str):
    """Sequential strict pairing; returns content (start, end) offsets."""
    spans = []
    cursor = 0
    while True:
        start = text.find(open_tag, cursor)
        if start < 0:
            break
        content_start = start + len(open_tag)
        end = text.find(close_tag, content_start)
        if end < 0:
            break
        spans.append((content_start, end))
        cursor = end + len(close_tag)
    return spans


def scan_tags(full_text: str) -> TagScan:
    """Total over arbitrary input; unclosed trailing tags count as absent."""
    think = _find_pairs(full_text, THINK_OPEN, THINK_CLOSE)
    answer = _find_pairs(full_text, ANSWER_OPEN, ANSWER_CLOSE)
    code = _find_pairs(full_text, CODE_OPEN, CODE_CLOSE)
    output = _find_pairs(full_text, OUTPUT_OPEN, OUTPUT_CLOSE)
    return TagScan(
        has_think=bool(think),
        has_answer=bool(answer),
        code_spans=tuple(code),
        output_spans=tuple(output),
        answer_text=full_text[answer[0][0]:answer[0][1]] if answer else "",
    )


def _literal(node: ast.expr):
    """Accepted literal forms: int, float, quoted string, unary minus."""
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, str)) \
            and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub) \
            and isinstance(node.operand, ast.Constant) \
            and isinstance(node.operand.value, (int, float)) \
            and not isinstance(node.operand.value, bool):
        return -node.operand.value
    raise _GrammarViolation(f"unsupported argument expression at column {node.col_offset}")


class _GrammarViolation(Exception):
    pass


def _param_error(name: str, detail: str) -> ParseError:
    return ParseError("param_invalid", error_text("param_invalid", name=name, detail=detail))


def _build_op(name: str, params: dict) -> Union[AugmentationOp, ParseError]:
    """Map a validated argument record to an AugmentationOp (or param error)."""
    kind = name
    if name == "resize":
        factor = params["factor"]
        kind = "resize_down" if factor < 1 else "resize_up"
        params = {"factor": factor}
    try:
        op = AugmentationOp(kind, params)
        op.validate()
    except _errors.OpError as exc:
        return ParseError("param_invalid", exc.message)
    except ValueError as exc:
        return _param_error(name, str(exc))
    return op


def extract_call(span: str, allowed_kinds=OP_KINDS) -> Union[ParsedCall, ParseError]:
    """Parse the text between one <code></code> pair into a validated call.

    `allowed_kinds` restricts the executable vocabulary (used by the
    compression experiment to strip resize_up); a call outside it is an
    unknown operation just like a misspelled name.
    """
    try:
        tree = ast.parse(span.strip(), mode="exec")
    except (SyntaxError, ValueError, RecursionError, MemoryError) as exc:
        return ParseError("syntax_malformed", error_text("syntax_malformed", detail=str(exc)))

    if len(tree.body) != 1:
        return ParseError(
            "syntax_malformed",
            error_text("syntax_malformed",
                       detail=f"expected exactly one API call, found {len(tree.body)} statements"),
        )
    stmt = tree.body[0]
    target = None
    if isinstance(stmt, ast.Assign):
        if len(stmt.targets) != 1 or not isinstance(stmt.targets[0], ast.Name):
            return ParseError("syntax_malformed",
                              error_text("syntax_malformed", detail="assignment target must be a single identifier"))
        target = stmt.targets[0].id
        call = stmt.value
    elif isinstance(stmt, ast.Expr):
        call = stmt.value
    else:
        return ParseError("syntax_malformed",
                          error_text("syntax_malformed", detail="statement is not an API call"))
    if not isinstance(call, ast.Call) or not isinstance(call.func, ast.Name):
        return ParseError("syntax_malformed",
                          error_text("syntax_malformed", detail="expected a plain function call"))

    name = call.func.id
    if name not in _SIGNATURES:
        return ParseError("unknown_operation", error_text("unknown_operation", name=name))

    param_names = _SIGNATURES[name]
    values = dict(_DEFAULTS.get(name, {}))
    positional = list(call.args)
    # Leading image argument: identifier or string; optional.
    if positional and isinstance(positional[0], ast.Name):
        positional.pop(0)
    elif positional and isinstance(positional[0], ast.Constant) \
            and isinstance(positional[0].value, str) and len(positional) > len(param_names):
        # A leading string is only the image path when there are more
        # positionals than parameters; otherwise it is a parameter (flip axis).
        positional.pop(0)

    try:
        if len(positional) > len(param_names):
            return _param_error(name, f"too many positional arguments ({len(positional)})")
        for pname, node in zip(param_names, positional):
            values[pname] = _literal(node)
        for kw in call.keywords:
            if kw.arg is None:
                return ParseError("syntax_malformed",
                                  error_text("syntax_malformed", detail="**kwargs is not allowed"))
            if kw.arg in ("image", "image_path"):
                continue
            if kw.arg not in param_names:
                return _param_error(name, f"unexpected keyword argument {kw.arg!r}")
            values[kw.arg] = _literal(kw.value)
    except _GrammarViolation as exc:
        return ParseError("syntax_malformed", error_text("syntax_malformed", detail=str(exc)))

    missing = [p for p in param_names if p not in values]
    if missing:
        return _param_error(name, f"missing required argument(s): {', '.join(missing)}")

    # Type coercion guards before op construction.
    for int_param in ("x0", "y0", "x1", "y1", "degrees", "kernel_size"):
        if int_param in values and not isinstance(values[int_param], int):
            return _param_error(name, f"{int_param} must be an integer")
    if "factor" in values and not isinstance(values["factor"], (int, float)):
        return _param_error(name, "factor must be a number")
    if "factor" in values and values["factor"] <= 0:
        return _param_error(name, "factor must be positive")

    op = _build_op(name, values)
    if isinstance(op, ParseError):
        return op
    if op.kind not in allowed_kinds:
        return ParseError("unknown_operation", error_text("unknown_operation", name=name))
    return ParsedCall(op=op, raw_text=span, assignment_target=target)


def _render_value(value) -> str:
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return repr(value)
    return repr(value)


def render_call(op: AugmentationOp, assignment_target: Optional[str] = "image_path",
                image_name: str = "image_path") -> str:
    """Canonical textual form of an op; extract_call(render_call(op)) == op."""
    name = op.kind
    ordered = _PARAM_KEYS_ORDER[op.kind]
    if op.kind == "crop":
        args = ", ".join(str(op.params[k]) for k in ordered)
        body = f"{name}({image_name}, {args})"
    elif op.kind == "edge":
        body = f"{name}({image_name})"
    else:
        kwargs = ", ".join(f"{k}={_render_value(op.params[k])}" for k in ordered)
        body = f"{name}({image_name}, {kwargs})"
    if assignment_target:
        return f"{assignment_target} = {body}"
    return body


_PARAM_KEYS_ORDER = {
    "crop": ("x0", "y0", "x1", "y1"),
    "resize_up": ("factor",),
    "resize_down": ("factor",),
    "rotate": ("degrees",),
    "flip": ("axis",),
    "denoise": ("method", "kernel_size"),
    "edge": (),
}
