"""Parameter-sweep plan language: parse, render, and cartesian expansion.

A plan is UTF-8 text, one statement per line, ``#`` starts a comment:

    parameter NAME (integer|float|text) (range LO HI step S | select V ...) ;
    task NAME
      input "file-${p}.dat" SIZE_MB
      length EXPR
      output SIZE_MB
    endtask

``EXPR`` is arithmetic over declared parameters and numeric literals with
``+ - * /`` and parentheses. ``${p}`` placeholders in input file names are
substituted per cross-product point. Float ranges are generated by index
(value = lo + k*step while <= hi), never by accumulation, so the same plan
expands to the same values on every platform.
"""

from __future__ import annotations

import ast
import itertools
import re
from dataclasses import dataclass, field

from .resources import Job


class PlanError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PlanSyntaxError(PlanError):
    pass


class DuplicateParameterError(PlanError):
    pass


class EmptyDomainError(PlanError):
    pass


class UndeclaredPlaceholderError(PlanError):
    pass


class PlanArithmeticError(PlanError):
    pass


@dataclass(frozen=True)
class Range:
    lo: int | float
    hi: int | float
    step: int | float


@dataclass(frozen=True)
class Select:
    values: tuple


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str  # "integer" | "float" | "text"
    domain: Range | Select

    def values(self) -> tuple:
        if isinstance(self.domain, Select):
            return self.domain.values
        lo, hi, step = self.domain.lo, self.domain.hi, self.domain.step
        out = []
        k = 0
        while True:
            v = lo + k * step
            if v > hi:
                break
            out.append(v)
            k += 1
        return tuple(out)


@dataclass(frozen=True)
class InputTemplate:
    template: str
    size_mb: float


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    inputs: tuple[InputTemplate, ...]
    length_expr: str
    output_mb: float


@dataclass(frozen=True)
class Plan:
    parameters: tuple[Parameter, ...]
    task: TaskTemplate


@dataclass
class JobSet:
    """One job per cross-product point, in declaration-order lexicographic
    order, plus the declared size of every concrete input file name."""

    jobs: list[Job]
    file_sizes: dict[str, float] = field(default_factory=dict)


_TOKEN_RE = re.compile(
    r'\s*(?:(?P<string>"[^"]*")'
    r'|(?P<number>[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)'
    r'|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)'
    r'|(?P<symbol>[;()+\-*/]))'
)

_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def _tokenize(line: str, lineno: int) -> list[tuple[str, str]]:
    """Return (kind, lexeme) pairs for one line."""
    tokens = []
    pos = 0
    text = _strip_comment(line)
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PlanSyntaxError(f"unexpected character {text[pos:].lstrip()[0]!r}", lineno)
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
    return tokens


class _Cursor:
    def __init__(self, tokens: list[tuple[str, str]], lineno: int):
        self.tokens = tokens
        self.lineno = lineno
        self.i = 0

    def done(self) -> bool:
        return self.i >= len(self.tokens)

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.i] if not self.done() else None

    def take(self, kind: str | None = None, lexeme: str | None = None) -> str:
        if self.done():
            raise PlanSyntaxError("unexpected end of line", self.lineno)
        k, lex = self.tokens[self.i]
        if kind is not None and k != kind:
            raise PlanSyntaxError(f"expected {kind}, got {lex!r}", self.lineno)
        if lexeme is not None and lex != lexeme:
            raise PlanSyntaxError(f"expected {lexeme!r}, got {lex!r}", self.lineno)
        self.i += 1
        return lex

    def expect_end(self) -> None:
        if not self.done():
            raise PlanSyntaxError(f"trailing tokens: {self.tokens[self.i][1]!r}", self.lineno)


def _take_number(cur: _Cursor, integer_only: bool):
    negative = False
    if cur.peek() == ("symbol", "-"):
        cur.take()
        negative = True
    lex = cur.take("number")
    if integer_only:
        if "." in lex or "e" in lex or "E" in lex:
            raise PlanSyntaxError(f"expected integer literal, got {lex!r}", cur.lineno)
        value: int | float = int(lex)
    else:
        value = float(lex)
    return -value if negative else value


def _parse_parameter(cur: _Cursor) -> Parameter:
    name = cur.take("ident")
    kind = cur.take("ident")
    if kind not in ("integer", "float", "text"):
        raise PlanSyntaxError(f"unknown parameter type {kind!r}", cur.lineno)
    mode = cur.take("ident")
    domain: Range | Select
    if mode == "range":
        if kind == "text":
            raise PlanSyntaxError("text parameters cannot use range", cur.lineno)
        integer_only = kind == "integer"
        lo = _take_number(cur, integer_only)
        hi = _take_number(cur, integer_only)
        cur.take("ident", "step")
        step = _take_number(cur, integer_only)
        if step <= 0:
            raise PlanSyntaxError(f"step must be > 0, got {step}", cur.lineno)
        if lo > hi:
            raise EmptyDomainError(f"range {lo}..{hi} of {name!r} is empty", cur.lineno)
        domain = Range(lo, hi, step)
    elif mode == "select":
        values = []
        while not cur.done() and cur.peek() != ("symbol", ";"):
            if kind == "text":
                lex = cur.take("string")
                values.append(lex[1:-1])
            else:
                values.append(_take_number(cur, kind == "integer"))
        if not values:
            raise EmptyDomainError(f"select domain of {name!r} is empty", cur.lineno)
        domain = Select(tuple(values))
    else:
        raise PlanSyntaxError(f"expected 'range' or 'select', got {mode!r}", cur.lineno)
    cur.take("symbol", ";")
    cur.expect_end()
    return Parameter(name=name, kind=kind, domain=domain)


_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)


def _check_expr(expr: str, declared: set[str], lineno: int) -> None:
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError:
        raise PlanSyntaxError(f"bad length expression {expr!r}", lineno) from None
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            continue
        if isinstance(node, _ALLOWED_BINOPS + (ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name):
            if node.id not in declared:
                raise UndeclaredPlaceholderError(
                    f"length expression references undeclared parameter {node.id!r}", lineno
                )
            continue
        raise PlanSyntaxError(f"unsupported construct in length expression {expr!r}", lineno)


def _eval_expr(expr: str, env: dict[str, object]) -> float:
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            v = env[node.id]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise PlanArithmeticError(
                    f"text parameter {node.id!r} used in length expression"
                )
            return v
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else +v
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            try:
                return a / b
            except ZeroDivisionError:
                raise PlanArithmeticError(f"division by zero in {expr!r}") from None
        raise PlanArithmeticError(f"unsupported node in {expr!r}")

    return ev(ast.parse(expr, mode="eval"))


def _placeholders(template: str, lineno: int) -> set[str]:
    names = set(_PLACEHOLDER_RE.findall(template))
    # any ${ not consumed by a well-formed placeholder is malformed
    leftover = _PLACEHOLDER_RE.sub("", template)
    if "${" in leftover:
        raise PlanSyntaxError(f"malformed placeholder in {template!r}", lineno)
    return names


def parse_plan(text: str) -> Plan:
    """Parse plan text; errors carry the offending line number."""
    parameters: list[Parameter] = []
    seen: set[str] = set()
    task: TaskTemplate | None = None

    in_task = False
    task_line = 0
    task_name = ""
    inputs: list[InputTemplate] = []
    length_expr: str | None = None
    output_mb: float | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(raw, lineno)
        if not tokens:
            continue
        cur = _Cursor(tokens, lineno)
        head = cur.take()

        if not in_task:
            if head == "parameter":
                p = _parse_parameter(cur)
                if p.name in seen:
                    raise DuplicateParameterError(f"duplicate parameter {p.name!r}", lineno)
                seen.add(p.name)
                parameters.append(p)
            elif head == "task":
                if task is not None:
                    raise PlanSyntaxError("only one task block is allowed", lineno)
                task_name = cur.take("ident")
                cur.expect_end()
                in_task = True
                task_line = lineno
            elif head == "endtask":
                raise PlanSyntaxError("endtask outside a task block", lineno)
            else:
                raise PlanSyntaxError(f"unknown statement {head!r}", lineno)
            continue

        if head == "input":
            quoted = cur.take("string")
            size = _take_number(cur, integer_only=False)
            cur.expect_end()
            template = quoted[1:-1]
            if size <= 0:
                raise PlanSyntaxError(f"input size must be > 0, got {size}", lineno)
            for name in sorted(_placeholders(template, lineno)):
                if name not in seen:
                    raise UndeclaredPlaceholderError(
                        f"input file references undeclared parameter {name!r}", lineno
                    )
            inputs.append(InputTemplate(template=template, size_mb=size))
        elif head == "length":
            if length_expr is not None:
                raise PlanSyntaxError("duplicate length line", lineno)
            rest = tokens[1:]
            if not rest:
                raise PlanSyntaxError("length needs an expression", lineno)
            expr = " ".join(lex for _, lex in rest)
            _check_expr(expr, seen, lineno)
            length_expr = expr
        elif head == "output":
            if output_mb is not None:
                raise PlanSyntaxError("duplicate output line", lineno)
            output_mb = _take_number(cur, integer_only=False)
            cur.expect_end()
            if output_mb < 0:
                raise PlanSyntaxError(f"output size must be >= 0, got {output_mb}", lineno)
        elif head == "endtask":
            cur.expect_end()
            if length_expr is None:
                raise PlanSyntaxError("task block has no length line", lineno)
            task = TaskTemplate(
                name=task_name,
                inputs=tuple(inputs),
                length_expr=length_expr,
                output_mb=output_mb if output_mb is not None else 0.0,
            )
            in_task = False
        else:
            raise PlanSyntaxError(f"unknown task statement {head!r}", lineno)

    if in_task:
        raise PlanSyntaxError("task block not closed with endtask", task_line)
    if task is None:
        raise PlanSyntaxError("plan declares no task block", len(text.splitlines()) or 1)
    return Plan(parameters=tuple(parameters), task=task)


def _literal(v) -> str:
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_plan(plan: Plan) -> str:
    """Canonical plan text; parse_plan(render_plan(p)) == p."""
    lines = []
    for p in plan.parameters:
        if isinstance(p.domain, Range):
            dom = f"range {_literal(p.domain.lo)} {_literal(p.domain.hi)} step {_literal(p.domain.step)}"
        else:
            dom = "select " + " ".join(_literal(v) for v in p.domain.values)
        lines.append(f"parameter {p.name} {p.kind} {dom};")
    t = plan.task
    lines.append(f"task {t.name}")
    for inp in t.inputs:
        lines.append(f'  input "{inp.template}" {_literal(inp.size_mb)}')
    lines.append(f"  length {t.length_expr}")
    lines.append(f"  output {_literal(t.output_mb)}")
    lines.append("endtask")
    return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, float):
        return repr(v)
    return str(v)


def expand(plan: Plan, id_prefix: str = "") -> JobSet:
    """Expand the cross product into concrete jobs.

    Job ids are ``<prefix>j<k>`` with k following the lexicographic point
    order; zero declared parameters yield exactly one job.
    """
    domains = [p.values() for p in plan.parameters]
    names = [p.name for p in plan.parameters]
    total = 1
    for d in domains:
        total *= len(d)
    width = max(3, len(str(max(total - 1, 0))))

    jobs: list[Job] = []
    file_sizes: dict[str, float] = {}
    for index, combo in enumerate(itertools.product(*domains)):
        env = dict(zip(names, combo))
        length = _eval_expr(plan.task.length_expr, env)
        if not length > 0:
            point = ", ".join(f"{n}={_format_value(env[n])}" for n in names)
            raise PlanArithmeticError(
                f"length {length!r} is not positive at point ({point})"
            )
        input_files = []
        for tpl in plan.task.inputs:
            name = _PLACEHOLDER_RE.sub(lambda m: _format_value(env[m.group(1)]), tpl.template)
            input_files.append(name)
            file_sizes.setdefault(name, tpl.size_mb)
        jobs.append(
            Job(
                id=f"{id_prefix}j{index:0{width}d}",
                length_mi=float(length),
                input_files=input_files,
                output_mb=plan.task.output_mb,
            )
        )
    return JobSet(jobs=jobs, file_sizes=file_sizes)
