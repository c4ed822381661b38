"""Line-oriented control-program language and its parser.

Statements:

    nt.set(<key>, <value>)
    nt.make_var('<name>', [<element path>], [<index spec>])
    <name> = mkexpr('<math>', '<vars>')
    nt.add_cstr('<relational math>', '<vars>')
    nt.objective(max|min, <expr name>)

Comments start with ``#``. The math sublanguage supports ``+ - * /``,
``sum(...)``, ``log(...)``, ``sqrt(...)`` and comparisons
``< <= > >= ==``. Programs are parsed, never executed.
"""

from __future__ import annotations

import logging
import math
import re
import warnings
from dataclasses import dataclass, field, replace

from . import expr as ex
from .errors import ParseError, SchemaMismatch, UnknownElement, ValidationError
from .schema import EntityType, Kind, Layer, NetworkSchema, Scope, VirtualElement, build_default_schema, read

log = logging.getLogger(__name__)

DEFAULT_RATE_BOUNDS = (0.01, 10.0)
DEFAULT_POWER_BOUNDS = (0.0, 30.0)  # normalized transmit gain, dB


@dataclass(frozen=True)
class Constraint:
    lhs: ex.Expr
    rel: str  # le | ge | eq
    rhs: ex.Expr
    forall: str | None = None  # virtual element the constraint quantifies over
    strict: bool = False


@dataclass(frozen=True)
class VariableFamily:
    """A named family of scalar decision variables declared by make_var.

    ``span`` is the virtual element whose members index the family;
    ``owner_index`` pins the owner when the span is a local element
    (e.g. the links of one specific session).
    """

    name: str
    path: tuple
    index_spec: tuple
    element: str        # terminal parameter element id
    span: str           # virtual element id the family ranges over
    owner_index: int | None
    layer: Layer
    bounds: tuple


@dataclass
class ControlProblemSpec:
    sense: str  # maximize | minimize
    utility: ex.Expr
    constraints: list
    variables: list
    settings: dict
    schema: NetworkSchema = field(compare=False, default=None)

    def family(self, name: str) -> VariableFamily:
        for f in self.variables:
            if f.name == name:
                return f
        raise KeyError(name)

    def family_names(self) -> set:
        return {f.name for f in self.variables}


def compare(lhs: ex.Expr, rel: str, rhs: ex.Expr, schema: NetworkSchema | None = None,
            known_names=()) -> Constraint:
    """Build a constraint from two expressions.

    When a schema is supplied, every element reference on both sides must
    resolve against it (SchemaMismatch otherwise). A reflexive comparison
    is accepted with a warning.
    """
    if rel not in ("le", "ge", "eq"):
        raise ValueError(f"unknown relation {rel!r}")
    if schema is not None:
        for side in (lhs, rhs):
            for v in ex.var_refs(side):
                if v.name in known_names:
                    continue
                if not schema.has_element(v.name):
                    raise SchemaMismatch(f"{v.name!r} does not resolve against the schema")
    if ex.canonically_equal(lhs, rhs):
        warnings.warn("constraint compares an expression with itself; always satisfied")
    return Constraint(lhs=lhs, rel=rel, rhs=rhs)


# -- tokenization -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.?\d+(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
      | (?P<str>'[^']*'|"[^"]*")
      | (?P<op><=|>=|==|[-+*/=<>(),\[\]])
    )""",
    re.VERBOSE,
)


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            out.append(ch)
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
            out.append(ch)
        elif ch == "#":
            break
        else:
            out.append(ch)
    return "".join(out)


def _tokenize(text: str, lineno: int):
    pos, tokens = 0, []
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m or m.start() != pos:
            raise ParseError(f"unexpected character {text[pos]!r}", lineno, pos + 1)
        if m.lastgroup == "num":
            tokens.append(("num", float(m.group("num")), pos + 1))
        elif m.lastgroup == "ident":
            tokens.append(("ident", m.group("ident"), pos + 1))
        elif m.lastgroup == "str":
            tokens.append(("str", m.group("str")[1:-1], pos + 1))
        else:
            tokens.append(("op", m.group("op"), pos + 1))
        pos = m.end()
    return tokens


class _Cursor:
    def __init__(self, tokens, lineno):
        self.toks = tokens
        self.i = 0
        self.lineno = lineno

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", None, -1)

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, kind, value=None):
        k, v, col = self.next()
        if k != kind or (value is not None and v != value):
            want = value if value is not None else kind
            raise ParseError(f"expected {want!r}, got {v!r}", self.lineno, col)
        return v

    def done(self):
        return self.i >= len(self.toks)

    def error(self, msg):
        _, v, col = self.peek()
        raise ParseError(msg + (f" near {v!r}" if v is not None else ""), self.lineno, col)


# -- math sublanguage ---------------------------------------------------------

_REL_TOKENS = {"<": ("le", True), "<=": ("le", False), ">": ("ge", True),
               ">=": ("ge", False), "==": ("eq", False)}
_FUNCS = ("sum", "log", "sqrt")


class _MathParser:
    """Recursive-descent parser for the expression sublanguage."""

    def __init__(self, text: str, lineno: int, resolver):
        self.cur = _Cursor(_tokenize(text, lineno), lineno)
        self.resolve = resolver  # name -> Expr (raises on unknown)

    def parse_expression(self) -> ex.Expr:
        e = self._expr()
        if not self.cur.done():
            self.cur.error("trailing input in expression")
        return e

    def parse_relation(self):
        lhs = self._expr()
        k, v, col = self.cur.next()
        if k != "op" or v not in _REL_TOKENS:
            raise ParseError(f"expected a comparison operator, got {v!r}", self.cur.lineno, col)
        rel, strict = _REL_TOKENS[v]
        rhs = self._expr()
        if not self.cur.done():
            self.cur.error("trailing input in constraint")
        return lhs, rel, rhs, strict

    def _expr(self) -> ex.Expr:
        terms = [self._term()]
        while True:
            k, v, _ = self.cur.peek()
            if k == "op" and v in "+-":
                self.cur.next()
                t = self._term()
                terms.append(t if v == "+" else ex.neg(t))
            else:
                return ex.add(*terms)

    def _term(self) -> ex.Expr:
        e = self._unary()
        while True:
            k, v, col = self.cur.peek()
            if k == "op" and v in "*/":
                self.cur.next()
                rhs = self._unary()
                if v == "*":
                    e = ex.mul(e, rhs)
                else:
                    if rhs.op != ex.CONST or rhs.value == 0.0:
                        raise ParseError("division only by a nonzero constant", self.cur.lineno, col)
                    e = ex.div(e, rhs)
            else:
                return e

    def _unary(self) -> ex.Expr:
        k, v, _ = self.cur.peek()
        if k == "op" and v == "-":
            self.cur.next()
            return ex.neg(self._unary())
        return self._atom()

    def _atom(self) -> ex.Expr:
        k, v, col = self.cur.next()
        if k == "num":
            return ex.const(v)
        if k == "op" and v == "(":
            e = self._expr()
            self.cur.expect("op", ")")
            return e
        if k == "ident":
            nk, nv, _ = self.cur.peek()
            if nk == "op" and nv == "(":
                if v not in _FUNCS:
                    raise ParseError(f"unknown function {v!r}", self.cur.lineno, col)
                self.cur.next()
                body = self._expr()
                over = None
                if self.cur.peek()[:2] == ("op", ","):
                    self.cur.next()
                    over = self.cur.expect("ident")
                self.cur.expect("op", ")")
                if v == "log":
                    if over is not None:
                        raise ParseError("log takes one argument", self.cur.lineno, col)
                    return ex.log(body)
                if v == "sqrt":
                    if over is not None:
                        raise ParseError("sqrt takes one argument", self.cur.lineno, col)
                    return ex.sqrt(body)
                return self.resolve_sum(body, over, col)
            return self.resolve(v, self.cur.lineno, col)
        raise ParseError(f"unexpected token {v!r}", self.cur.lineno, col)

    # bound by the program parser (needs family/span context)
    def resolve_sum(self, body, over, col):
        raise NotImplementedError


# -- program parser -----------------------------------------------------------

_STMT_SET = re.compile(r"^nt\.set\s*\(")
_STMT_VAR = re.compile(r"^nt\.make_var\s*\(")
_STMT_CSTR = re.compile(r"^nt\.add_cstr\s*\(")
_STMT_OBJ = re.compile(r"^nt\.objective\s*\(")
_STMT_EXPR = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*mkexpr\s*\(")


class _ProgramBuilder:
    def __init__(self, schema: NetworkSchema):
        self.schema = schema
        self.settings = {}
        self.families = {}
        self.exprs = {}
        self.constraints = []
        self.sense = None
        self.utility_name = None

    def global_span_of(self, entity: EntityType) -> str:
        for name, e in self.schema.elements.items():
            if isinstance(e, VirtualElement) and e.scope == Scope.GLOBAL and e.member_entity_type == entity:
                return name
        raise UnknownElement(f"no global element over {entity.value}")


def _parse_value(cur: _Cursor):
    k, v, col = cur.next()
    if k in ("num", "str"):
        return v
    if k == "ident":
        return v
    if k == "op" and v == "[":
        items = []
        sign = 1.0
        while True:
            nk, nv, ncol = cur.next()
            if nk == "op" and nv == "]":
                break
            if nk == "op" and nv == ",":
                continue
            if nk == "op" and nv == "-":
                sign = -1.0
                continue
            if nk == "num":
                items.append(sign * nv)
                sign = 1.0
            elif nk == "ident":
                items.append(nv)
            else:
                raise ParseError(f"bad list item {nv!r}", cur.lineno, ncol)
        return items
    if k == "op" and v == "-":
        nk, nv, _ = cur.next()
        if nk == "num":
            return -nv
    raise ParseError(f"bad value {v!r}", cur.lineno, col)


def _list_items(cur: _Cursor, lineno: int):
    """Items of a bracketed, comma-separated list; commas are mandatory."""
    cur.expect("op", "[")
    first = True
    while True:
        k, v, col = cur.next()
        if k == "op" and v == "]":
            return
        if not first:
            if not (k == "op" and v == ","):
                raise ParseError(f"expected ',' between list items, got {v!r}", lineno, col)
            k, v, col = cur.next()
        first = False
        yield k, v, col


def _parse_make_var(cur: _Cursor, b: _ProgramBuilder, lineno: int):
    name = cur.expect("str")
    cur.expect("op", ",")
    path = []
    for k, v, col in _list_items(cur, lineno):
        if k != "ident":
            raise ParseError(f"bad path element {v!r}", lineno, col)
        path.append(b.schema.canonical_name(v))
    cur.expect("op", ",")
    spec = []
    for k, v, col in _list_items(cur, lineno):
        if k == "num":
            spec.append(int(v))
        elif k == "ident" and v == "all":
            spec.append("all")
        elif k == "ident" and v == "None":
            spec.append(None)
        else:
            raise ParseError(f"bad index spec entry {v!r}", lineno, col)
    cur.expect("op", ")")
    if len(path) != len(spec):
        raise ParseError("path and index spec lengths differ", lineno)
    if name in b.families:
        raise ParseError(f"variable {name!r} already declared", lineno)

    # resolve the chain against the schema and locate the spanning hop
    try:
        terminal = read(b.schema, ".".join(path))
    except UnknownElement as e:
        raise ParseError(str(e), lineno) from e
    if isinstance(terminal, VirtualElement) or terminal.entity_type != EntityType.PARAMETER:
        raise ParseError(f"variable path must end at a parameter, got {path[-1]!r}", lineno)

    span, owner_index = None, None
    for hop, idx in zip(path, spec):
        elem = b.schema.element(hop)
        if idx == "all":
            if span is not None:
                raise ParseError("only one 'all' hop is supported per variable", lineno)
            if not isinstance(elem, VirtualElement):
                raise ParseError(f"'all' applies to set elements, not {hop!r}", lineno)
            span = elem.id
        elif isinstance(idx, int):
            if not isinstance(elem, VirtualElement):
                raise ParseError(f"index applies to set elements, not {hop!r}", lineno)
            owner_index = idx
        elif idx is None and isinstance(elem, VirtualElement):
            raise ParseError(f"set element {hop!r} needs an index or 'all'", lineno)
    if span is None:
        raise ParseError("variable declares no 'all' hop", lineno)
    span_elem = b.schema.element(span)
    if span_elem.scope == Scope.LOCAL and owner_index is None:
        raise ParseError(f"local span {span!r} needs a pinned owner index", lineno)
    if span_elem.scope == Scope.GLOBAL:
        owner_index = None

    layer = terminal.layer
    b.families[name] = VariableFamily(
        name=name, path=tuple(path), index_spec=tuple(spec), element=terminal.id,
        span=span, owner_index=owner_index, layer=layer, bounds=(),
    )


def _make_resolver(b: _ProgramBuilder):
    def resolve(name, lineno, col):
        if name in b.families:
            return ex.var(name)
        canon = b.schema.canonical_name(name)
        if b.schema.has_element(canon):
            elem = b.schema.element(canon)
            if isinstance(elem, VirtualElement):
                raise ParseError(f"{name!r} is a set element; use sum(..., {name})", lineno, col)
            if elem.entity_type != EntityType.PARAMETER:
                raise ParseError(f"{name!r} is not a parameter", lineno, col)
            return ex.var(canon)
        raise ParseError(f"unknown identifier {name!r}", lineno, col)
    return resolve


def _make_math_parser(text, lineno, b: _ProgramBuilder):
    p = _MathParser(text, lineno, _make_resolver(b))

    def resolve_sum(body, over, col):
        if over is not None:
            canon = b.schema.canonical_name(over)
            if not b.schema.has_element(canon) or not isinstance(b.schema.element(canon), VirtualElement):
                raise ParseError(f"sum over unknown set element {over!r}", lineno, col)
            return ex.sum_over(canon, body)
        spans = {b.families[v.name].span for v in ex.var_refs(body) if v.name in b.families}
        if len(spans) != 1:
            raise ParseError("sum(...) needs exactly one variable family to range over",
                             lineno, col)
        return ex.sum_over(spans.pop(), body)

    p.resolve_sum = resolve_sum
    return p


def _constraint_forall(b: _ProgramBuilder, lhs, rhs, lineno):
    """Infer the element set a constraint quantifies over."""
    owner_entities = set()
    spans = set()
    for side in (lhs, rhs):
        for n in ex.walk(side):
            if n.op == ex.SUM_OVER:
                elem = b.schema.element(n.over)
                if elem.scope == Scope.LOCAL:
                    owner_entities.add(elem.owner.entity_type)
            elif n.op == ex.VAR and n.name not in b.families and b.schema.has_element(n.name):
                # a bare parameter belongs to the entity holding it
                for edge in b.schema.edges:
                    if edge.dst == n.name and edge.relation.value == "has_attribute":
                        holder = b.schema.element(edge.src)
                        if holder.entity_type != EntityType.PARAMETER:
                            owner_entities.add(holder.entity_type)
    if len(owner_entities) > 1:
        raise ValidationError(f"constraint at line {lineno} mixes owner entities {owner_entities}")
    if owner_entities:
        return b.global_span_of(owner_entities.pop())
    # element-wise over the single family present
    fams = {v.name for v in ex.var_refs(lhs) if v.name in b.families}
    fams |= {v.name for v in ex.var_refs(rhs) if v.name in b.families}
    if len(fams) != 1:
        raise ValidationError(f"constraint at line {lineno}: cannot infer its element set")
    return b.families[next(iter(fams))].span


def parse_program(text: str, schema: NetworkSchema | None = None) -> ControlProblemSpec:
    """Parse program text into a validated problem spec.

    Deterministic; identical text yields structurally equal specs.
    Raises ParseError (syntax) or ValidationError (semantic rules).
    """
    schema = schema or build_default_schema()
    b = _ProgramBuilder(schema)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if _STMT_SET.match(line):
            cur = _after_call(line, lineno)
            key = _parse_value(cur)
            cur.expect("op", ",")
            value = _parse_value(cur)
            cur.expect("op", ")")
            b.settings[str(key)] = value
        elif _STMT_VAR.match(line):
            _parse_make_var(_after_call(line, lineno), b, lineno)
        elif _STMT_CSTR.match(line):
            cur = _after_call(line, lineno)
            mathtext = cur.expect("str")
            cur.expect("op", ",")
            names = cur.expect("str")
            cur.expect("op", ")")
            _check_var_list(names, b, lineno)
            lhs, rel, rhs, strict = _make_math_parser(mathtext, lineno, b).parse_relation()
            forall = _constraint_forall(b, lhs, rhs, lineno)
            c = compare(lhs, rel, rhs, schema=b.schema, known_names=b.families.keys())
            b.constraints.append(replace(c, forall=forall, strict=strict))
        elif _STMT_OBJ.match(line):
            cur = _after_call(line, lineno)
            k, sense, col = cur.next()
            if k != "ident" or sense not in ("max", "min"):
                raise ParseError(f"objective sense must be max or min, got {sense!r}", lineno, col)
            cur.expect("op", ",")
            name = cur.expect("ident")
            cur.expect("op", ")")
            if name not in b.exprs:
                raise ParseError(f"objective references undefined expression {name!r}", lineno)
            b.sense = "maximize" if sense == "max" else "minimize"
            b.utility_name = name
        else:
            m = _STMT_EXPR.match(line)
            if not m:
                raise ParseError(f"unrecognized statement: {line!r}", lineno, 1)
            cur = _after_call(line, lineno)
            mathtext = cur.expect("str")
            cur.expect("op", ",")
            names = cur.expect("str")
            cur.expect("op", ")")
            _check_var_list(names, b, lineno)
            b.exprs[m.group(1)] = _make_math_parser(mathtext, lineno, b).parse_expression()

    return _finish(b)


def _after_call(line: str, lineno: int) -> _Cursor:
    """Cursor positioned just after the opening parenthesis of the call."""
    idx = line.index("(")
    return _Cursor(_tokenize(line[idx + 1:], lineno), lineno)


def _check_var_list(names: str, b: _ProgramBuilder, lineno: int):
    for n in names.split(","):
        n = n.strip()
        if n and n not in b.families:
            raise ParseError(f"vars argument names undeclared variable {n!r}", lineno)


def _finish(b: _ProgramBuilder) -> ControlProblemSpec:
    if b.sense is None or b.utility_name is None:
        raise ValidationError("program defines no objective")
    utility = b.exprs[b.utility_name]

    # pull explicit bounds out of settings; defaults per layer otherwise
    settings = dict(b.settings)
    families = []
    for fam in b.families.values():
        key = f"bounds.{fam.name}"
        if key in settings:
            lo, hi = settings.pop(key)
            bounds = (float(lo), float(hi))
        elif fam.layer == Layer.TRANSPORT:
            bounds = DEFAULT_RATE_BOUNDS
        else:
            bounds = DEFAULT_POWER_BOUNDS
        families.append(replace(fam, bounds=bounds))

    spec = ControlProblemSpec(
        sense=b.sense, utility=utility, constraints=list(b.constraints),
        variables=families, settings=settings, schema=b.schema,
    )
    _validate(spec)
    return spec


def _appears(spec: ControlProblemSpec, fam: VariableFamily) -> bool:
    exprs = [spec.utility]
    for c in spec.constraints:
        exprs += [c.lhs, c.rhs]
    for e in exprs:
        for v in ex.var_refs(e):
            if v.name == fam.name:
                return True
            if spec.schema.has_element(v.name):
                if fam.element in spec.schema.function_closure(v.name):
                    return True
    return False


def _linear_in(utility: ex.Expr, name: str) -> bool:
    """True when the family appears in the utility outside log/sqrt."""
    def scan(e, shielded):
        if e.op == ex.VAR:
            return e.name == name and not shielded
        inner = shielded or e.op in (ex.LOG, ex.SQRT)
        return any(scan(a, inner) for a in e.args)
    return scan(utility, False)


def _validate(spec: ControlProblemSpec):
    for fam in spec.variables:
        if not _appears(spec, fam):
            raise ValidationError(
                f"variable {fam.name!r} appears in neither utility nor constraints")
        if _linear_in(spec.utility, fam.name):
            if not all(math.isfinite(v) for v in fam.bounds):
                raise ValidationError(
                    f"variable {fam.name!r} enters the utility linearly and needs finite bounds")
        if spec.sense == "minimize" and not all(math.isfinite(v) for v in fam.bounds):
            raise ValidationError(f"variable {fam.name!r} needs finite bounds")


# -- pretty printer -----------------------------------------------------------

def _fmt_value(v) -> str:
    if isinstance(v, str):
        return f"'{v}'"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    return str(v)


def _math_render(e: ex.Expr, spec: ControlProblemSpec) -> str:
    if e.op == ex.CONST:
        v = e.value
        return str(int(v)) if v == int(v) else repr(v)
    if e.op == ex.VAR:
        return e.name
    if e.op in (ex.LOG, ex.SQRT):
        return f"{e.op}({_math_render(e.args[0], spec)})"
    if e.op == ex.SUM_OVER:
        body = _math_render(e.args[0], spec)
        fams = {v.name for v in ex.var_refs(e.args[0]) if v.name in spec.family_names()}
        if len(fams) == 1 and spec.family(next(iter(fams))).span == e.over:
            return f"sum({body})"
        return f"sum({body}, {e.over})"
    if e.op == ex.MUL:
        parts, sign = [], ""
        for f in e.args:
            if f.op == ex.CONST and f.value == -1.0:
                sign = "-"
            elif f.op == ex.ADD:
                parts.append(f"({_math_render(f, spec)})")
            else:
                parts.append(_math_render(f, spec))
        return sign + "*".join(parts)
    out = []
    for i, t in enumerate(e.args):
        s = _math_render(t, spec)
        if i == 0:
            out.append(s)
        elif s.startswith("-"):
            out.append(" - " + s[1:])
        else:
            out.append(" + " + s)
    return "".join(out)


_REL_RENDER = {("le", True): "<", ("le", False): "<=", ("ge", True): ">",
               ("ge", False): ">=", ("eq", False): "=="}


def format_program(spec: ControlProblemSpec) -> str:
    """Emit DSL text that reparses to a structurally equal spec."""
    lines = []
    for k, v in spec.settings.items():
        lines.append(f"nt.set('{k}', {_fmt_value(v)})")
    for fam in spec.variables:
        chain = ", ".join(fam.path)
        idx = ", ".join("all" if s == "all" else str(s) for s in fam.index_spec)
        lines.append(f"nt.make_var('{fam.name}', [{chain}], [{idx}])")
        lines.append(f"nt.set('bounds.{fam.name}', [{_fmt_value(fam.bounds[0])}, {_fmt_value(fam.bounds[1])}])")
    for c in spec.constraints:
        used = sorted({v.name for side in (c.lhs, c.rhs) for v in ex.var_refs(side)
                       if v.name in spec.family_names()})
        rel = _REL_RENDER[(c.rel, c.strict)]
        lines.append(
            f"nt.add_cstr('{_math_render(c.lhs, spec)} {rel} {_math_render(c.rhs, spec)}', '{','.join(used)}')")
    used = sorted({v.name for v in ex.var_refs(spec.utility) if v.name in spec.family_names()})
    lines.append(f"expr = mkexpr('{_math_render(spec.utility, spec)}', '{','.join(used)}')")
    sense = "max" if spec.sense == "maximize" else "min"
    lines.append(f"nt.objective({sense}, expr)")
    return "\n".join(lines) + "\n"
