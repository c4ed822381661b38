"""Immutable math expressions over network parameters.

Expression nodes: constants, parameter/variable references (optionally
indexed by an instance member), n-ary sums and products, log, sqrt and
symbolic sums over a virtual element. Construction normalizes eagerly:
nested sums/products are flattened, additive and multiplicative
identities are dropped, and numeric factors are folded into one leading
coefficient. Canonical keys compare structures up to commutativity and
associativity of + and *.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ArityMismatch

CONST = "const"
VAR = "var"
ADD = "add"
MUL = "mul"
LOG = "log"
SQRT = "sqrt"
SUM_OVER = "sum_over"

_UNARY = (LOG, SQRT)


@dataclass(frozen=True)
class Expr:
    op: str
    args: tuple["Expr", ...] = ()
    value: float | None = None
    name: str | None = None
    index: int | None = None
    over: str | None = None

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Expr({render(self)})"


def const(value) -> Expr:
    return Expr(CONST, value=float(value))


def var(name: str, index: int | None = None) -> Expr:
    return Expr(VAR, name=name, index=index)


def add(*terms: Expr) -> Expr:
    flat: list[Expr] = []
    acc = 0.0
    for t in terms:
        if t.op == ADD:
            flat.extend(t.args)
        elif t.op == CONST:
            acc += t.value
        else:
            flat.append(t)
    if acc != 0.0:
        flat.append(const(acc))
    if not flat:
        return const(0.0)
    if len(flat) == 1:
        return flat[0]
    return Expr(ADD, args=tuple(flat))


def mul(*factors: Expr) -> Expr:
    flat: list[Expr] = []
    coeff = 1.0
    for f in factors:
        if f.op == MUL:
            # nested products carry their coefficient first
            for g in f.args:
                if g.op == CONST:
                    coeff *= g.value
                else:
                    flat.append(g)
        elif f.op == CONST:
            coeff *= f.value
        else:
            flat.append(f)
    if coeff == 0.0:
        return const(0.0)
    if not flat:
        return const(coeff)
    if coeff == 1.0:
        return flat[0] if len(flat) == 1 else Expr(MUL, args=tuple(flat))
    return Expr(MUL, args=(const(coeff), *flat))


def neg(e: Expr) -> Expr:
    return mul(const(-1.0), e)


def sub(a: Expr, b: Expr) -> Expr:
    return add(a, neg(b))


def div(a: Expr, b: Expr) -> Expr:
    if b.op != CONST or b.value == 0.0:
        raise ArityMismatch("division is only supported by a nonzero constant")
    return mul(a, const(1.0 / b.value))


def log(e: Expr) -> Expr:
    return Expr(LOG, args=(e,))


def sqrt(e: Expr) -> Expr:
    return Expr(SQRT, args=(e,))


def sum_over(element: str, body: Expr) -> Expr:
    return Expr(SUM_OVER, args=(body,), over=element)


_COMPOSERS = {
    "add": (add, None),
    "sub": (sub, 2),
    "mul": (mul, None),
    "product": (mul, None),
    "div": (div, 2),
    "neg": (neg, 1),
    "negate": (neg, 1),
    "log": (log, 1),
    "sqrt": (sqrt, 1),
}


def compose(op: str, args: list) -> Expr:
    """Build a new expression by applying a math operator to arguments.

    ``sum_over`` takes the virtual element (name or reference expression)
    first, then the body. All other operators take expressions only.
    """
    if not args:
        raise ArityMismatch(f"{op}: no arguments")
    if op == "sum_over":
        if len(args) != 2:
            raise ArityMismatch("sum_over: expected (element, body)")
        elem, body = args
        name = elem if isinstance(elem, str) else elem.name
        return sum_over(name, body)
    if op not in _COMPOSERS:
        raise ArityMismatch(f"unknown operator {op!r}")
    fn, arity = _COMPOSERS[op]
    if arity is not None and len(args) != arity:
        raise ArityMismatch(f"{op}: expected {arity} arguments, got {len(args)}")
    return fn(*args)


def expand(e: Expr) -> Expr:
    """Distribute products over sums, yielding sum-of-products form."""
    if e.op == ADD:
        return add(*[expand(t) for t in e.args])
    if e.op == MUL:
        factors = [expand(f) for f in e.args]
        for i, f in enumerate(factors):
            if f.op == ADD:
                rest = factors[:i] + factors[i + 1:]
                return add(*[expand(mul(t, *rest)) for t in f.args])
        return mul(*factors)
    return e


def _key(e: Expr) -> str:
    if e.op == CONST:
        return f"c[{e.value!r}]"
    if e.op == VAR:
        return f"v[{e.name}|{e.index}]"
    if e.op in _UNARY:
        return f"({e.op} {_key(e.args[0])})"
    if e.op == SUM_OVER:
        return f"(sum:{e.over} {_key(e.args[0])})"
    sep = "+" if e.op == ADD else "*"
    return f"({sep} " + " ".join(sorted(_key(a) for a in e.args)) + ")"


def canonical_key(e: Expr) -> str:
    """Order-insensitive structural key; expands to sum-of-products first."""
    return _key(expand(e))


def canonically_equal(a: Expr, b: Expr) -> bool:
    return canonical_key(a) == canonical_key(b)


def addends(e: Expr) -> tuple[Expr, ...]:
    return e.args if e.op == ADD else (e,)


def factors(e: Expr) -> tuple[Expr, ...]:
    return e.args if e.op == MUL else (e,)


def substitute(e: Expr, mapping) -> Expr:
    """Rebuild with ``mapping(var_expr) -> Expr`` applied to each reference."""
    if e.op == VAR:
        out = mapping(e)
        return e if out is None else out
    if e.op in (CONST,):
        return e
    rebuilt = tuple(substitute(a, mapping) for a in e.args)
    if e.op == ADD:
        return add(*rebuilt)
    if e.op == MUL:
        return mul(*rebuilt)
    if e.op == LOG:
        return log(rebuilt[0])
    if e.op == SQRT:
        return sqrt(rebuilt[0])
    return Expr(SUM_OVER, args=rebuilt, over=e.over)


def walk(e: Expr):
    """Yield every node, depth first."""
    yield e
    for a in e.args:
        yield from walk(a)


def var_refs(e: Expr) -> list[Expr]:
    return [n for n in walk(e) if n.op == VAR]


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def render(e: Expr) -> str:
    """Human-readable rendering used by the compile dumps."""
    if e.op == CONST:
        return _fmt_num(e.value)
    if e.op == VAR:
        if e.index is None:
            return e.name
        return f"{e.name}_{e.index:02d}"
    if e.op in _UNARY:
        return f"{e.op}({render(e.args[0])})"
    if e.op == SUM_OVER:
        return f"sum({render(e.args[0])} over {e.over})"
    if e.op == MUL:
        parts = []
        sign = ""
        for f in e.args:
            if f.op == CONST and f.value == -1.0:
                sign = "-"
            elif f.op == ADD:
                parts.append(f"({render(f)})")
            else:
                parts.append(render(f))
        return sign + "*".join(parts)
    # ADD: fold leading minus of each term into the separator
    out = []
    for i, t in enumerate(e.args):
        s = render(t)
        if i == 0:
            out.append(s)
        elif s.startswith("-"):
            out.append(" - " + s[1:])
        else:
            out.append(" + " + s)
    return "".join(out)
