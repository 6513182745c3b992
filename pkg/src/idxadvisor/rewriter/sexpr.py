"""S-expression view of the AST and the rule pattern language.

Terms are nested tuples headed by a symbol::

    (query DISTINCT (seq SELECT...) (seq TABLE...) (seq JOIN...)
           (seq PRED...) (seq GROUP-COL...) (seq ORDER-ITEM...))
    (col t a)            (agg count *)          (join (col t a) (col s b))
    (cmp = (col t a) (lit 5))   (between (col t a) (lit 1) (lit 9))
    (in (col t a) (seq (lit 1) (lit 2)))   (in-subq (col t a) (query ...))
    (const true)         (asc (col t a))        (desc (col t a))

Patterns use the same syntax plus ``?x`` (one term, repeated occurrences
must be equal), ``?*x`` (a run of zero or more sequence items), ``_`` and
``_*`` (anonymous). Targets may splice ``(@sorted ITEMS...)``, which sorts
its items canonically.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

from ..sqlfront.ast import (
    Aggregate,
    Between,
    ColumnRef,
    Comparison,
    ConstPred,
    InList,
    InSubquery,
    JoinPred,
    OrderItem,
    QueryAst,
)


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class SegVar:
    name: str | None  # None for the anonymous ``_*``


@dataclass(frozen=True)
class Wild:
    pass


@dataclass(frozen=True)
class Builtin:
    name: str
    args: tuple


# AST <-> term

def _col(c: ColumnRef) -> tuple:
    return ("col", c.table, c.column)


def _lit(v) -> tuple:
    return ("lit", v)


def to_term(ast: QueryAst) -> tuple:
    select = []
    for s in ast.select:
        if isinstance(s, Aggregate):
            select.append(("agg", s.func.lower(), "*" if s.arg is None else _col(s.arg)))
        else:
            select.append(_col(s))
    where = []
    for p in ast.where:
        if isinstance(p, Comparison):
            where.append(("cmp", p.op, _col(p.column), _lit(p.value)))
        elif isinstance(p, Between):
            where.append(("between", _col(p.column), _lit(p.low), _lit(p.high)))
        elif isinstance(p, InList):
            where.append(("in", _col(p.column), ("seq", *(_lit(v) for v in p.values))))
        elif isinstance(p, InSubquery):
            where.append(("in-subq", _col(p.column), to_term(p.subquery)))
        elif isinstance(p, ConstPred):
            where.append(("const", p.value))
        else:
            raise TypeError(p)
    return (
        "query",
        ast.distinct,
        ("seq", *select),
        ("seq", *ast.tables),
        ("seq", *(("join", _col(j.left), _col(j.right)) for j in ast.joins)),
        ("seq", *where),
        ("seq", *(_col(g) for g in ast.group_by)),
        ("seq", *((("desc" if o.desc else "asc"), _col(o.column)) for o in ast.order_by)),
    )


def _expect(term, head: str, arity: int | None = None) -> tuple:
    if not isinstance(term, tuple) or not term or term[0] != head:
        raise PatternError(f"expected ({head} ...), got {term!r}")
    if arity is not None and len(term) != arity + 1:
        raise PatternError(f"({head} ...) takes {arity} arguments, got {len(term) - 1}")
    return term


def _from_col(term) -> ColumnRef:
    _expect(term, "col", 2)
    return ColumnRef(term[1], term[2])


def _from_lit(term):
    return _expect(term, "lit", 1)[1]


def from_term(term) -> QueryAst:
    _, distinct, select, tables, joins, where, group, order = _expect(term, "query", 7)
    if not isinstance(distinct, bool):
        raise PatternError("query DISTINCT flag must be true/false")
    sel = []
    for s in _expect(select, "seq")[1:]:
        if isinstance(s, tuple) and s and s[0] == "agg":
            arg = None if s[2] == "*" else _from_col(s[2])
            sel.append(Aggregate(s[1].upper(), arg))
        else:
            sel.append(_from_col(s))
    preds = []
    for p in _expect(where, "seq")[1:]:
        head = p[0] if isinstance(p, tuple) and p else None
        if head == "cmp":
            preds.append(Comparison(_from_col(p[2]), p[1], _from_lit(p[3])))
        elif head == "between":
            preds.append(Between(_from_col(p[1]), _from_lit(p[2]), _from_lit(p[3])))
        elif head == "in":
            preds.append(InList(_from_col(p[1]), tuple(_from_lit(v) for v in _expect(p[2], "seq")[1:])))
        elif head == "in-subq":
            preds.append(InSubquery(_from_col(p[1]), from_term(p[2])))
        elif head == "const":
            preds.append(ConstPred(bool(p[1])))
        else:
            raise PatternError(f"unknown predicate term {p!r}")
    join_preds = []
    for j in _expect(joins, "seq")[1:]:
        _expect(j, "join", 2)
        join_preds.append(JoinPred.make(_from_col(j[1]), _from_col(j[2])))
    order_items = []
    for o in _expect(order, "seq")[1:]:
        if not isinstance(o, tuple) or o[0] not in ("asc", "desc"):
            raise PatternError(f"bad order item {o!r}")
        order_items.append(OrderItem(_from_col(o[1]), o[0] == "desc"))
    return QueryAst(
        select=tuple(sel),
        tables=tuple(_expect(tables, "seq")[1:]),
        joins=tuple(join_preds),
        where=tuple(preds),
        group_by=tuple(_from_col(g) for g in _expect(group, "seq")[1:]),
        order_by=tuple(order_items),
        distinct=distinct,
    )


# reader

_TOK = re.compile(r"\s*(?:(\()|(\))|('(?:[^']|'')*')|([^\s()']+))")


def read(text: str):
    """Parse one pattern/term from text."""
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOK.match(text, pos)
        if not m or m.end() == pos:
            raise PatternError(f"bad pattern syntax at {pos}: {text[pos:pos + 20]!r}")
        tokens.append(m.groups())
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    stack: list[list] = [[]]
    for lpar, rpar, string, atom in tokens:
        if lpar:
            stack.append([])
        elif rpar:
            if len(stack) == 1:
                raise PatternError("unbalanced ')'")
            items = stack.pop()
            if items and isinstance(items[0], str) and items[0].startswith("@"):
                stack[-1].append(Builtin(items[0][1:], tuple(items[1:])))
            else:
                stack[-1].append(tuple(items))
        elif string:
            stack[-1].append(string[1:-1].replace("''", "'"))
        else:
            stack[-1].append(_atom(atom))
    if len(stack) != 1 or len(stack[0]) != 1:
        raise PatternError("pattern must be exactly one balanced expression")
    return stack[0][0]


def _atom(tok: str):
    if tok == "_":
        return Wild()
    if tok == "_*":
        return SegVar(None)
    if tok.startswith("?*"):
        return SegVar(tok[2:])
    if tok.startswith("?"):
        return Var(tok[1:])
    if tok == "true":
        return True
    if tok == "false":
        return False
    if re.fullmatch(r"-?\d+", tok):
        return int(tok)
    return tok


def _same(a, b) -> bool:
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


# matching

def match(pattern, term, bindings: dict | None = None) -> Iterator[dict]:
    """Yield every binding under which ``pattern`` matches ``term``."""
    b = {} if bindings is None else bindings
    if isinstance(pattern, Wild):
        yield b
    elif isinstance(pattern, Var):
        if pattern.name in b:
            if _same(b[pattern.name], term):
                yield b
        else:
            yield {**b, pattern.name: term}
    elif isinstance(pattern, tuple):
        if isinstance(term, tuple):
            yield from _match_seq(pattern, term, 0, 0, b)
    elif isinstance(pattern, SegVar):
        raise PatternError("segment variable outside a sequence")
    elif _same(pattern, term):
        yield b


def _match_seq(ps: tuple, ts: tuple, i: int, j: int, b: dict) -> Iterator[dict]:
    if i == len(ps):
        if j == len(ts):
            yield b
        return
    p = ps[i]
    if isinstance(p, SegVar):
        if p.name is not None and p.name in b:
            seg = b[p.name]
            if _same(ts[j:j + len(seg)], seg):
                yield from _match_seq(ps, ts, i + 1, j + len(seg), b)
            return
        for k in range(j, len(ts) + 1):
            nb = b if p.name is None else {**b, p.name: ts[j:k]}
            yield from _match_seq(ps, ts, i + 1, k, nb)
        return
    if j >= len(ts):
        return
    for b2 in match(p, ts[j], b):
        yield from _match_seq(ps, ts, i + 1, j + 1, b2)


def canonical_key(term) -> str:
    return repr(term)


def _builtin(name: str, items: list) -> list:
    if name == "sorted":
        return sorted(items, key=canonical_key)
    raise PatternError(f"unknown builtin @{name}")


def instantiate(template, b: dict):
    if isinstance(template, Var):
        if template.name not in b:
            raise PatternError(f"unbound variable ?{template.name}")
        return b[template.name]
    if isinstance(template, (SegVar, Builtin)):
        raise PatternError("segment or builtin outside a sequence")
    if isinstance(template, Wild):
        raise PatternError("'_' cannot appear in a target")
    if isinstance(template, tuple):
        out = []
        for t in template:
            out.extend(_splice(t, b))
        return tuple(out)
    return template


def _splice(t, b: dict) -> list:
    if isinstance(t, SegVar):
        if t.name is None or t.name not in b:
            raise PatternError("unbound segment variable in target")
        return list(b[t.name])
    if isinstance(t, Builtin):
        items = []
        for a in t.args:
            items.extend(_splice(a, b))
        return _builtin(t.name, items)
    return [instantiate(t, b)]


def variables(pattern) -> set[str]:
    if isinstance(pattern, (Var, SegVar)):
        return {pattern.name} if pattern.name else set()
    if isinstance(pattern, Builtin):
        return set().union(*(variables(a) for a in pattern.args)) if pattern.args else set()
    if isinstance(pattern, tuple):
        return set().union(*(variables(p) for p in pattern)) if pattern else set()
    return set()
