"""Recursive-descent parser and unparser for the supported SELECT subset.

Grammar (keywords case-insensitive)::

    query   := SELECT [DISTINCT] items FROM source [WHERE conds]
               [GROUP BY cols] [ORDER BY order_items] [';']
    items   := '*' | item {',' item}
    item    := col [AS name] | AGG '(' ('*' | col) ')' [AS name]
    source  := table {',' table | [INNER] JOIN table ON col '=' col {AND col '=' col}}
    conds   := cond {AND cond}
    cond    := '(' cond ')' | operand op operand
             | col BETWEEN lit AND lit
             | col IN '(' lit {',' lit} ')'
             | col IN '(' query ')'           -- one level, uncorrelated
    operand := col | lit        op := = | < | <= | > | >=

OR, NOT, <>, self-joins, correlated or nested subqueries are rejected
with :class:`UnsupportedSqlError`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..catalog import Catalog
from .ast import (
    AGGREGATES,
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


class SqlError(ValueError):
    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        super().__init__(message if pos is None else f"{message} (at position {pos})")


class SqlSyntaxError(SqlError):
    pass


class UnknownIdentifierError(SqlError):
    pass


class UnsupportedSqlError(SqlError):
    """Valid SQL outside the supported subset; callers may skip the query."""


KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "AND", "OR", "NOT",
    "IN", "BETWEEN", "JOIN", "INNER", "ON", "AS", "ASC", "DESC", "HAVING", "UNION",
    "LEFT", "RIGHT", "OUTER", "LIMIT", "EXISTS", "LIKE", "IS", "NULL",
} | set(AGGREGATES)

_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?![\w.]))
      | (?P<str>'(?:[^']|'')*')
      | (?P<op><=|>=|<>|!=|[=<>(),.*;])
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | str | op | ident | kw | eof
    value: object
    pos: int


def tokenize(sql: str) -> list[Token]:
    tokens = []
    pos = 0
    n = len(sql)
    while True:
        while pos < n and sql[pos].isspace():
            pos += 1
        if pos >= n:
            break
        m = _TOKEN_RE.match(sql, pos)
        if not m or m.end() == pos:
            raise SqlSyntaxError(f"unexpected character {sql[pos]!r}", pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "num":
            tokens.append(Token("num", int(text), start))
        elif kind == "str":
            tokens.append(Token("str", text[1:-1].replace("''", "'"), start))
        elif kind == "ident":
            up = text.upper()
            if up in KEYWORDS:
                tokens.append(Token("kw", up, start))
            else:
                tokens.append(Token("ident", text, start))
        else:
            tokens.append(Token("op", text, start))
        pos = m.end()
    tokens.append(Token("eof", None, n))
    return tokens


# raw (unresolved) pieces produced before FROM is known
@dataclass(frozen=True)
class _RawCol:
    qualifier: str | None
    name: str
    pos: int


@dataclass
class _RawQuery:
    distinct: bool
    star: bool
    items: list  # (_RawCol) | ("agg", func, _RawCol|None, pos)
    tables: list  # (name, pos)
    joins: list  # (_RawCol, _RawCol, pos)
    conds: list  # raw condition tuples
    group_by: list
    order_by: list  # (_RawCol, desc)
    pos: int


_UNSUPPORTED_KW = {"OR", "NOT", "HAVING", "UNION", "LEFT", "RIGHT", "OUTER", "LIMIT",
                   "EXISTS", "LIKE", "IS", "NULL"}


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.toks = tokenize(sql)
        self.i = 0

    # token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def at_kw(self, *kws: str) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.value in kws

    def at_op(self, *ops: str) -> bool:
        t = self.peek()
        return t.kind == "op" and t.value in ops

    def expect_kw(self, kw: str) -> Token:
        t = self.next()
        if t.kind != "kw" or t.value != kw:
            self._unexpected(t, kw)
        return t

    def expect_op(self, op: str) -> Token:
        t = self.next()
        if t.kind != "op" or t.value != op:
            self._unexpected(t, repr(op))
        return t

    def _unexpected(self, t: Token, wanted: str):
        if t.kind == "kw" and t.value in _UNSUPPORTED_KW:
            raise UnsupportedSqlError(f"unsupported construct {t.value}", t.pos)
        if t.kind == "op" and t.value in ("<>", "!="):
            raise UnsupportedSqlError(f"unsupported operator {t.value}", t.pos)
        got = "end of input" if t.kind == "eof" else repr(t.value)
        raise SqlSyntaxError(f"expected {wanted}, got {got}", t.pos)

    def ident(self) -> Token:
        t = self.next()
        if t.kind != "ident":
            self._unexpected(t, "identifier")
        return t

    def column(self) -> _RawCol:
        t = self.ident()
        if self.at_op("."):
            self.next()
            c = self.ident()
            return _RawCol(t.value, c.value, t.pos)
        return _RawCol(None, t.value, t.pos)

    # grammar
    def query(self, depth: int = 0) -> _RawQuery:
        start = self.expect_kw("SELECT").pos
        distinct = False
        if self.at_kw("DISTINCT"):
            self.next()
            distinct = True
        star = False
        items = []
        if self.at_op("*"):
            self.next()
            star = True
        else:
            items.append(self.select_item())
            while self.at_op(","):
                self.next()
                items.append(self.select_item())
        self.expect_kw("FROM")
        tables, joins = self.source()
        conds = []
        if self.at_kw("WHERE"):
            self.next()
            conds.append(self.cond(depth))
            while self.at_kw("AND"):
                self.next()
                conds.append(self.cond(depth))
        group_by = []
        if self.at_kw("GROUP"):
            self.next()
            self.expect_kw("BY")
            group_by.append(self.column())
            while self.at_op(","):
                self.next()
                group_by.append(self.column())
        order_by = []
        if self.at_kw("ORDER"):
            self.next()
            self.expect_kw("BY")
            order_by.append(self.order_item())
            while self.at_op(","):
                self.next()
                order_by.append(self.order_item())
        return _RawQuery(distinct, star, items, tables, joins, conds, group_by, order_by, start)

    def select_item(self):
        t = self.peek()
        if t.kind == "kw" and t.value in AGGREGATES:
            self.next()
            self.expect_op("(")
            if self.at_op("*"):
                self.next()
                arg = None
                if t.value != "COUNT":
                    raise SqlSyntaxError(f"{t.value}(*) is not valid", t.pos)
            else:
                if self.at_kw("DISTINCT"):
                    raise UnsupportedSqlError("aggregate DISTINCT", self.peek().pos)
                arg = self.column()
            self.expect_op(")")
            item = ("agg", t.value, arg, t.pos)
        else:
            item = self.column()
        if self.at_kw("AS"):
            self.next()
            self.ident()
        return item

    def source(self):
        tables = [self.table()]
        joins = []
        while True:
            if self.at_op(","):
                self.next()
                tables.append(self.table())
            elif self.at_kw("JOIN", "INNER"):
                if self.at_kw("INNER"):
                    self.next()
                self.expect_kw("JOIN")
                tables.append(self.table())
                self.expect_kw("ON")
                joins.append(self.join_cond())
                while self.at_kw("AND"):
                    self.next()
                    joins.append(self.join_cond())
            else:
                break
        return tables, joins

    def table(self):
        t = self.ident()
        if self.peek().kind == "ident" or self.at_kw("AS"):
            raise UnsupportedSqlError("table aliases", self.peek().pos)
        return (t.value, t.pos)

    def join_cond(self):
        left = self.column()
        op = self.next()
        if op.kind != "op" or op.value != "=":
            if op.kind == "op" and op.value in ("<", "<=", ">", ">=", "<>", "!="):
                raise UnsupportedSqlError("non-equi join", op.pos)
            self._unexpected(op, "'='")
        right = self.column()
        return (left, right, left.pos)

    def order_item(self):
        col = self.column()
        desc = False
        if self.at_kw("ASC"):
            self.next()
        elif self.at_kw("DESC"):
            self.next()
            desc = True
        return (col, desc)

    def operand(self):
        t = self.peek()
        if t.kind in ("num", "str"):
            self.next()
            return ("lit", t.value, t.pos)
        if t.kind == "ident":
            return ("col", self.column())
        self._unexpected(t, "column or literal")

    def literal(self):
        t = self.next()
        if t.kind not in ("num", "str"):
            self._unexpected(t, "literal")
        return t.value

    def cond(self, depth: int):
        if self.at_op("("):
            self.next()
            c = self.cond(depth)
            if self.at_kw("OR"):
                raise UnsupportedSqlError("disjunction (OR)", self.peek().pos)
            self.expect_op(")")
            return c
        if self.at_kw("NOT", "EXISTS"):
            raise UnsupportedSqlError(f"unsupported construct {self.peek().value}", self.peek().pos)
        start = self.peek().pos
        left = self.operand()
        if left[0] == "col" and self.at_kw("BETWEEN"):
            self.next()
            lo = self.literal()
            self.expect_kw("AND")
            hi = self.literal()
            return ("between", left[1], lo, hi, start)
        if left[0] == "col" and self.at_kw("IN"):
            self.next()
            self.expect_op("(")
            if self.at_kw("SELECT"):
                if depth >= 1:
                    raise UnsupportedSqlError("nested subquery", self.peek().pos)
                sub = self.query(depth + 1)
                self.expect_op(")")
                return ("insub", left[1], sub, start)
            vals = [self.literal()]
            while self.at_op(","):
                self.next()
                vals.append(self.literal())
            self.expect_op(")")
            return ("inlist", left[1], tuple(vals), start)
        if self.at_kw("NOT"):
            raise UnsupportedSqlError("NOT", self.peek().pos)
        op = self.next()
        if op.kind != "op" or op.value not in ("=", "<", "<=", ">", ">="):
            self._unexpected(op, "comparison operator")
        right = self.operand()
        cond = ("cmp", left, op.value, right, start)
        if self.at_kw("OR"):
            raise UnsupportedSqlError("disjunction (OR)", self.peek().pos)
        return cond


_FLIP = {"=": "=", "<": ">", "<=": ">=", ">": "<", ">=": "<="}


def _compare(a, op: str, b) -> bool:
    return {"=": a == b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]


class _Resolver:
    def __init__(self, catalog: Catalog):
        self.catalog = catalog

    def resolve(self, raw: _RawQuery, outer_tables: tuple[str, ...] = ()) -> QueryAst:
        tables = []
        for name, pos in raw.tables:
            if not self.catalog.has_table(name):
                raise UnknownIdentifierError(f"unknown table {name!r}", pos)
            if name in tables or name in outer_tables:
                raise UnsupportedSqlError(f"table {name!r} referenced twice (self-join)", pos)
            tables.append(name)
        tables_t = tuple(tables)

        def col(rc: _RawCol) -> ColumnRef:
            return self._col(rc, tables_t, outer_tables)

        if raw.star:
            select = tuple(ColumnRef(t, c) for t in tables_t
                           for c in self.catalog.table(t).column_names)
        else:
            select = []
            for item in raw.items:
                if isinstance(item, _RawCol):
                    select.append(col(item))
                else:
                    _, func, arg, pos = item
                    ref = col(arg) if arg is not None else None
                    if ref is not None and func in ("SUM", "AVG"):
                        if self.catalog.column(ref.table, ref.column).type != "int":
                            raise SqlError(f"{func} needs an int column, got {ref}", pos)
                    select.append(Aggregate(func, ref))
            select = tuple(select)

        joins = []
        for lc, rc, pos in raw.joins:
            joins.append(self._join(col(lc), col(rc), pos))
        where = []
        for c in raw.conds:
            kind = c[0]
            if kind == "between":
                ref = col(c[1])
                self._check_literal(ref, c[2], c[4])
                self._check_literal(ref, c[3], c[4])
                where.append(Between(ref, c[2], c[3]))
            elif kind == "inlist":
                ref = col(c[1])
                for v in c[2]:
                    self._check_literal(ref, v, c[3])
                where.append(InList(ref, c[2]))
            elif kind == "insub":
                ref = col(c[1])
                sub = self.resolve(c[2], outer_tables=tables_t)
                if len(sub.select) != 1 or not isinstance(sub.select[0], ColumnRef):
                    raise UnsupportedSqlError("IN-subquery must select exactly one column", c[3])
                if sub.has_aggregates() or sub.group_by:
                    raise UnsupportedSqlError("aggregating IN-subquery", c[3])
                where.append(InSubquery(ref, sub))
            else:
                _, left, op, right, pos = c
                if left[0] == "lit" and right[0] == "lit":
                    a, b = left[1], right[1]
                    if type(a) is not type(b):
                        raise SqlError("comparison between int and string literals", pos)
                    where.append(ConstPred(_compare(a, op, b)))
                elif left[0] == "col" and right[0] == "col":
                    if op != "=":
                        raise UnsupportedSqlError("non-equi column comparison", pos)
                    joins.append(self._join(col(left[1]), col(right[1]), pos))
                else:
                    if left[0] == "lit":
                        left, right, op = right, left, _FLIP[op]
                    ref = col(left[1])
                    self._check_literal(ref, right[1], pos)
                    where.append(Comparison(ref, op, right[1]))

        group_by = tuple(col(g) for g in raw.group_by)
        order_by = tuple(OrderItem(col(o), d) for o, d in raw.order_by)
        ast = QueryAst(select, tables_t, tuple(joins), tuple(where), group_by, order_by, raw.distinct)
        if ast.has_aggregates() or group_by:
            for item in select:
                if isinstance(item, ColumnRef) and item not in group_by:
                    raise SqlError(f"column {item} must appear in GROUP BY", raw.pos)
        return ast

    def _join(self, a: ColumnRef, b: ColumnRef, pos: int) -> JoinPred:
        if a.table == b.table:
            raise UnsupportedSqlError("column comparison within one table", pos)
        ta = self.catalog.column(a.table, a.column).type
        tb = self.catalog.column(b.table, b.column).type
        if ta != tb:
            raise SqlError(f"join between {ta} and {tb} columns", pos)
        return JoinPred.make(a, b)

    def _check_literal(self, ref: ColumnRef, value, pos: int):
        ctype = self.catalog.column(ref.table, ref.column).type
        if ctype == "int" and not isinstance(value, int):
            raise SqlError(f"int column {ref} compared with string literal", pos)
        if ctype == "cat" and not isinstance(value, str):
            raise SqlError(f"categorical column {ref} compared with int literal", pos)

    def _col(self, rc: _RawCol, tables: tuple[str, ...], outer: tuple[str, ...]) -> ColumnRef:
        if rc.qualifier is not None:
            if rc.qualifier in tables:
                if not self.catalog.table(rc.qualifier).has_column(rc.name):
                    raise UnknownIdentifierError(f"unknown column {rc.qualifier}.{rc.name}", rc.pos)
                return ColumnRef(rc.qualifier, rc.name)
            if rc.qualifier in outer:
                raise UnsupportedSqlError("correlated subquery", rc.pos)
            raise UnknownIdentifierError(f"unknown table {rc.qualifier!r}", rc.pos)
        owners = [t for t in tables if self.catalog.table(t).has_column(rc.name)]
        if len(owners) == 1:
            return ColumnRef(owners[0], rc.name)
        if len(owners) > 1:
            raise SqlError(f"ambiguous column {rc.name!r}", rc.pos)
        if any(self.catalog.table(t).has_column(rc.name) for t in outer):
            raise UnsupportedSqlError("correlated subquery", rc.pos)
        raise UnknownIdentifierError(f"unknown column {rc.name!r}", rc.pos)


def parse(sql: str, catalog: Catalog) -> QueryAst:
    p = _Parser(sql)
    raw = p.query()
    if p.at_op(";"):
        p.next()
    t = p.peek()
    if t.kind != "eof":
        p._unexpected(t, "end of input")
    return _Resolver(catalog).resolve(raw)


def _lit(v) -> str:
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    return str(v)


def _pred_sql(p) -> str:
    if isinstance(p, Comparison):
        return f"{p.column} {p.op} {_lit(p.value)}"
    if isinstance(p, Between):
        return f"{p.column} BETWEEN {_lit(p.low)} AND {_lit(p.high)}"
    if isinstance(p, InList):
        return f"{p.column} IN ({', '.join(_lit(v) for v in p.values)})"
    if isinstance(p, InSubquery):
        return f"{p.column} IN ({unparse(p.subquery)})"
    if isinstance(p, ConstPred):
        return "1 = 1" if p.value else "1 = 0"
    raise TypeError(f"unknown predicate {p!r}")


def unparse(ast: QueryAst) -> str:
    parts = ["SELECT"]
    if ast.distinct:
        parts.append("DISTINCT")
    items = []
    for s in ast.select:
        if isinstance(s, Aggregate):
            items.append(f"{s.func}({'*' if s.arg is None else s.arg})")
        else:
            items.append(str(s))
    parts.append(", ".join(items))
    parts.append("FROM " + ", ".join(ast.tables))
    conds = [f"{j.left} = {j.right}" for j in ast.joins] + [_pred_sql(p) for p in ast.where]
    if conds:
        parts.append("WHERE " + " AND ".join(conds))
    if ast.group_by:
        parts.append("GROUP BY " + ", ".join(str(c) for c in ast.group_by))
    if ast.order_by:
        parts.append("ORDER BY " + ", ".join(
            f"{o.column} DESC" if o.desc else str(o.column) for o in ast.order_by))
    return " ".join(parts)
