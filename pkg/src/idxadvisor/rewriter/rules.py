"""Rewrite rules: loading, application to fixpoint, and cost-based ranking.

A rules file is JSON ``{"format": 1, "version": ..., "rules": [...]}``; each
rule has ``name``, ``source`` and ``target`` patterns (see
:mod:`idxadvisor.rewriter.sexpr`), a list of ``constraints`` and an
``estimated_benefit`` prior. Constraints are checked against the catalog:

``(not-member X Y...)``   X is none of Y
``(nonempty X...)``       at least one item
``(no-aggregates X...)``  no aggregate among the items
``(any-unique X...)``     some item is a column declared unique
``(unique C)``            column C is declared unique
``(subset (seq A...) (seq B...))``  every A occurs among B
``(not-null C)``          column C holds no NULLs (always true here)
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from ..catalog import Catalog
from ..sqlfront.ast import Query, QueryAst
from ..sqlfront.parser import SqlError, parse, unparse
from .sexpr import (
    PatternError,
    from_term,
    instantiate,
    match,
    read,
    to_term,
    variables,
)

log = logging.getLogger(__name__)

RULES_FORMAT = 1
_LOCAL_LIMIT = 64


@dataclass(frozen=True)
class RewriteRule:
    name: str
    source: str
    target: str
    constraints: tuple[str, ...] = ()
    estimated_benefit: float = 0.0
    _compiled: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        src, tgt = read(self.source), read(self.target)
        cons = tuple(read(c) for c in self.constraints)
        extra = variables(tgt) - variables(src)
        for c in cons:
            extra |= variables(c) - variables(src)
        if extra:
            raise PatternError(f"rule {self.name}: variables {sorted(extra)} unbound by source")
        object.__setattr__(self, "_compiled", (src, tgt, cons))

    def to_dict(self) -> dict:
        return {"name": self.name, "source": self.source, "target": self.target,
                "constraints": list(self.constraints), "estimated_benefit": self.estimated_benefit}


def rules_from_dict(doc: dict) -> list[RewriteRule]:
    if doc.get("format") != RULES_FORMAT:
        raise PatternError(f"unsupported rules format {doc.get('format')!r}")
    return [RewriteRule(r["name"], r["source"], r["target"], tuple(r.get("constraints", ())),
                        float(r.get("estimated_benefit", 0.0))) for r in doc["rules"]]


def load_rules(path: str | Path | None = None) -> list[RewriteRule]:
    """Load a rules file; without a path, the shipped v1 rule set."""
    if path is None:
        text = resources.files(__package__).joinpath("rules_v1.json").read_text()
    else:
        text = Path(path).read_text()
    return rules_from_dict(json.loads(text))


def _is_col(t) -> bool:
    return isinstance(t, tuple) and len(t) == 3 and t[0] == "col"


def _check(constraint: tuple, catalog: Catalog) -> bool:
    name, args = constraint[0], constraint[1:]
    if name == "not-member":
        return args[0] not in args[1:]
    if name == "nonempty":
        return len(args) > 0
    if name == "no-aggregates":
        return not any(isinstance(a, tuple) and a and a[0] == "agg" for a in args)
    if name == "any-unique":
        return any(_is_col(a) and catalog.column(a[1], a[2]).unique for a in args)
    if name == "unique":
        return _is_col(args[0]) and catalog.column(args[0][1], args[0][2]).unique
    if name == "subset":
        a, b = args
        return set(a[1:]) <= set(b[1:])
    if name == "not-null":
        return _is_col(args[0])
    raise PatternError(f"unknown constraint {name!r}")


def _rewrite_node(term, rule: RewriteRule, catalog: Catalog):
    src, tgt, cons = rule._compiled
    for b in match(src, term):
        if all(_check(instantiate(c, b), catalog) for c in cons):
            out = instantiate(tgt, b)
            if out != term:
                return out
    return None


def _rewrite_anywhere(term, rule: RewriteRule, catalog: Catalog):
    """Rewrite the first (pre-order) node where ``rule`` changes something."""
    out = _rewrite_node(term, rule, catalog)
    if out is not None:
        return out
    if isinstance(term, tuple):
        for i, child in enumerate(term):
            sub = _rewrite_anywhere(child, rule, catalog)
            if sub is not None:
                return term[:i] + (sub,) + term[i + 1:]
    return None


def apply_rule(ast: QueryAst, rule: RewriteRule, catalog: Catalog) -> QueryAst | None:
    """One application of ``rule``; None when it does not fire or fails."""
    try:
        new_term = _rewrite_anywhere(to_term(ast), rule, catalog)
        if new_term is None:
            return None
        # round-trip through SQL so the result is fully re-resolved
        return parse(unparse(from_term(new_term)), catalog)
    except (PatternError, SqlError, KeyError, IndexError, TypeError) as exc:
        log.warning("rule %s skipped: %s", rule.name, exc)
        return None


def rewrite_ast(ast: QueryAst, rules: Sequence[RewriteRule], catalog: Catalog,
                max_passes: int = 5) -> QueryAst:
    for _ in range(max_passes):
        changed = False
        for rule in rules:
            # each rule runs to its own local fixpoint inside a pass
            for _ in range(_LOCAL_LIMIT):
                new = apply_rule(ast, rule, catalog)
                if new is None or new == ast:
                    break
                ast, changed = new, True
        if not changed:
            break
    return ast


def apply_rules(q: Query, rules: Sequence[RewriteRule], catalog: Catalog,
                max_passes: int = 5) -> Query:
    new_ast = rewrite_ast(q.ast, rules, catalog, max_passes)
    if new_ast == q.ast:
        return q
    return replace(q, text=unparse(new_ast), ast=new_ast, columns=None)


@dataclass(frozen=True)
class RuleRanking:
    rule: RewriteRule
    saving: float
    fired: int


def rank_rules(rules: Iterable[RewriteRule], workload: Iterable[Query], costmodel,
               catalog: Catalog | None = None) -> list[RuleRanking]:
    """Order rules by frequency-weighted cost saving; drop non-positive ones."""
    catalog = catalog or costmodel.catalog
    queries = list(workload)
    base = {}
    ranked = []
    for rule in rules:
        saving, fired = 0.0, 0
        for q in queries:
            new = rewrite_ast(q.ast, [rule], catalog)
            if new == q.ast:
                continue
            fired += 1
            if q.id not in base:
                base[q.id] = costmodel.query_cost(q)
            saving += q.frequency * (base[q.id] - costmodel.query_cost(new))
        if fired and saving > 0:
            ranked.append(RuleRanking(rule, saving, fired))
    ranked.sort(key=lambda r: (-r.saving, r.rule.name))
    return ranked
