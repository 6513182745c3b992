from .bag import BagResult, EquivalenceVerdict, check_equivalence, evaluate_bag
from .rules import (
    RewriteRule,
    RuleRanking,
    apply_rule,
    apply_rules,
    load_rules,
    rank_rules,
    rewrite_ast,
    rules_from_dict,
)
from .sexpr import PatternError, from_term, match, read, to_term


def validate_rule(rule, catalog, probes=300, trials=100, seed=0, min_fired=1):
    """Check a rule on random probe queries; returns (fired, first failure or None)."""
    from .probes import random_queries

    fired = 0
    for i, ast in enumerate(random_queries(catalog, probes, seed)):
        new = apply_rule(ast, rule, catalog)
        if new is None:
            continue
        fired += 1
        verdict = check_equivalence(ast, new, catalog, trials=trials, seed=seed * 7919 + i)
        if not verdict:
            return fired, (ast, new, verdict)
    return fired, None
