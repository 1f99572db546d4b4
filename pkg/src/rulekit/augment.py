"""Rule augmentation: abduction, inversion, and the staged pipeline.

Both transforms are purely syntactic rewrites over the inverse-closed
relation vocabulary; whether the derived rules actually fire is decided
later by the scoring module.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .kg import KnowledgeGraph, inverse_of
from .rules import Rule, RuleOrigin, RuleSet


@dataclass
class AugmentConfig:
    enable_abduction: bool = True
    enable_inversion: bool = True
    enable_random_walk: bool = True
    enable_filter: bool = True

    def any_enabled(self) -> bool:
        return (
            self.enable_abduction
            or self.enable_inversion
            or self.enable_random_walk
            or self.enable_filter
        )


def abduce(rule: Rule) -> list[Rule]:
    """One abduced rule per body atom, in body order.

    Assuming body atom i missing, the witness path is rotated so that the
    remaining body atoms plus the inverted head form the new body, and the
    inverse of the assumed atom becomes the new head:

        RH <- B1 .. BL   gives, for position i,
        !Bi <- B(i+1) .. BL !RH B1 .. B(i-1)
    """
    out = []
    inv_head = inverse_of(rule.head)
    body = rule.body
    for i in range(len(body)):
        new_body = body[i + 1 :] + (inv_head,) + body[:i]
        out.append(Rule(inverse_of(body[i]), new_body, RuleOrigin.ABDUCED))
    return out


def invert(rule: Rule) -> Rule:
    """Reverse the chain: ``!RH <- !BL .. !B1``."""
    new_body = tuple(inverse_of(b) for b in reversed(rule.body))
    return Rule(inverse_of(rule.head), new_body, RuleOrigin.INVERTED)


def augment_pipeline(
    rules: RuleSet,
    kg: KnowledgeGraph,
    cfg: AugmentConfig,
    mine_cfg=None,
    filter_cfg=None,
) -> RuleSet:
    """Run the augmentation stages in fixed order: ABD, INV, RW, FIL.

    Inversion applies to the originals together with the abduced rules.
    Duplicates collapse after every stage with origin priority keeping the
    earliest provenance.
    """
    from .metrics import FilterConfig, filter_rules
    from .mining import WalkConfig, mine_rules

    if not cfg.any_enabled():
        raise ConfigError("no augmentation stage enabled")
    if len(rules) == 0 and not cfg.enable_random_walk:
        raise ConfigError("input ruleset is empty and random-walk mining is disabled")

    out = RuleSet(rules)
    abduced: list[Rule] = []
    if cfg.enable_abduction:
        for rule in rules:
            abduced.extend(abduce(rule))
        out.extend(abduced)
    if cfg.enable_inversion:
        out.extend(invert(rule) for rule in list(rules) + abduced)
    if cfg.enable_random_walk:
        # Mined rules arrive already thresholded by their own PCA cut; the
        # final FIL stage re-scores the whole set.
        out.extend(mine_rules(kg, mine_cfg or WalkConfig()))
    if cfg.enable_filter:
        out = filter_rules(out, kg, filter_cfg or FilterConfig())
    return out
