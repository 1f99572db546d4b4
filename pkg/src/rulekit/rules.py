"""Chain rules: parsing, serialization, canonical deduplication.

A rule ``RH <- B1 B2 ... BL`` asserts that a train-edge path
``X0 -B1-> X1 ... -BL-> XL`` supports the head triple ``RH(X0, XL)``.
Bodies are ordered relation chains; inverse relations are written with
a leading ``!``.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from .errors import RuleGrammarError, RuleResolutionError
from .kg import KnowledgeGraph

RULE_ARROW = "<-"
DEFAULT_MAX_BODY_LEN = 4


class RuleOrigin(enum.Enum):
    """Provenance tag; declaration order is the dedup priority."""

    ORIGINAL = "original"
    ABDUCED = "abduced"
    INVERTED = "inverted"
    RANDOM_WALK = "random-walk"

    @property
    def priority(self) -> int:
        return list(RuleOrigin).index(self)


@dataclass(frozen=True)
class Rule:
    """One chain rule: head relation plus ordered body relations.

    ``weight`` is carried through parse/serialize round trips but is not
    consulted by any scorer; the predictor learns per-rule embeddings
    instead.
    """

    head: int
    body: tuple[int, ...]
    origin: RuleOrigin = RuleOrigin.ORIGINAL
    weight: float | None = None

    def __post_init__(self):
        if len(self.body) == 0:
            raise RuleGrammarError("rule body must be nonempty")

    @property
    def key(self) -> tuple[int, tuple[int, ...]]:
        return (self.head, self.body)


def parse_rule(
    line: str,
    kg: KnowledgeGraph,
    origin: RuleOrigin = RuleOrigin.ORIGINAL,
    max_body_len: int = DEFAULT_MAX_BODY_LEN,
) -> Rule:
    """Parse ``HEAD <- B1 B2 ... BL`` with an optional tab-separated weight."""
    body_part = line
    weight = None
    if "\t" in line:
        body_part, weight_text = line.split("\t", 1)
        try:
            weight = float(weight_text.strip())
        except ValueError:
            raise RuleGrammarError(f"bad rule weight {weight_text.strip()!r}") from None
    if RULE_ARROW not in body_part:
        raise RuleGrammarError(f"missing {RULE_ARROW!r} in rule line: {line!r}")
    head_text, tail_text = body_part.split(RULE_ARROW, 1)
    head_name = head_text.strip()
    body_names = tail_text.split()
    if not head_name:
        raise RuleGrammarError(f"empty head in rule line: {line!r}")
    if not body_names:
        raise RuleGrammarError(f"empty body in rule line: {line!r}")
    if len(body_names) > max_body_len:
        raise RuleGrammarError(
            f"body length {len(body_names)} exceeds maximum {max_body_len}"
        )

    def resolve(name: str) -> int:
        rid = kg.relation_ids.get(name)
        if rid is None:
            raise RuleResolutionError(f"unknown relation {name!r} in rule: {line!r}")
        return rid

    return Rule(resolve(head_name), tuple(resolve(b) for b in body_names), origin, weight)


def serialize_rule(rule: Rule, kg: KnowledgeGraph, include_weight: bool = True) -> str:
    names = kg.relation_names
    text = f"{names[rule.head]} {RULE_ARROW} " + " ".join(names[b] for b in rule.body)
    if include_weight and rule.weight is not None:
        text += f"\t{rule.weight!r}"
    return text


class RuleSet:
    """Ordered, (head, body)-unique rule collection.

    Insertion keeps the first occurrence's position; when a duplicate
    arrives, the stored origin is upgraded to the higher-priority one
    (original > abduced > inverted > random-walk) and a missing weight is
    filled from the newcomer.
    """

    def __init__(self, rules: Iterable[Rule] = ()):
        self._rules: list[Rule] = []
        self._index: dict[tuple[int, tuple[int, ...]], int] = {}
        for rule in rules:
            self.add(rule)

    def add(self, rule: Rule) -> bool:
        """Insert a rule; returns True if it was new."""
        pos = self._index.get(rule.key)
        if pos is None:
            self._index[rule.key] = len(self._rules)
            self._rules.append(rule)
            return True
        kept = self._rules[pos]
        origin = min(kept.origin, rule.origin, key=lambda o: o.priority)
        weight = kept.weight if kept.weight is not None else rule.weight
        if origin is not kept.origin or weight != kept.weight:
            self._rules[pos] = replace(kept, origin=origin, weight=weight)
        return False

    def extend(self, rules: Iterable[Rule]) -> None:
        for rule in rules:
            self.add(rule)

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self._rules)

    def __getitem__(self, i: int) -> Rule:
        return self._rules[i]

    def __contains__(self, rule: Rule) -> bool:
        return rule.key in self._index

    def position(self, rule: Rule) -> int:
        return self._index[rule.key]

    def by_head(self) -> dict[int, list[int]]:
        """Map head relation -> positions of its rules, in set order."""
        groups: dict[int, list[int]] = {}
        for i, rule in enumerate(self._rules):
            groups.setdefault(rule.head, []).append(i)
        return groups


def dedup(rules: Iterable[Rule]) -> RuleSet:
    return RuleSet(rules)


def ruleset_hash(rules: Iterable[Rule]) -> str:
    """Order-sensitive digest of (head, body) pairs; ties checkpoints to rulesets."""
    digest = hashlib.sha256()
    for rule in rules:
        digest.update(f"{rule.head}:{','.join(map(str, rule.body))};".encode())
    return digest.hexdigest()


def read_rules_file(
    path,
    kg: KnowledgeGraph,
    origin: RuleOrigin = RuleOrigin.ORIGINAL,
    max_body_len: int = DEFAULT_MAX_BODY_LEN,
) -> RuleSet:
    """Read a rules file (one rule per line, ``#`` lines are comments)."""
    out = RuleSet()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            out.add(parse_rule(line, kg, origin=origin, max_body_len=max_body_len))
    return out


def write_rules_file(rules: Iterable[Rule], kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules:
            fh.write(serialize_rule(rule, kg) + "\n")
