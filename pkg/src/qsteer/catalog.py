"""Rule catalog, rule configurations, and rule signatures.

The optimizer is steered through bitvectors over a catalog of rewrite rules.
Each rule has a dense integer id, a name, and a category that decides its
default state and whether it may be flipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable


class RuleCategory(Enum):
    REQUIRED = "Required"
    ON_BY_DEFAULT = "OnByDefault"
    OFF_BY_DEFAULT = "OffByDefault"
    IMPLEMENTATION = "Implementation"


# Categories that are enabled in the default configuration.
_DEFAULT_ON = (
    RuleCategory.REQUIRED,
    RuleCategory.ON_BY_DEFAULT,
    RuleCategory.IMPLEMENTATION,
)


class CatalogError(ValueError):
    """Raised for malformed catalogs or catalog files."""


@dataclass(frozen=True)
class Rule:
    rule_id: int
    name: str
    category: RuleCategory


@dataclass(frozen=True)
class RuleBits:
    """Immutable bitvector over a catalog; bit i corresponds to rule id i."""

    bits: int
    size: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("bitvector size must be positive")
        if self.bits < 0 or self.bits >> self.size:
            raise ValueError("bits outside catalog range")

    def enabled(self, rule_id: int) -> bool:
        if not 0 <= rule_id < self.size:
            raise ValueError(f"rule id {rule_id} outside catalog of size {self.size}")
        return bool(self.bits >> rule_id & 1)

    def with_rule(self, rule_id: int, on: bool):
        if not 0 <= rule_id < self.size:
            raise ValueError(f"rule id {rule_id} outside catalog of size {self.size}")
        mask = 1 << rule_id
        bits = self.bits | mask if on else self.bits & ~mask
        return type(self)(bits, self.size)

    def ids(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.size) if self.bits >> i & 1)

    def to_hex(self) -> str:
        width = (self.size + 3) // 4
        return format(self.bits, f"0{width}x")

    @classmethod
    def from_hex(cls, text: str, size: int):
        return cls(int(text, 16), size)


class RuleConfig(RuleBits):
    """Which rules the optimizer is allowed to use."""


class RuleSignature(RuleBits):
    """Which rules actually fired while producing a plan."""


@dataclass(frozen=True)
class Flip:
    """A single-rule deviation from the default configuration."""

    rule_id: int
    direction: str  # "on" | "off"

    def __post_init__(self) -> None:
        if self.direction not in ("on", "off"):
            raise ValueError(f"bad flip direction {self.direction!r}")


class RuleCatalog:
    def __init__(self, rules: Iterable[Rule]):
        self.rules = tuple(rules)
        ids = [r.rule_id for r in self.rules]
        if ids != list(range(len(self.rules))):
            raise CatalogError("rule ids must be dense 0..B-1 in order")
        names = [r.name for r in self.rules]
        if len(set(names)) != len(names):
            raise CatalogError("rule names must be unique")
        self._by_name = {r.name: r for r in self.rules}
        self.required_mask = self._mask(RuleCategory.REQUIRED)
        self.default_mask = 0
        for cat in _DEFAULT_ON:
            self.default_mask |= self._mask(cat)

    def _mask(self, category: RuleCategory) -> int:
        m = 0
        for r in self.rules:
            if r.category is category:
                m |= 1 << r.rule_id
        return m

    @property
    def size(self) -> int:
        return len(self.rules)

    def rule(self, rule_id: int) -> Rule:
        if not 0 <= rule_id < self.size:
            raise CatalogError(f"unknown rule id {rule_id}")
        return self.rules[rule_id]

    def by_name(self, name: str) -> Rule:
        try:
            return self._by_name[name]
        except KeyError:
            raise CatalogError(f"unknown rule name {name!r}") from None

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def ids_in(self, category: RuleCategory) -> tuple[int, ...]:
        return tuple(r.rule_id for r in self.rules if r.category is category)

    def default_config(self) -> RuleConfig:
        return RuleConfig(self.default_mask, self.size)

    def default_state(self, rule_id: int) -> bool:
        """Whether the rule is enabled in the default configuration."""
        return bool(self.default_mask >> rule_id & 1)


def apply_flip(catalog: RuleCatalog, config: RuleConfig, flip: Flip) -> RuleConfig:
    """Return `config` with one rule flipped against its default state.

    Rejects flips of Required rules and no-op flips (directions that match
    the rule's category default).
    """
    rule = catalog.rule(flip.rule_id)
    if rule.category is RuleCategory.REQUIRED:
        raise CatalogError(f"rule {rule.name!r} is Required and cannot be flipped")
    want_on = flip.direction == "on"
    if want_on == catalog.default_state(flip.rule_id):
        raise CatalogError(
            f"flip ({rule.name!r}, {flip.direction!r}) does not invert the default state"
        )
    return config.with_rule(flip.rule_id, want_on)


# ---------------------------------------------------------------------------
# Default catalog
# ---------------------------------------------------------------------------

_DEFAULT_RULES = [
    # Required enforcement passes. These run on every plan.
    ("output_enforce", RuleCategory.REQUIRED),
    ("expr_normalize", RuleCategory.REQUIRED),
    ("partition_enforce", RuleCategory.REQUIRED),
    ("property_enforce", RuleCategory.REQUIRED),
    # Logical heuristics, on by default.
    ("filter_pushdown", RuleCategory.ON_BY_DEFAULT),
    ("project_prune", RuleCategory.ON_BY_DEFAULT),
    ("join_commute", RuleCategory.ON_BY_DEFAULT),
    ("join_reorder_greedy", RuleCategory.ON_BY_DEFAULT),
    ("predicate_simplify", RuleCategory.ON_BY_DEFAULT),
    ("constant_fold", RuleCategory.ON_BY_DEFAULT),
    ("union_merge", RuleCategory.ON_BY_DEFAULT),
    ("limit_pushdown", RuleCategory.ON_BY_DEFAULT),
    ("semijoin_reduce", RuleCategory.ON_BY_DEFAULT),
    ("partialagg_pushdown", RuleCategory.ON_BY_DEFAULT),
    # Physical implementation alternatives, on by default.
    ("hash_join", RuleCategory.IMPLEMENTATION),
    ("merge_join", RuleCategory.IMPLEMENTATION),
    ("nestedloop_join", RuleCategory.IMPLEMENTATION),
    ("hash_agg", RuleCategory.IMPLEMENTATION),
    ("sort_agg", RuleCategory.IMPLEMENTATION),
    ("range_partition", RuleCategory.IMPLEMENTATION),
    # Experimental or estimate-sensitive rules, off by default.
    ("bushy_join", RuleCategory.OFF_BY_DEFAULT),
    ("eager_agg", RuleCategory.OFF_BY_DEFAULT),
    ("crossjoin_reorder", RuleCategory.OFF_BY_DEFAULT),
    ("broadcast_join", RuleCategory.OFF_BY_DEFAULT),
]


def default_catalog() -> RuleCatalog:
    return RuleCatalog(
        Rule(i, name, cat) for i, (name, cat) in enumerate(_DEFAULT_RULES)
    )


def save_catalog(catalog: RuleCatalog, path: str | Path) -> None:
    lines = ["# rule_id\tname\tcategory"]
    for r in catalog.rules:
        lines.append(f"{r.rule_id}\t{r.name}\t{r.category.value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_catalog(path: str | Path) -> RuleCatalog:
    rules = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CatalogError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            rule_id = int(parts[0])
            category = RuleCategory(parts[2])
        except ValueError as exc:
            raise CatalogError(f"{path}:{lineno}: {exc}") from None
        rules.append(Rule(rule_id, parts[1], category))
    return RuleCatalog(rules)
