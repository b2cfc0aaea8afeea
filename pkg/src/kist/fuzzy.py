"""Fuzzy rule engine for grading how anomalous a region is.

A knowledge base holds trapezoidal membership functions for the linguistic
sets low/mid/high, per-property scale factors, and a list of IF-THEN rules.
Within a rule the antecedent memberships are combined by minimum; the rule's
truth value is multiplied in; the final grade of a region is the maximum over
all rules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .regions import PROPERTY_NAMES, RegionProperties

SET_NAMES = ("low", "mid", "high")


class RuleFileError(ValueError):
    """Raised on a malformed knowledge-base file."""


@dataclass(frozen=True)
class TrapezoidMF:
    """Piecewise-linear membership function with breakpoints a <= b <= c <= d:
    zero outside [a, d], one on [b, c], linear on the two ramps."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d):
            raise RuleFileError(
                f"trapezoid breakpoints must be ordered: {self}")

    def __call__(self, v: float) -> float:
        if v < self.a or v > self.d:
            return 0.0
        if self.b <= v <= self.c:
            return 1.0
        if v < self.b:
            return (v - self.a) / (self.b - self.a)
        return (self.d - v) / (self.d - self.c)


@dataclass(frozen=True)
class FuzzyRule:
    """antecedents: list of (property name, set name); truth value in (0, 1]."""

    antecedents: tuple[tuple[str, str], ...]
    truth_value: float

    def __post_init__(self):
        if not self.antecedents:
            raise RuleFileError("rule needs at least one antecedent")
        props = [p for p, _ in self.antecedents]
        if len(set(props)) != len(props):
            raise RuleFileError(f"duplicate property in rule: {props}")
        if not (0.0 < self.truth_value <= 1.0):
            raise RuleFileError(
                f"truth value must be in (0, 1], got {self.truth_value}")


@dataclass(frozen=True)
class KnowledgeBase:
    membership: dict[str, TrapezoidMF]
    gammas: dict[str, float]
    rules: tuple[FuzzyRule, ...]

    def __post_init__(self):
        if not self.rules:
            raise RuleFileError("knowledge base needs at least one rule")
        for rule in self.rules:
            for prop, set_id in rule.antecedents:
                if set_id not in self.membership:
                    raise RuleFileError(f"undefined fuzzy set {set_id!r}")
                if prop not in PROPERTY_NAMES:
                    raise RuleFileError(f"unknown property {prop!r}")

    @property
    def max_truth_value(self) -> float:
        return max(r.truth_value for r in self.rules)


def membership(mf: TrapezoidMF, v: float) -> float:
    """Membership grade of a standardized value in a fuzzy set."""
    return mf(v)


def rule_grade(rule: FuzzyRule, kb: KnowledgeBase,
               props: RegionProperties) -> float:
    """tv times the minimum antecedent membership, on standardized values."""
    grade = 1.0
    for prop, set_id in rule.antecedents:
        grade = min(grade, kb.membership[set_id](props.value(prop)))
    return rule.truth_value * grade


def anomaly_grade(kb: KnowledgeBase, props: RegionProperties) -> float:
    """Final anomaly grade of a region: max of the per-rule grades."""
    return max(rule_grade(rule, kb, props) for rule in kb.rules)


# ---------------------------------------------------------------------------
# Rule file parsing.
#
# Schema (UTF-8 JSON):
#   {
#     "gammas":     {"area": 0.0125, "gray": 1.0, ...},
#     "membership": {"low": [a, b, c, d], "mid": [...], "high": [...]},
#     "rules":      [{"if": [{"prop": "area", "set": "high"}, ...], "tv": 1.0}]
#   }

def _require(cond, msg):
    if not cond:
        raise RuleFileError(msg)


def parse_knowledge_base(text: str) -> KnowledgeBase:
    """Parse and validate a rule file; raises RuleFileError with field context
    on any schema violation."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise RuleFileError(f"invalid JSON: {e}") from e
    _require(isinstance(doc, dict), "top level must be an object")
    for key in ("gammas", "membership", "rules"):
        _require(key in doc, f"missing field {key!r}")

    gammas = doc["gammas"]
    _require(isinstance(gammas, dict), "'gammas' must be an object")
    for name, g in gammas.items():
        _require(name in PROPERTY_NAMES, f"gammas: unknown property {name!r}")
        _require(isinstance(g, (int, float)) and g > 0,
                 f"gammas.{name}: must be a positive number")
    missing = set(PROPERTY_NAMES) - set(gammas)
    _require(not missing, f"gammas: missing properties {sorted(missing)}")

    mfs = {}
    mf_doc = doc["membership"]
    _require(isinstance(mf_doc, dict), "'membership' must be an object")
    for set_id, pts in mf_doc.items():
        _require(set_id in SET_NAMES, f"membership: unknown set {set_id!r}")
        _require(isinstance(pts, list) and len(pts) == 4
                 and all(isinstance(p, (int, float)) for p in pts),
                 f"membership.{set_id}: expected [a, b, c, d]")
        try:
            mfs[set_id] = TrapezoidMF(*map(float, pts))
        except RuleFileError as e:
            raise RuleFileError(f"membership.{set_id}: {e}") from e

    rules = []
    _require(isinstance(doc["rules"], list) and doc["rules"],
             "'rules' must be a non-empty array")
    for i, rd in enumerate(doc["rules"]):
        where = f"rules[{i}]"
        _require(isinstance(rd, dict) and "if" in rd and "tv" in rd,
                 f"{where}: expected object with 'if' and 'tv'")
        _require(isinstance(rd["if"], list) and rd["if"],
                 f"{where}.if: must be a non-empty array")
        ants = []
        for j, ad in enumerate(rd["if"]):
            _require(isinstance(ad, dict) and "prop" in ad and "set" in ad,
                     f"{where}.if[{j}]: expected {{'prop', 'set'}}")
            _require(ad["prop"] in PROPERTY_NAMES,
                     f"{where}.if[{j}]: unknown property {ad['prop']!r}")
            _require(ad["set"] in SET_NAMES,
                     f"{where}.if[{j}]: unknown set {ad['set']!r}")
            ants.append((ad["prop"], ad["set"]))
        tv = rd["tv"]
        _require(isinstance(tv, (int, float)) and 0.0 < tv <= 1.0,
                 f"{where}.tv: must be in (0, 1]")
        try:
            rules.append(FuzzyRule(tuple(ants), float(tv)))
        except RuleFileError as e:
            raise RuleFileError(f"{where}: {e}") from e

    return KnowledgeBase(membership=mfs, gammas={k: float(v)
                                                 for k, v in gammas.items()},
                         rules=tuple(rules))


def load_knowledge_base(path) -> KnowledgeBase:
    with open(path, encoding="utf-8") as f:
        return parse_knowledge_base(f.read())


def builtin_rules_path(name: str):
    """Path of a shipped rule file ('kole_mvtec' or 'mtd')."""
    from importlib.resources import files
    return files("kist") / "rules" / f"{name}.rules"


def load_builtin_rules(name: str) -> KnowledgeBase:
    return parse_knowledge_base(builtin_rules_path(name).read_text("utf-8"))
