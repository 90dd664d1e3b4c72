"""Dataset quality against a reference corpus and business rules.

The combined score weighs four components:

    q_total = 0.3·q_struct + 0.4·q_stat + 0.2·q_sem + 0.1·q_div

q_struct is the share of instances that round-trip through the wire
format with declared enums only. q_stat is the share of comparable field
paths whose generated distribution passes a similarity test against the
reference (KS for ordered values and lengths, total variation for
categories). q_sem is the share of instances satisfying every rule. q_div
is the mean entropy ratio of generated values to the reference support.
"""

from __future__ import annotations

import base64
import logging
import math
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from google.protobuf.message import DecodeError
from scipy.special import kolmogorov

from protosynth.common.errors import (
    EmptyDatasetError,
    NoComparableFieldsError,
    QualityError,
    RuleError,
    UnknownTypeError,
)
from protosynth.common.types import (
    QUALITY_WEIGHTS,
    FieldInfo,
    FieldQuality,
    Kind,
    PatternId,
    QualityConfig,
    QualityReport,
    Rule,
    RuleKind,
    Scalar,
    SchemaGraph,
    finite_or_none,
)
from protosynth.common.walk import MessageWalker
from protosynth.domain_analyzer import DETECTORS
from protosynth.schema_core import resolve_path

logger = logging.getLogger(__name__)

RULES_FORMAT = "rules/v1"

_PATTERNS = dict(DETECTORS)


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------


class _Observations:
    """Values and presence per field path for one or more instances."""

    def __init__(self) -> None:
        self.values: dict[str, list[Scalar]] = defaultdict(list)
        self.present: set[str] = set()
        self.kinds: dict[str, FieldInfo] = {}
        self.undeclared = False

    def field(
        self,
        path: str,
        info: FieldInfo,
        values: Sequence[Scalar],
        present: bool,
        size: int | None,
    ) -> None:
        self.kinds.setdefault(path, info)
        if present:
            self.present.add(path)
        if info.kind.is_scalar:
            self.values[path].extend(values)
            if info.kind is Kind.ENUM and any(not isinstance(v, str) for v in values):
                self.undeclared = True

    def message(self, prefix: str, message: str, row: Mapping[str, Scalar]) -> None:
        pass


def _observe(
    schema: SchemaGraph, message: str, instances: Iterable[Any], *, include_defaults: bool
) -> _Observations:
    walker = MessageWalker(schema, message, include_defaults=include_defaults)
    seen = _Observations()
    for instance in instances:
        walker.walk(instance, seen)
    return seen


def _message_type(items: Iterable[Any]) -> str | None:
    for item in items:
        if hasattr(item, "DESCRIPTOR"):
            return str(item.DESCRIPTOR.full_name)
    return None


def _decoded(items: Iterable[Any], message: str) -> list[Any]:
    return [
        item
        for item in items
        if hasattr(item, "DESCRIPTOR") and item.DESCRIPTOR.full_name == message
    ]


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------


def _structurally_valid(item: Any, schema: SchemaGraph, message: str) -> bool:
    cls = schema.message_class(message)
    if isinstance(item, bytes | bytearray):
        try:
            item = cls.FromString(bytes(item))
        except DecodeError:
            return False
    elif not hasattr(item, "DESCRIPTOR") or item.DESCRIPTOR.full_name != message:
        return False
    try:
        payload = item.SerializeToString(deterministic=True)
        reparsed = cls.FromString(payload)
    except (DecodeError, ValueError):
        return False
    if reparsed.SerializeToString(deterministic=True) != payload:
        return False
    seen = _Observations()
    MessageWalker(schema, message).walk(reparsed, seen)
    return not seen.undeclared


def validate_structure(
    instances: Sequence[Any], schema: SchemaGraph, message: str | None = None
) -> float:
    """Share of items that serialize and re-parse cleanly.

    Items may be message instances or raw payload bytes; anything else
    counts as invalid. Enum values must be declared; strings must be valid
    UTF-8 (enforced by the re-parse).

    Raises:
        EmptyDatasetError: if ``instances`` is empty.
        QualityError: if no item names a message type and ``message`` is
            not given.
    """
    if not instances:
        raise EmptyDatasetError("empty dataset")
    message = message or _message_type(instances)
    if message is None:
        raise QualityError("cannot tell the dataset's message type")
    valid = sum(1 for item in instances if _structurally_valid(item, schema, message))
    return valid / len(instances)


# ---------------------------------------------------------------------------
# Distribution similarity
# ---------------------------------------------------------------------------


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.

    D is the largest gap between the two empirical CDFs over the merged
    sample; p is the Kolmogorov survival function at sqrt(nm/(n+m))·D.
    NaN values are ignored.

    Raises:
        QualityError: if either sample is empty.
    """
    x = np.sort(np.asarray(a, dtype=np.float64))
    y = np.sort(np.asarray(b, dtype=np.float64))
    x, y = x[~np.isnan(x)], y[~np.isnan(y)]
    if not len(x) or not len(y):
        raise QualityError("KS test needs two non-empty samples")
    n, m = len(x), len(y)
    merged = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, merged, side="right") / n
    cdf_y = np.searchsorted(y, merged, side="right") / m
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    p = float(np.clip(kolmogorov(math.sqrt(n * m / (n + m)) * d), 0.0, 1.0))
    return d, p


def shannon_entropy(freqs: Mapping[Any, int]) -> float:
    """Entropy in bits of a value→count table.

    Raises:
        QualityError: if the table has no positive count.
    """
    counts = np.asarray([c for c in freqs.values() if c > 0], dtype=np.float64)
    if not counts.size:
        raise QualityError("entropy needs at least one observation")
    p = counts / counts.sum()
    return max(0.0, float(-np.sum(p * np.log2(p))))


def total_variation(p: Mapping[Any, int], q: Mapping[Any, int]) -> float:
    """Half the L1 distance between two normalized count tables."""
    p_total, q_total = sum(p.values()), sum(q.values())
    if not p_total or not q_total:
        raise QualityError("total variation needs two non-empty tables")
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0) / p_total - q.get(k, 0) / q_total) for k in keys)


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

_KIND_KEYS = {
    "non_null": RuleKind.NON_NULL,
    "in_range": RuleKind.IN_RANGE,
    "one_of": RuleKind.ONE_OF,
    "matches": RuleKind.MATCHES,
}


def _bound(value: Any, rule_id: str) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise RuleError(f"range bound must be a number, got {value!r}", rule_id)
    return float(value)


def _check_target(schema: SchemaGraph, message: str, path: Any, rule_id: str) -> FieldInfo:
    if not isinstance(path, str) or not path:
        raise RuleError("rule needs a target field path", rule_id)
    try:
        _, info = resolve_path(schema, message, path)
    except UnknownTypeError as exc:
        raise RuleError(f"target does not resolve ({exc})", rule_id) from None
    return info


def _parse_simple(
    doc: Mapping[str, Any], schema: SchemaGraph, message: str, rule_id: str
) -> Rule:
    kinds = [key for key in _KIND_KEYS if key in doc]
    if len(kinds) != 1:
        raise RuleError(
            f"rule needs exactly one of {', '.join(_KIND_KEYS)} or implies", rule_id
        )
    key = kinds[0]
    unknown = set(doc) - {"id", "target", key}
    if unknown:
        raise RuleError(f"unknown rule keys {sorted(unknown)}", rule_id)
    target = doc.get("target")
    info = _check_target(schema, message, target, rule_id)
    spec = doc[key]
    match _KIND_KEYS[key]:
        case RuleKind.NON_NULL:
            if spec is not True:
                raise RuleError("non_null takes the value true", rule_id)
            return Rule(rule_id, target, RuleKind.NON_NULL)
        case RuleKind.IN_RANGE:
            if not info.kind.is_numeric:
                raise RuleError(f"in_range needs a numeric field, got {info.kind.value}", rule_id)
            if isinstance(spec, Mapping):
                lo, hi = spec.get("lo"), spec.get("hi")
            elif isinstance(spec, list) and len(spec) == 2:
                lo, hi = spec
            else:
                raise RuleError("in_range takes {lo, hi} or [lo, hi]", rule_id)
            return Rule(
                rule_id, target, RuleKind.IN_RANGE, lo=_bound(lo, rule_id), hi=_bound(hi, rule_id)
            )
        case RuleKind.ONE_OF:
            if not isinstance(spec, list) or not spec:
                raise RuleError("one_of takes a non-empty list", rule_id)
            return Rule(rule_id, target, RuleKind.ONE_OF, values=tuple(spec))
        case RuleKind.MATCHES:
            if info.kind is not Kind.STRING:
                raise RuleError("matches needs a string field", rule_id)
            try:
                pattern = PatternId(spec)
            except ValueError:
                raise RuleError(f"unknown pattern '{spec}'", rule_id) from None
            if pattern is PatternId.GENERIC:
                raise RuleError("generic is not a matchable pattern", rule_id)
            return Rule(rule_id, target, RuleKind.MATCHES, pattern=pattern)
    raise AssertionError(key)


def _parse_rule(doc: Any, schema: SchemaGraph, message: str, index: int) -> Rule:
    if not isinstance(doc, Mapping):
        raise RuleError(f"rule #{index} must be a mapping")
    rule_id = doc.get("id")
    if not isinstance(rule_id, str) or not rule_id:
        raise RuleError(f"rule #{index} needs an id")
    if "implies" not in doc:
        return _parse_simple(doc, schema, message, rule_id)
    if set(doc) - {"id", "implies"}:
        raise RuleError("implies rules take only id and implies", rule_id)
    spec = doc["implies"]
    if not isinstance(spec, Mapping) or set(spec) != {"if", "then"}:
        raise RuleError("implies needs exactly 'if' and 'then'", rule_id)
    condition = spec["if"]
    if not isinstance(condition, Mapping) or set(condition) != {"path", "equals"}:
        raise RuleError("implies 'if' needs exactly 'path' and 'equals'", rule_id)
    _check_target(schema, message, condition["path"], rule_id)
    then = spec["then"]
    if not isinstance(then, Mapping):
        raise RuleError("implies 'then' must be a rule mapping", rule_id)
    if "implies" in then:
        raise RuleError("implies cannot nest another implies", rule_id)
    inner = _parse_simple({**then, "id": rule_id}, schema, message, rule_id)
    return Rule(
        rule_id,
        inner.target,
        RuleKind.IMPLIES,
        if_path=condition["path"],
        if_value=condition["equals"],
        then=inner,
    )


def parse_rules(
    doc: Any, schema: SchemaGraph, locator: str = "<document>"
) -> tuple[str, list[Rule]]:
    """Validate a ``rules/v1`` document.

    Returns:
        The message type the rules apply to, and the rules in file order.

    Raises:
        RuleError: on a malformed document, duplicate ids or a target that
            does not resolve in the schema.
    """
    if not isinstance(doc, Mapping) or doc.get("format") != RULES_FORMAT:
        raise RuleError(f"expected a '{RULES_FORMAT}' document", locator)
    unknown = set(doc) - {"format", "message", "rules"}
    if unknown:
        raise RuleError(f"unknown keys {sorted(unknown)}", locator)
    message = doc.get("message")
    if not isinstance(message, str):
        raise RuleError("rules document needs a message type", locator)
    try:
        schema.fields(message)
    except UnknownTypeError as exc:
        raise RuleError(str(exc), locator) from None
    raw = doc.get("rules") or []
    if not isinstance(raw, list):
        raise RuleError("'rules' must be a list", locator)
    rules = [_parse_rule(item, schema, message, i) for i, item in enumerate(raw, 1)]
    ids = Counter(rule.id for rule in rules)
    duplicates = sorted(rule_id for rule_id, n in ids.items() if n > 1)
    if duplicates:
        raise RuleError(f"duplicate rule ids {duplicates}", locator)
    return message, rules


def load_rules(path: str | Path, schema: SchemaGraph) -> tuple[str, list[Rule]]:
    """Read and validate a ``rules/v1`` YAML file."""
    with Path(path).open(encoding="utf-8") as stream:
        try:
            doc = yaml.safe_load(stream)
        except yaml.YAMLError as exc:
            raise RuleError(f"invalid YAML ({exc})", str(path)) from None
        except UnicodeDecodeError:
            raise RuleError("not valid UTF-8", str(path)) from None
    return parse_rules(doc, schema, str(path))


def _holds(rule: Rule, seen: _Observations) -> bool:
    values = seen.values.get(rule.target, [])
    match rule.kind:
        case RuleKind.NON_NULL:
            return rule.target in seen.present
        case RuleKind.IN_RANGE:
            lo = -math.inf if rule.lo is None else rule.lo
            hi = math.inf if rule.hi is None else rule.hi
            return all(lo <= float(v) <= hi for v in values)
        case RuleKind.ONE_OF:
            return all(v in rule.values for v in values)
        case RuleKind.MATCHES:
            assert rule.pattern is not None
            regex = _PATTERNS[rule.pattern]
            return all(isinstance(v, str) and regex.fullmatch(v) for v in values)
        case RuleKind.IMPLIES:
            assert rule.if_path is not None and rule.then is not None
            if rule.if_value not in seen.values.get(rule.if_path, []):
                return True
            return _holds(rule.then, seen)
    raise AssertionError(rule.kind)


@dataclass(frozen=True)
class SemanticResult:
    """Share of instances satisfying every rule, and failures per rule id."""
    score: float
    failures: Mapping[str, int]


def evaluate_rules(
    instances: Sequence[Any], rules: Sequence[Rule], schema: SchemaGraph, message: str | None = None
) -> SemanticResult:
    """Check every decoded instance against every rule.

    Implicit-presence scalars are evaluated with their default values.

    Raises:
        EmptyDatasetError: if there is no instance to check.
        RuleError: if a rule target does not resolve for the message type.
    """
    message = message or _message_type(instances)
    decoded = _decoded(instances, message) if message else []
    if not decoded:
        raise EmptyDatasetError("no decodable instances to check")
    assert message is not None
    for rule in rules:
        _check_target(schema, message, rule.target, rule.id)
        if rule.if_path is not None:
            _check_target(schema, message, rule.if_path, rule.id)
    failures = dict.fromkeys(sorted(rule.id for rule in rules), 0)
    walker = MessageWalker(schema, message, include_defaults=True)
    satisfied = 0
    for instance in decoded:
        seen = _Observations()
        walker.walk(instance, seen)
        ok = True
        for rule in rules:
            if not _holds(rule, seen):
                failures[rule.id] += 1
                ok = False
        satisfied += ok
    return SemanticResult(satisfied / len(decoded), failures)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def quality_score(q_struct: float, q_stat: float, q_sem: float, q_div: float) -> float:
    """Weighted sum of the four components.

    Raises:
        QualityError: if a component lies outside [0, 1].
    """
    components = (q_struct, q_stat, q_sem, q_div)
    for name, value in zip(("q_struct", "q_stat", "q_sem", "q_div"), components, strict=True):
        if not 0.0 <= value <= 1.0:
            raise QualityError(f"{name} must lie in [0, 1], got {value}")
    w_struct, w_stat, w_sem, w_div = QUALITY_WEIGHTS
    return w_struct * q_struct + w_stat * q_stat + w_sem * q_sem + w_div * q_div


def _lengths(info: FieldInfo, values: Sequence[Scalar]) -> list[int]:
    if info.kind is Kind.BYTES:
        return [len(base64.b64decode(str(v))) for v in values]
    return [len(str(v)) for v in values]


def _entropy_ratio(generated: Sequence[Scalar], reference: Sequence[Scalar]) -> float:
    distinct = len(set(reference))
    if distinct <= 1:
        return 1.0
    if not generated:
        return 0.0
    return min(1.0, shannon_entropy(Counter(generated)) / math.log2(distinct))


def compare_field(
    path: str,
    info: FieldInfo,
    generated: Sequence[Scalar],
    reference: Sequence[Scalar],
    config: QualityConfig,
) -> FieldQuality:
    """Similarity test for one field path."""
    ratio = _entropy_ratio(generated, reference)
    if not generated:
        return FieldQuality(path, "missing", False, entropy_ratio=ratio)
    if info.kind.is_categorical:
        tv = total_variation(Counter(generated), Counter(reference))
        passed = tv < config.tv_threshold
        return FieldQuality(path, "tv", passed, tv_distance=tv, entropy_ratio=ratio)
    if info.kind.is_numeric:
        d, p = ks_two_sample([float(v) for v in generated], [float(v) for v in reference])
        return FieldQuality(
            path, "ks", p > config.alpha, finite_or_none(d), finite_or_none(p), entropy_ratio=ratio
        )
    d, p = ks_two_sample(_lengths(info, generated), _lengths(info, reference))
    passed = p > config.alpha
    tv = None
    test = "ks-length"
    categorical = len(set(reference)) / len(reference) <= config.categorical_ratio
    if info.kind is Kind.STRING and categorical:
        tv = total_variation(Counter(generated), Counter(reference))
        passed = passed and tv < config.tv_threshold
        test = "ks-length+tv"
    return FieldQuality(path, test, passed, d, p, tv, ratio)


def _reference_instances(reference: Iterable[Any], message: str) -> Iterable[Any]:
    for item in reference:
        if isinstance(item, tuple):
            type_name, item = item
            if type_name != message:
                continue
        if hasattr(item, "DESCRIPTOR") and item.DESCRIPTOR.full_name == message:
            yield item


def assess(
    generated: Sequence[Any],
    reference: Iterable[Any],
    schema: SchemaGraph,
    rules: Sequence[Rule] = (),
    config: QualityConfig | None = None,
    *,
    message: str | None = None,
) -> QualityReport:
    """Score a generated dataset against a reference corpus.

    Args:
        generated: Message instances (or raw payload bytes).
        reference: A LogCorpus, or any iterable of instances or
            (type, instance) records.
        schema: Schema both datasets conform to.
        rules: Business rules for the semantic component.
        config: Thresholds.
        message: Message type; taken from the first generated instance
            when omitted.

    Raises:
        EmptyDatasetError: if either dataset is empty.
        NoComparableFieldsError: if the reference observes no scalar field
            path.
    """
    config = config or QualityConfig()
    q_struct = validate_structure(generated, schema, message)
    message = message or _message_type(generated)
    assert message is not None
    decoded = _decoded(generated, message)
    gen = _observe(schema, message, decoded, include_defaults=False)
    ref = _observe(
        schema, message, _reference_instances(reference, message), include_defaults=False
    )
    if not ref.kinds:
        raise EmptyDatasetError("empty reference corpus", message)
    fields = [
        compare_field(path, ref.kinds[path], gen.values.get(path, []), values, config)
        for path, values in sorted(ref.values.items())
        if values
    ]
    if not fields:
        raise NoComparableFieldsError("no field path is comparable", message)
    q_stat = sum(f.passed for f in fields) / len(fields)
    q_div = float(np.mean([f.entropy_ratio for f in fields]))
    semantic = evaluate_rules(decoded, rules, schema, message) if decoded else None
    q_sem = semantic.score if semantic else 0.0
    q_total = quality_score(q_struct, q_stat, q_sem, q_div)
    logger.info(
        "quality of %d %s instances: struct=%.3f stat=%.3f sem=%.3f div=%.3f total=%.3f",
        len(generated),
        message,
        q_struct,
        q_stat,
        q_sem,
        q_div,
        q_total,
    )
    return QualityReport(
        q_struct,
        q_stat,
        q_sem,
        q_div,
        q_total,
        tuple(fields),
        dict(semantic.failures) if semantic else {},
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def report_document(report: QualityReport) -> dict[str, Any]:
    """JSON-ready form of a report."""
    return {
        "q_struct": report.q_struct,
        "q_stat": report.q_stat,
        "q_sem": report.q_sem,
        "q_div": report.q_div,
        "q_total": report.q_total,
        "rule_failures": dict(sorted(report.rule_failures.items())),
        "fields": [
            {
                "path": f.path,
                "test": f.test,
                "passed": f.passed,
                "ks_statistic": f.ks_statistic,
                "p_value": f.p_value,
                "tv_distance": f.tv_distance,
                "entropy_ratio": f.entropy_ratio,
            }
            for f in report.fields
        ],
    }


def _cell(value: float | None, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_table(report: QualityReport, scale: int = 1) -> str:
    """Aligned-column text: components first, then one line per field."""
    lines = [
        f"{name:<10}{value * scale:>10.3f}"
        for name, value in (
            ("struct", report.q_struct),
            ("stat", report.q_stat),
            ("sem", report.q_sem),
            ("div", report.q_div),
            ("total", report.q_total),
        )
    ]
    if report.fields:
        width = max(len("path"), *(len(f.path) for f in report.fields))
        lines.append("")
        lines.append(
            f"{'path':<{width}}  {'test':<12}  {'D':>8}  {'p':>8}  {'TV':>8}  {'H/Hmax':>8}  pass"
        )
        for f in report.fields:
            lines.append(
                f"{f.path:<{width}}  {f.test:<12}  {_cell(f.ks_statistic):>8}  "
                f"{_cell(f.p_value):>8}  {_cell(f.tv_distance):>8}  "
                f"{_cell(f.entropy_ratio, 3):>8}  {'yes' if f.passed else 'no'}"
            )
    for rule_id, n in sorted(report.rule_failures.items()):
        if n:
            lines.append(f"rule {rule_id}: {n} failing instances")
    return "\n".join(lines) + "\n"
