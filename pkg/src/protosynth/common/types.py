"""Shared types: enums and frozen dataclasses used across modules.

Schema structure, domain statistics, dependency graphs, generation and
analysis settings, quality and benchmark reports.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from google.protobuf import message_factory

from protosynth.common.errors import ConfigError, UnknownTypeError

Scalar = bool | int | float | str
"""A normalized field value: enums by name, bytes as base64 text."""

# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------


class Kind(Enum):
    """Protobuf field kinds."""
    DOUBLE = "double"
    FLOAT = "float"
    INT32 = "int32"
    INT64 = "int64"
    UINT32 = "uint32"
    UINT64 = "uint64"
    SINT32 = "sint32"
    SINT64 = "sint64"
    FIXED32 = "fixed32"
    FIXED64 = "fixed64"
    SFIXED32 = "sfixed32"
    SFIXED64 = "sfixed64"
    BOOL = "bool"
    STRING = "string"
    BYTES = "bytes"
    ENUM = "enum"
    MESSAGE = "message"

    @property
    def is_integer(self) -> bool:
        return self in INTEGER_BOUNDS

    @property
    def is_float(self) -> bool:
        return self in (Kind.DOUBLE, Kind.FLOAT)

    @property
    def is_numeric(self) -> bool:
        return self.is_integer or self.is_float

    @property
    def is_scalar(self) -> bool:
        return self is not Kind.MESSAGE

    @property
    def is_categorical(self) -> bool:
        """Kinds compared by category rather than by order."""
        return self in (Kind.BOOL, Kind.ENUM)


INTEGER_BOUNDS: dict[Kind, tuple[int, int]] = {
    Kind.INT32: (-(2**31), 2**31 - 1),
    Kind.SINT32: (-(2**31), 2**31 - 1),
    Kind.SFIXED32: (-(2**31), 2**31 - 1),
    Kind.INT64: (-(2**63), 2**63 - 1),
    Kind.SINT64: (-(2**63), 2**63 - 1),
    Kind.SFIXED64: (-(2**63), 2**63 - 1),
    Kind.UINT32: (0, 2**32 - 1),
    Kind.FIXED32: (0, 2**32 - 1),
    Kind.UINT64: (0, 2**64 - 1),
    Kind.FIXED64: (0, 2**64 - 1),
}


class Cardinality(Enum):
    """Field cardinality. proto2 ``required`` is SINGULAR."""
    SINGULAR = "singular"
    OPTIONAL = "optional"
    REPEATED = "repeated"


class Strategy(Enum):
    """Generator strategies held in the registry."""
    EMPIRICAL = "empirical"
    PATTERN = "pattern"
    RANGE = "range"
    ENUM_WEIGHTED = "enum-weighted"
    DEFAULT = "default"


class PatternId(Enum):
    """String formats, in detector order. GENERIC is the fallback."""
    UUID = "uuid"
    ISO8601 = "iso8601"
    EMAIL = "email"
    NUMERIC_STRING = "numeric-string"
    HEX = "hex"
    GENERIC = "generic"


class Provenance(Enum):
    """Where a dependency edge came from."""
    SEMANTIC = "semantic"
    CORRELATION = "correlation"
    ANNOTATION = "annotation"


class CycleStrategy(Enum):
    """Policy applied when generation re-enters a type on the stack."""
    REUSE = "reuse"
    MINIMAL = "minimal"
    PROBABILISTIC = "probabilistic"


class RuleKind(Enum):
    """Business rule kinds."""
    NON_NULL = "non_null"
    IN_RANGE = "in_range"
    ONE_OF = "one_of"
    MATCHES = "matches"
    IMPLIES = "implies"


class SlotKind(Enum):
    """Template parameter slot kinds."""
    CHOICE = "choice"
    RANGE = "range"
    COUNTER = "counter"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldInfo:
    """One field of a message: tag, kind, cardinality, referenced type."""
    name: str
    number: int
    kind: Kind
    cardinality: Cardinality = Cardinality.SINGULAR
    type_name: str | None = None
    oneof: str | None = None
    is_map: bool = False
    json_name: str = ""
    has_presence: bool = False

    def __post_init__(self) -> None:
        if self.number < 1:
            raise ConfigError(f"field number must be >= 1, got {self.number}", self.name)
        needs_type = self.kind in (Kind.ENUM, Kind.MESSAGE)
        if needs_type != (self.type_name is not None):
            raise ConfigError(
                f"type_name must be set exactly for enum/message kinds ({self.kind.value})",
                self.name,
            )

    @property
    def is_repeated(self) -> bool:
        return self.cardinality is Cardinality.REPEATED

    @property
    def is_message(self) -> bool:
        return self.kind is Kind.MESSAGE


@dataclass(frozen=True)
class SchemaGraph:
    """Messages, enums and the message reference graph of a descriptor set.

    ``messages`` maps fully-qualified names to fields in declaration order;
    ``edges`` holds (container, referenced) pairs for every message-typed
    field; ``cyclic_groups`` holds the strongly connected components that
    contain a cycle. ``pool`` is the protobuf DescriptorPool the dynamic
    message classes come from.
    """
    messages: Mapping[str, tuple[FieldInfo, ...]]
    enums: Mapping[str, tuple[tuple[str, int], ...]]
    edges: frozenset[tuple[str, str]]
    cyclic_groups: frozenset[frozenset[str]]
    map_entries: frozenset[str] = frozenset()
    source: bytes = field(default=b"", repr=False, compare=False)
    pool: Any = field(default=None, repr=False, compare=False)
    _classes: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def fields(self, message: str) -> tuple[FieldInfo, ...]:
        """Fields of a message in declaration order."""
        try:
            return self.messages[message]
        except KeyError:
            raise UnknownTypeError("unknown message type", message) from None

    def field_info(self, message: str, name: str) -> FieldInfo:
        for info in self.fields(message):
            if info.name == name:
                return info
        raise UnknownTypeError(f"message has no field '{name}'", message)

    def enum_values(self, enum: str) -> tuple[tuple[str, int], ...]:
        try:
            return self.enums[enum]
        except KeyError:
            raise UnknownTypeError("unknown enum type", enum) from None

    def enum_name(self, enum: str, number: int) -> str | None:
        for name, value in self.enum_values(enum):
            if value == number:
                return name
        return None

    def enum_number(self, enum: str, name: str) -> int | None:
        for value_name, value in self.enum_values(enum):
            if value_name == name:
                return value
        return None

    def message_class(self, message: str) -> Any:
        """Dynamic protobuf message class for a message type (cached)."""
        cls = self._classes.get(message)
        if cls is None:
            self.fields(message)
            descriptor = self.pool.FindMessageTypeByName(message)
            cls = message_factory.GetMessageClass(descriptor)
            self._classes[message] = cls
        return cls


@dataclass(frozen=True)
class PathSegment:
    """One step of a field path: field name plus ``[]``, ``{}key`` or ``{}value``."""
    name: str
    marker: str = ""

    def __str__(self) -> str:
        return f"{self.name}{self.marker}"


@dataclass(frozen=True)
class FieldPath:
    """Traversal from a root message to a field, e.g. ``order.items[].price``."""
    segments: tuple[PathSegment, ...]

    @classmethod
    def parse(cls, text: str) -> FieldPath:
        segments = []
        for part in text.split("."):
            for marker in ("[]", "{}key", "{}value"):
                if part.endswith(marker):
                    segments.append(PathSegment(part[: -len(marker)], marker))
                    break
            else:
                segments.append(PathSegment(part))
        return cls(tuple(segments))

    def child(self, name: str, marker: str = "") -> FieldPath:
        return FieldPath((*self.segments, PathSegment(name, marker)))

    @property
    def text(self) -> str:
        return ".".join(str(s) for s in self.segments)

    @property
    def leaf(self) -> str:
        return self.segments[-1].name

    def __len__(self) -> int:
        return len(self.segments)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class GeneratorSpec:
    """How one field is generated.

    ``profile_paths`` lists every profiled path that ends in this field;
    the engine uses the profile of the path it is generating and falls
    back to the first entry. ``strategy`` belongs to that first entry;
    ``path_strategies`` records the choice made for each profiled path.
    """
    strategy: Strategy
    kind: Kind
    profile_paths: tuple[str, ...] = ()
    pattern: PatternId | None = None
    type_name: str | None = None
    path_strategies: tuple[tuple[str, Strategy], ...] = ()

    def strategy_for(self, path: str) -> Strategy:
        for profiled, strategy in self.path_strategies:
            if profiled == path:
                return strategy
        return self.strategy


@dataclass(frozen=True)
class GeneratorRegistry:
    """Total map (message, field) → generator descriptor."""
    entries: Mapping[tuple[str, str], GeneratorSpec]

    def entry(self, message: str, name: str) -> GeneratorSpec:
        try:
            return self.entries[(message, name)]
        except KeyError:
            raise UnknownTypeError(f"no generator registered for '{name}'", message) from None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.entries)


# ---------------------------------------------------------------------------
# Domain model
# ---------------------------------------------------------------------------

PERCENTILES: tuple[int, ...] = (1, 5, 25, 50, 75, 95, 99)


@dataclass(frozen=True)
class FieldStats:
    """Summary of observed values for one field path.

    ``count`` counts opportunities (visits of the containing message),
    ``present_count`` counts observed values. ``quantiles`` is the
    nearest-rank grid at 0%, 1%, …, 100%. Numeric summaries are absent for
    empty or non-numeric samples.
    """
    count: int = 0
    present_count: int = 0
    mean: float | None = None
    variance: float | None = None
    minimum: Scalar | None = None
    maximum: Scalar | None = None
    percentiles: Mapping[int, Scalar] = field(default_factory=dict)
    quantiles: tuple[Scalar, ...] = ()
    frequencies: tuple[tuple[Scalar, int], ...] = ()
    overflow: int = 0
    distinct: int = 0

    @property
    def null_probability(self) -> float:
        if self.count == 0:
            return 0.0
        return 1.0 - self.present_count / self.count

    @property
    def is_numeric(self) -> bool:
        return self.mean is not None

    @property
    def complete(self) -> bool:
        """True when the frequency table holds every observed value."""
        return self.overflow == 0 and bool(self.frequencies)


@dataclass(frozen=True)
class PatternSpec:
    """Detected string format.

    ``lengths`` is a (length, count) histogram kept for every pattern;
    ``char_classes`` is filled for GENERIC; ``span`` holds the earliest and
    latest timestamps for ISO8601.
    """
    pattern_id: PatternId
    lengths: tuple[tuple[int, int], ...] = ()
    char_classes: tuple[tuple[str, int], ...] = ()
    span: tuple[str, str] | None = None
    match_rate: float = 1.0


@dataclass(frozen=True)
class Dependency:
    """Association with another field path.

    ``provenance`` is ``pearson`` or ``cramers-v`` (symmetric) or
    ``correlation-ratio`` (``path`` controls this field).
    """
    path: str
    r: float
    provenance: str = "pearson"


@dataclass(frozen=True)
class ConstraintSet:
    """Inferred constraints: value range, null probability, dependencies."""
    value_range: tuple[Scalar, Scalar] | None = None
    null_probability: float = 0.0
    dependencies: tuple[Dependency, ...] = ()


@dataclass(frozen=True)
class FieldProfile:
    """Statistics, pattern and constraints of one field path."""
    path: str
    kind: Kind
    stats: FieldStats
    constraints: ConstraintSet = ConstraintSet()
    pattern: PatternSpec | None = None
    sizes: FieldStats | None = None


@dataclass(frozen=True)
class ModelProvenance:
    """Where a domain model came from."""
    record_count: int = 0
    skipped_count: int = 0
    analyzed_at: str = ""
    schema_fingerprint: str = ""


@dataclass(frozen=True)
class ConditionalDistribution:
    """Dependent-value frequencies per controlling value.

    ``rows`` maps a controlling value to (dependent value, count) pairs;
    ``marginal`` is the dependent's unconditional table used when no row
    applies. ``skipped`` marks a controller whose cardinality overflowed.
    """
    controlling: str
    dependent: str
    rows: Mapping[Scalar, tuple[tuple[Scalar, int], ...]] = field(default_factory=dict)
    marginal: tuple[tuple[Scalar, int], ...] = ()
    skipped: bool = False

    def row(self, value: Scalar) -> tuple[tuple[Scalar, int], ...] | None:
        return self.rows.get(value)

    @property
    def total(self) -> int:
        return sum(count for row in self.rows.values() for _, count in row)


@dataclass(frozen=True)
class DomainModel:
    """Per-field-path profiles mined from a corpus of ``root`` messages."""
    root: str
    profiles: Mapping[str, FieldProfile] = field(default_factory=dict)
    conditionals: Mapping[tuple[str, str], ConditionalDistribution] = field(
        default_factory=dict
    )
    provenance: ModelProvenance = ModelProvenance()

    def profile(self, path: str) -> FieldProfile | None:
        return self.profiles.get(path)

    def conditional(self, controlling: str, dependent: str) -> ConditionalDistribution | None:
        return self.conditionals.get((controlling, dependent))

    def with_conditionals(
        self, tables: Mapping[tuple[str, str], ConditionalDistribution]
    ) -> DomainModel:
        return replace(self, conditionals=dict(tables))


# ---------------------------------------------------------------------------
# Dependencies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DependencyEdge:
    """Directed edge: ``source`` must be generated before ``target``."""
    source: str
    target: str
    provenance: Provenance
    weight: float = 1.0


@dataclass(frozen=True)
class DependencyGraph:
    """Intra-message field dependencies of one message type.

    ``removed`` records edges dropped while breaking cycles; a graph with
    an empty ``removed`` may still be cyclic until it is broken.
    """
    message: str
    nodes: tuple[str, ...]
    edges: tuple[DependencyEdge, ...] = ()
    removed: tuple[DependencyEdge, ...] = ()

    def incoming(self, node: str) -> tuple[DependencyEdge, ...]:
        return tuple(e for e in self.edges if e.target == node)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepeatedSize:
    """Size distribution for repeated and map fields.

    Geometric on {0, 1, …} with the given mean, capped; the domain model's
    observed sizes take over when ``empirical`` is set and a profile exists.
    """
    mean: float = 3.0
    cap: int = 100
    empirical: bool = True

    def __post_init__(self) -> None:
        if self.mean < 0:
            raise ConfigError(f"repeated size mean must be >= 0, got {self.mean}")
        if self.cap < 0:
            raise ConfigError(f"repeated size cap must be >= 0, got {self.cap}")


def _check_probability(value: float | None, name: str) -> None:
    if value is not None and not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class GenerationConfig:
    """Generation settings: depth, cycle policy, sizes, seeding, batching."""
    max_depth: int = 16
    cycle_strategy: CycleStrategy = CycleStrategy.MINIMAL
    termination_lambda: float = 0.5
    null_probability_override: float | None = None
    repeated_size: RepeatedSize = RepeatedSize()
    seed: int = 0
    batch_size: int = 1000
    recursion_allowance: int = 0
    template_cache: bool = True
    workers: int = 1
    use_dependencies: bool = True

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if not self.termination_lambda > 0:
            raise ConfigError(f"lambda must be positive, got {self.termination_lambda}")
        _check_probability(self.null_probability_override, "null_probability_override")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.recursion_allowance < 0:
            raise ConfigError(
                f"recursion_allowance must be >= 0, got {self.recursion_allowance}"
            )
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class AnalysisConfig:
    """Corpus analysis settings."""
    top_k: int = 1000
    pattern_threshold: float = 0.95
    correlation_threshold: float = 0.7
    reservoir_size: int = 100_000
    value_capacity: int = 100_000
    malformed_threshold: float = 0.5
    max_depth: int = 16
    max_controlling_cardinality: int = 10_000
    categorical_cardinality: int = 100
    workers: int = 1
    chunk_size: int = 5000

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        _check_probability(self.pattern_threshold, "pattern_threshold")
        _check_probability(self.correlation_threshold, "correlation_threshold")
        _check_probability(self.malformed_threshold, "malformed_threshold")
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.workers < 1 or self.chunk_size < 1 or self.reservoir_size < 2:
            raise ConfigError("workers, chunk_size and reservoir_size must be positive")
        if self.value_capacity < self.top_k:
            raise ConfigError(
                f"value_capacity must be >= top_k ({self.top_k}), got {self.value_capacity}"
            )


@dataclass(frozen=True)
class QualityConfig:
    """Quality assessment settings.

    ``categorical_ratio``: a string field whose reference distinct/observed
    ratio is at most this value is also compared by total variation.
    ``display_scale`` multiplies scores in rendered tables (10 for 0–10).
    """
    alpha: float = 0.05
    tv_threshold: float = 0.1
    categorical_ratio: float = 0.5
    display_scale: int = 1

    def __post_init__(self) -> None:
        _check_probability(self.alpha, "alpha")
        _check_probability(self.tv_threshold, "tv_threshold")
        _check_probability(self.categorical_ratio, "categorical_ratio")
        if self.display_scale not in (1, 10):
            raise ConfigError(f"display_scale must be 1 or 10, got {self.display_scale}")


# ---------------------------------------------------------------------------
# Quality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    """Declarative business rule on one field path.

    IMPLIES carries ``if_path``/``if_value`` and a ``then`` rule, which is
    never itself an IMPLIES.
    """
    id: str
    target: str
    kind: RuleKind
    lo: float | None = None
    hi: float | None = None
    values: tuple[Scalar, ...] = ()
    pattern: PatternId | None = None
    if_path: str | None = None
    if_value: Scalar | None = None
    then: Rule | None = None


@dataclass(frozen=True)
class FieldQuality:
    """Similarity detail for one comparable field path."""
    path: str
    test: str
    passed: bool
    ks_statistic: float | None = None
    p_value: float | None = None
    tv_distance: float | None = None
    entropy_ratio: float = 1.0


QUALITY_WEIGHTS: tuple[float, float, float, float] = (0.3, 0.4, 0.2, 0.1)
"""Weights of the structural, statistical, semantic and diversity components."""


@dataclass(frozen=True)
class QualityReport:
    """Quality components, combined score and per-field detail."""
    q_struct: float
    q_stat: float
    q_sem: float
    q_div: float
    q_total: float
    fields: tuple[FieldQuality, ...] = ()
    rule_failures: Mapping[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Baselines and benchmarking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    """Template parameter slot."""
    kind: SlotKind
    values: tuple[Scalar, ...] = ()
    lo: float = 0.0
    hi: float = 0.0
    base: int = 0


@dataclass(frozen=True)
class Template:
    """Fixed values plus parameter slots for one message type.

    ``fixed`` is a protobuf-JSON object; ``slots`` maps a root-relative
    singular field path to its substitution.
    """
    message: str
    fixed: Mapping[str, Any] = field(default_factory=dict)
    slots: Mapping[str, Slot] = field(default_factory=dict)


@dataclass(frozen=True)
class BenchRow:
    """Timing of one (strategy, size) cell."""
    strategy: str
    size: int
    runs: int
    mean_seconds: float
    ci_halfwidth: float
    quality: QualityReport | None = None

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean_seconds - self.ci_halfwidth, self.mean_seconds + self.ci_halfwidth)


@dataclass(frozen=True)
class BenchReport:
    """Benchmark rows in (strategy, size) order."""
    rows: tuple[BenchRow, ...]
    confidence: float = 0.95

    def quality_of(self, strategy: str) -> QualityReport | None:
        for row in self.rows:
            if row.strategy == strategy and row.quality is not None:
                return row.quality
        return None


def finite_or_none(value: float | None) -> float | None:
    """Map NaN and infinities to None."""
    if value is None or not math.isfinite(value):
        return None
    return value
