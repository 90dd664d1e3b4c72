"""Recursive-descent instance generation.

Messages are filled field by field in dependency order. Message-typed
fields recurse with the context stack pushed; re-entering a type already
on the stack triggers the configured cycle strategy. Scalars come from the
field's registry strategy, or from a conditional distribution when a
controlling field has already been generated.

Every instance draws from its own generator seeded by (seed ⊕ batch index,
index in batch), so output does not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import string
import uuid
from collections import deque
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import UTC, datetime, timedelta
from typing import Any

import numpy as np
from google.protobuf.message import Message

from protosynth.common.errors import SinkError
from protosynth.common.types import (
    INTEGER_BOUNDS,
    Cardinality,
    CycleStrategy,
    DependencyEdge,
    DependencyGraph,
    DomainModel,
    FieldInfo,
    FieldProfile,
    GenerationConfig,
    GeneratorRegistry,
    GeneratorSpec,
    Kind,
    PatternId,
    PatternSpec,
    Provenance,
    Scalar,
    SchemaGraph,
    Strategy,
)
from protosynth.common.walk import default_value, denormalize, join, normalize
from protosynth.dependency_resolver import Annotations, build_dependency_graphs, topo_order
from protosynth.domain_analyzer import (
    CHAR_CLASSES,
    dumps_domain_model,
    loads_domain_model,
    parse_timestamp,
)
from protosynth.schema_core import enhance, load_descriptor_set
from protosynth.sinks import Sink

logger = logging.getLogger(__name__)

DEFAULT_NUMERIC_RANGE = (0, 1000)
DEFAULT_STRING_LENGTH = (8, 16)
DEFAULT_BYTES_LENGTH = (0, 32)
DEFAULT_ALPHABET = string.ascii_lowercase + string.digits
DEFAULT_SPAN = ("2000-01-01T00:00:00Z", "2030-01-01T00:00:00Z")

Observer = Callable[[str, FieldInfo, Any], None]
"""Called with (path, field, value) whenever a value enters the local context."""


# ---------------------------------------------------------------------------
# Context and cycle handling
# ---------------------------------------------------------------------------


@dataclass
class GenerationContext:
    """State of one top-level generation call.

    ``stack`` holds (message type, depth) with depth equal to the stack
    size at push time; ``reuse_cache`` keeps the last completed instance of
    each message type.
    """
    rng: np.random.Generator
    stack: list[tuple[str, int]] = field(default_factory=list)
    reuse_cache: dict[str, Any] = field(default_factory=dict)

    def push(self, message: str) -> None:
        self.stack.append((message, len(self.stack)))

    def pop(self) -> None:
        self.stack.pop()

    @property
    def depth(self) -> int:
        return len(self.stack)


def has_cycle(
    message: str, ctx: GenerationContext, max_depth: int, recursion_allowance: int = 0
) -> bool:
    """True iff ``message`` is on the stack at a depth below ``max_depth``.

    With a ``recursion_allowance`` of N, it takes more than N such entries.
    """
    hits = sum(1 for m, d in ctx.stack if m == message and d < max_depth)
    return hits > recursion_allowance


def termination_probability(lam: float, depth: int) -> float:
    """Probability 1 − e^(−λ·depth) of cutting recursion at ``depth``.

    Raises:
        ValueError: if ``lam`` is not positive.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return 1.0 - math.exp(-lam * depth)


def instance_rng(seed: int, index: int, batch_size: int) -> np.random.Generator:
    """Generator for the ``index``-th instance of a run."""
    batch, offset = divmod(index, batch_size)
    return np.random.default_rng([seed ^ batch, offset])


def _sub_messages(descriptor: Any, value: Any) -> Iterable[Any]:
    if descriptor.message_type is None:
        return ()
    if descriptor.message_type.GetOptions().map_entry:
        if descriptor.message_type.fields_by_name["value"].message_type is None:
            return ()
        return list(value.values())
    return (value,) if isinstance(value, Message) else list(value)


def message_levels(instance: Any) -> int:
    """Nesting levels of an instance; 1 when no sub-message is set."""
    deepest = 0
    for descriptor, value in instance.ListFields():
        for sub in _sub_messages(descriptor, value):
            deepest = max(deepest, message_levels(sub))
    return 1 + deepest


def clip_levels(instance: Any, levels: int) -> None:
    """Clear sub-messages of ``instance`` below ``levels`` nesting levels."""
    for descriptor, value in instance.ListFields():
        subs = _sub_messages(descriptor, value)
        if not subs:
            continue
        if levels <= 1:
            instance.ClearField(descriptor.name)
            continue
        for sub in subs:
            clip_levels(sub, levels - 1)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


class FrequencySampler:
    """Inverse-CDF sampling over a (value, count) table."""

    __slots__ = ("cumulative", "total", "values")

    def __init__(self, table: Sequence[tuple[Scalar, int]]):
        self.values = [v for v, _ in table]
        self.cumulative = np.cumsum([c for _, c in table], dtype=np.float64)
        self.total = float(self.cumulative[-1]) if len(self.values) else 0.0

    def __bool__(self) -> bool:
        return self.total > 0

    def sample(self, rng: np.random.Generator) -> Scalar:
        i = int(np.searchsorted(self.cumulative, rng.random() * self.total, side="right"))
        return self.values[min(i, len(self.values) - 1)]


def _clip_integer(value: int, kind: Kind) -> int:
    lo, hi = INTEGER_BOUNDS[kind]
    return min(max(value, lo), hi)


def sample_quantiles(
    quantiles: Sequence[Scalar],
    lo: Scalar,
    hi: Scalar,
    kind: Kind,
    rng: np.random.Generator,
) -> Scalar:
    """Inverse transform over a percentile grid with linear interpolation."""
    grid = np.asarray(quantiles, dtype=np.float64)
    x = float(np.interp(rng.random() * (len(grid) - 1), np.arange(len(grid)), grid))
    if kind.is_integer:
        return _clip_integer(min(max(round(x), int(lo)), int(hi)), kind)
    return min(max(x, float(lo)), float(hi))


def default_scalar(
    schema: SchemaGraph, info: FieldInfo, rng: np.random.Generator
) -> Scalar:
    """Value of the bounded default generator for a field's kind."""
    kind = info.kind
    if kind.is_integer:
        return int(rng.integers(DEFAULT_NUMERIC_RANGE[0], DEFAULT_NUMERIC_RANGE[1] + 1))
    if kind.is_float:
        return float(rng.uniform(*DEFAULT_NUMERIC_RANGE))
    if kind is Kind.BOOL:
        return bool(rng.random() < 0.5)
    if kind is Kind.ENUM:
        assert info.type_name is not None
        values = schema.enum_values(info.type_name)
        return values[int(rng.integers(len(values)))][0]
    if kind is Kind.STRING:
        n = int(rng.integers(DEFAULT_STRING_LENGTH[0], DEFAULT_STRING_LENGTH[1] + 1))
        return "".join(DEFAULT_ALPHABET[i] for i in rng.integers(len(DEFAULT_ALPHABET), size=n))
    n = int(rng.integers(DEFAULT_BYTES_LENGTH[0], DEFAULT_BYTES_LENGTH[1] + 1))
    return normalize(schema, info, rng.bytes(n))


# ---------------------------------------------------------------------------
# Pattern generators
# ---------------------------------------------------------------------------

_CLASS_CHARS = {
    "lower": string.ascii_lowercase,
    "upper": string.ascii_uppercase,
    "digit": string.digits,
    "space": " ",
    "punct": string.punctuation,
    "other": "äöüéñßøå",
}

_TIMESTAMP_LAYOUTS: dict[int, tuple[str, int, str]] = {
    # length: (strftime layout, fraction digits, suffix)
    10: ("%Y-%m-%d", 0, ""),
    16: ("%Y-%m-%dT%H:%M", 0, ""),
    19: ("%Y-%m-%dT%H:%M:%S", 0, ""),
    20: ("%Y-%m-%dT%H:%M:%S", 0, "Z"),
    23: ("%Y-%m-%dT%H:%M:%S", 3, ""),
    24: ("%Y-%m-%dT%H:%M:%S", 3, "Z"),
    25: ("%Y-%m-%dT%H:%M:%S", 0, "+00:00"),
    26: ("%Y-%m-%dT%H:%M:%S", 6, ""),
    27: ("%Y-%m-%dT%H:%M:%S", 6, "Z"),
    29: ("%Y-%m-%dT%H:%M:%S", 3, "+00:00"),
    32: ("%Y-%m-%dT%H:%M:%S", 6, "+00:00"),
}


def _length(pattern: PatternSpec, rng: np.random.Generator, fallback: int) -> int:
    if not pattern.lengths:
        return fallback
    return int(FrequencySampler(pattern.lengths).sample(rng))


def _timestamp(pattern: PatternSpec, rng: np.random.Generator) -> str:
    start_text, end_text = pattern.span or DEFAULT_SPAN
    start = parse_timestamp(start_text) or datetime(2000, 1, 1, tzinfo=UTC)
    end = parse_timestamp(end_text) or start
    moment = start + timedelta(seconds=rng.random() * (end - start).total_seconds())
    moment = moment.astimezone(UTC)
    layout, digits, suffix = _TIMESTAMP_LAYOUTS.get(
        _length(pattern, rng, 20), _TIMESTAMP_LAYOUTS[20]
    )
    text = moment.strftime(layout)
    if digits:
        text += "." + f"{moment.microsecond:06d}"[:digits]
    return text + suffix


def generate_pattern(pattern: PatternSpec, rng: np.random.Generator) -> str:
    """A string of the detected format, with a length from the histogram."""
    match pattern.pattern_id:
        case PatternId.UUID:
            return str(uuid.UUID(bytes=rng.bytes(16), version=4))
        case PatternId.ISO8601:
            return _timestamp(pattern, rng)
        case PatternId.EMAIL:
            domain = "@example.com"
            n = max(1, _length(pattern, rng, 20) - len(domain))
            local = rng.integers(len(string.ascii_lowercase), size=n)
            return "".join(string.ascii_lowercase[i] for i in local) + domain
        case PatternId.NUMERIC_STRING:
            n = max(1, _length(pattern, rng, 6))
            digits = [int(rng.integers(1 if n > 1 else 0, 10))]
            digits += [int(d) for d in rng.integers(10, size=n - 1)]
            return "".join(map(str, digits))
        case PatternId.HEX:
            n = max(1, _length(pattern, rng, 16))
            return "".join("0123456789abcdef"[i] for i in rng.integers(16, size=n))
        case _:
            n = _length(pattern, rng, DEFAULT_STRING_LENGTH[0])
            weights = dict(pattern.char_classes) or {"lower": 1}
            classes = FrequencySampler([(c, weights.get(c, 0)) for c in CHAR_CLASSES])
            chars = []
            for _ in range(n):
                alphabet = _CLASS_CHARS[str(classes.sample(rng))]
                chars.append(alphabet[int(rng.integers(len(alphabet)))])
            return "".join(chars)


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MessagePlan:
    """Generator-selection skeleton of one message type.

    Holds no sampled values, so caching plans never changes output.
    """
    message: str
    order: tuple[FieldInfo, ...]
    incoming: Mapping[str, tuple[DependencyEdge, ...]]
    oneofs: tuple[tuple[str, tuple[FieldInfo, ...]], ...]


class GenerationEngine:
    """Generates instances from immutable schema, domain, registry and graphs.

    Args:
        schema: Schema to generate for.
        domain: Optional domain model; without one every field uses its
            default generator.
        config: Generation settings.
        registry: Precomputed registry (built with ``enhance`` otherwise).
        graphs: Precomputed cycle-free dependency graphs per message.
        annotations: Annotation sidecar content for graph construction.
        observer: Instrumentation hook for values entering the context.
    """

    def __init__(
        self,
        schema: SchemaGraph,
        domain: DomainModel | None = None,
        config: GenerationConfig | None = None,
        *,
        registry: GeneratorRegistry | None = None,
        graphs: Mapping[str, DependencyGraph] | None = None,
        annotations: Annotations | None = None,
        observer: Observer | None = None,
    ):
        self.schema = schema
        self.domain = domain
        self.config = config or GenerationConfig()
        self.registry = registry or enhance(schema, domain)
        if graphs is None:
            graphs = (
                build_dependency_graphs(schema, domain, annotations)
                if self.config.use_dependencies
                else {}
            )
        self.graphs = graphs
        self.annotations = annotations
        self.observer = observer
        self._plans: dict[str, MessagePlan] = {}
        self._samplers: dict[tuple[Any, ...], FrequencySampler] = {}

    # --- plans and lookups ---

    def _build_plan(self, message: str) -> MessagePlan:
        fields = self.schema.fields(message)
        by_name = {info.name: info for info in fields}
        graph = self.graphs.get(message) if self.config.use_dependencies else None
        if graph is not None and graph.edges:
            order = tuple(by_name[n] for n in topo_order(graph, list(by_name)))
            incoming = {n: graph.incoming(n) for n in by_name if graph.incoming(n)}
        else:
            order, incoming = fields, {}
        groups: dict[str, list[FieldInfo]] = {}
        for info in fields:
            if info.oneof is not None:
                groups.setdefault(info.oneof, []).append(info)
        return MessagePlan(
            message, order, incoming, tuple((k, tuple(v)) for k, v in groups.items())
        )

    def plan(self, message: str) -> MessagePlan:
        if not self.config.template_cache:
            return self._build_plan(message)
        cached = self._plans.get(message)
        if cached is None:
            cached = self._plans[message] = self._build_plan(message)
        return cached

    def profile(self, spec: GeneratorSpec, path: str) -> FieldProfile | None:
        """Profile of ``path``, else of the first profiled path of the field."""
        if self.domain is None:
            return None
        found = self.domain.profile(path)
        if found is None and spec.profile_paths:
            found = self.domain.profile(spec.profile_paths[0])
        return found

    def _sampler(
        self, key: tuple[Any, ...], table: Sequence[tuple[Scalar, int]]
    ) -> FrequencySampler:
        sampler = self._samplers.get(key)
        if sampler is None:
            sampler = self._samplers[key] = FrequencySampler(table)
        return sampler

    # --- scalar values ---

    def generate_field_value(
        self,
        info: FieldInfo,
        spec: GeneratorSpec,
        profile: FieldProfile | None,
        rng: np.random.Generator,
        *,
        conditional: Sequence[tuple[Scalar, int]] | None = None,
        conditional_key: tuple[Any, ...] | None = None,
    ) -> Scalar:
        """One normalized value for a scalar field.

        A non-empty ``conditional`` row takes precedence over the registry
        strategy.
        """
        if conditional:
            key = conditional_key or ("row", id(conditional))
            return self._sampler(key, conditional).sample(rng)
        if profile is None or not profile.stats.present_count:
            return default_scalar(self.schema, info, rng)
        strategy = spec.strategy_for(profile.path)
        if strategy is Strategy.DEFAULT:
            return default_scalar(self.schema, info, rng)
        stats = profile.stats
        frequencies = self._sampler(("freq", profile.path), stats.frequencies)
        match strategy:
            case Strategy.ENUM_WEIGHTED:
                declared = self._sampler(
                    ("enum", profile.path),
                    [(v, c) for v, c in stats.frequencies if isinstance(v, str)],
                )
                if declared:
                    return declared.sample(rng)
                return default_scalar(self.schema, info, rng)
            case Strategy.PATTERN:
                assert profile.pattern is not None
                return generate_pattern(profile.pattern, rng)
            case Strategy.RANGE:
                assert stats.minimum is not None and stats.maximum is not None
                if info.kind.is_integer:
                    lo, hi = int(stats.minimum), int(stats.maximum)
                    return min(lo + int(rng.random() * (hi - lo + 1)), hi)
                return float(rng.uniform(float(stats.minimum), float(stats.maximum)))
        if stats.complete or info.kind.is_categorical:
            return frequencies.sample(rng)
        if info.kind.is_numeric and stats.quantiles:
            assert stats.minimum is not None and stats.maximum is not None
            return sample_quantiles(stats.quantiles, stats.minimum, stats.maximum, info.kind, rng)
        covered = (stats.present_count - stats.overflow) / stats.present_count
        if frequencies and rng.random() < covered:
            return frequencies.sample(rng)
        if profile.pattern is not None:
            text = generate_pattern(profile.pattern, rng)
            if info.kind is Kind.BYTES:
                return normalize(self.schema, info, rng.bytes(len(text)))
            return text
        return default_scalar(self.schema, info, rng)

    def _propagated(
        self,
        info: FieldInfo,
        prefix: str,
        edges: Iterable[DependencyEdge],
        local: Mapping[str, Any],
        rng: np.random.Generator,
        spec: GeneratorSpec,
    ) -> tuple[bool, Scalar | None]:
        """Value implied by already generated fields, if any."""
        for edge in edges:
            if edge.source not in local:
                continue
            source = local[edge.source]
            if edge.provenance is Provenance.SEMANTIC:
                copied = self._copied_id(info, source)
                if copied is not None:
                    return True, copied
                continue
            if self.domain is None:
                continue
            for controlling, dependent in self._conditional_paths(edge, prefix, spec):
                table = self.domain.conditional(controlling, dependent)
                if table is None or table.skipped:
                    continue
                row = table.row(source)
                if row:
                    key = ("cond", controlling, dependent, source)
                    return True, self._sampler(key, row).sample(rng)
                if table.marginal:
                    key = ("marginal", controlling, dependent)
                    return True, self._sampler(key, table.marginal).sample(rng)
        return False, None

    def _conditional_paths(
        self, edge: DependencyEdge, prefix: str, spec: GeneratorSpec
    ) -> Iterator[tuple[str, str]]:
        yield join(prefix, edge.source), join(prefix, edge.target)
        for path in spec.profile_paths[:1]:
            other, _, _ = path.rpartition(".")
            if other != prefix:
                yield join(other, edge.source), path

    def _copied_id(self, info: FieldInfo, source: Any) -> Scalar | None:
        if not hasattr(source, "DESCRIPTOR"):
            return None
        referenced = source.DESCRIPTOR.full_name
        try:
            id_info = self.schema.field_info(referenced, "id")
        except LookupError:
            return None
        compatible = id_info.kind is info.kind or (
            id_info.kind.is_integer and info.kind.is_integer
        )
        if not compatible or id_info.is_repeated:
            return None
        value = normalize(self.schema, id_info, getattr(source, "id"))
        if info.kind.is_integer:
            return _clip_integer(int(value), info.kind)
        return value

    # --- messages ---

    def _null(self, profile: FieldProfile | None, rng: np.random.Generator) -> bool:
        override = self.config.null_probability_override
        if override is not None:
            return bool(rng.random() < override)
        if profile is None:
            return False
        return bool(rng.random() < profile.stats.null_probability)

    def _size(self, profile: FieldProfile | None, rng: np.random.Generator) -> int:
        sizes = self.config.repeated_size
        if sizes.empirical and profile is not None and profile.sizes is not None:
            table = profile.sizes
            if table.present_count:
                if table.complete:
                    n = int(self._sampler(("sizes", profile.path), table.frequencies).sample(rng))
                else:
                    assert table.minimum is not None and table.maximum is not None
                    n = int(
                        sample_quantiles(
                            table.quantiles, table.minimum, table.maximum, Kind.UINT32, rng
                        )
                    )
                return min(n, sizes.cap)
        n = int(rng.geometric(1.0 / (1.0 + sizes.mean))) - 1
        return min(n, sizes.cap)

    def _choose_oneofs(
        self, plan: MessagePlan, prefix: str, rng: np.random.Generator
    ) -> set[str]:
        chosen = set()
        for _, members in plan.oneofs:
            weights: list[tuple[Scalar, int]] = []
            for info in members:
                spec = self.registry.entry(plan.message, info.name)
                profile = self.profile(spec, join(prefix, info.name))
                if profile is not None:
                    weights.append((info.name, profile.stats.present_count))
            if not sum(c for _, c in weights):
                chosen.add(members[int(rng.integers(len(members)))].name)
                continue
            # exactly one member, by observed presence
            chosen.add(str(FrequencySampler(weights).sample(rng)))
        return chosen

    def _enter(self, path: str, info: FieldInfo, value: Any, local: dict[str, Any]) -> None:
        local[info.name] = value
        if self.observer is not None:
            self.observer(path, info, value)

    def fill(
        self,
        instance: Any,
        message: str,
        prefix: str,
        ctx: GenerationContext,
        *,
        minimal: bool = False,
    ) -> Any:
        """Populate ``instance`` in dependency order.

        In minimal mode message-typed fields are left unset.
        """
        plan = self.plan(message)
        chosen = self._choose_oneofs(plan, prefix, ctx.rng)
        local: dict[str, Any] = {}
        for info in plan.order:
            if info.oneof is not None and info.name not in chosen:
                continue
            spec = self.registry.entry(message, info.name)
            if info.is_map:
                self._fill_map(instance, info, spec, prefix, ctx, minimal)
            elif info.is_repeated:
                self._fill_repeated(instance, info, spec, prefix, ctx, minimal)
            elif info.is_message:
                if minimal:
                    continue
                path = join(prefix, info.name)
                if info.oneof is None and self._null(self.profile(spec, path), ctx.rng):
                    continue
                assert info.type_name is not None
                child = self.child(info.type_name, path, ctx)
                target = getattr(instance, info.name)
                target.CopyFrom(child)
                target.SetInParent()
                self._enter(path, info, target, local)
            else:
                self._fill_scalar(instance, info, spec, prefix, ctx, plan, local)
        return instance

    def _fill_scalar(
        self,
        instance: Any,
        info: FieldInfo,
        spec: GeneratorSpec,
        prefix: str,
        ctx: GenerationContext,
        plan: MessagePlan,
        local: dict[str, Any],
    ) -> None:
        path = join(prefix, info.name)
        profile = self.profile(spec, path)
        required = (
            info.has_presence and info.cardinality is Cardinality.SINGULAR and info.oneof is None
        )
        if not required and info.oneof is None and self._null(profile, ctx.rng):
            if not info.has_presence:
                implicit = normalize(self.schema, info, default_value(info.kind))
                self._enter(path, info, implicit, local)
            return
        found, value = self._propagated(
            info, prefix, plan.incoming.get(info.name, ()), local, ctx.rng, spec
        )
        if not found or value is None:
            value = self.generate_field_value(info, spec, profile, ctx.rng)
        setattr(instance, info.name, denormalize(self.schema, info, value))
        self._enter(path, info, value, local)

    def _fill_repeated(
        self,
        instance: Any,
        info: FieldInfo,
        spec: GeneratorSpec,
        prefix: str,
        ctx: GenerationContext,
        minimal: bool,
    ) -> None:
        if minimal and info.is_message:
            return
        path = join(prefix, f"{info.name}[]")
        profile = self.profile(spec, path)
        size = self._size(profile, ctx.rng)
        container = getattr(instance, info.name)
        if info.is_message:
            assert info.type_name is not None
            for _ in range(size):
                container.add().CopyFrom(self.child(info.type_name, path, ctx))
            return
        values = [self.generate_field_value(info, spec, profile, ctx.rng) for _ in range(size)]
        container.extend(denormalize(self.schema, info, v) for v in values)

    def _fill_map(
        self,
        instance: Any,
        info: FieldInfo,
        spec: GeneratorSpec,
        prefix: str,
        ctx: GenerationContext,
        minimal: bool,
    ) -> None:
        assert info.type_name is not None
        entry = info.type_name
        key_info = self.schema.field_info(entry, "key")
        value_info = self.schema.field_info(entry, "value")
        if minimal and value_info.is_message:
            return
        path = join(prefix, info.name)
        size = self._size(self.profile(spec, path), ctx.rng)
        key_path = join(prefix, f"{info.name}{{}}key")
        value_path = join(prefix, f"{info.name}{{}}value")
        key_spec = self.registry.entry(entry, "key")
        value_spec = self.registry.entry(entry, "value")
        key_profile = self.profile(key_spec, key_path)
        value_profile = self.profile(value_spec, value_path)
        container = getattr(instance, info.name)
        keys: list[Any] = []
        seen: set[Any] = set()
        for _ in range(4 * size):
            if len(keys) == size:
                break
            key = denormalize(
                self.schema,
                key_info,
                self.generate_field_value(key_info, key_spec, key_profile, ctx.rng),
            )
            if key not in seen:
                seen.add(key)
                keys.append(key)
        for key in keys:
            if value_info.is_message:
                assert value_info.type_name is not None
                container[key].CopyFrom(self.child(value_info.type_name, value_path, ctx))
            else:
                value = self.generate_field_value(value_info, value_spec, value_profile, ctx.rng)
                container[key] = denormalize(self.schema, value_info, value)

    def message(self, message: str, prefix: str, ctx: GenerationContext) -> Any:
        """Generate a full instance with ``message`` pushed on the stack."""
        ctx.push(message)
        try:
            instance = self.fill(self.schema.message_class(message)(), message, prefix, ctx)
        finally:
            ctx.pop()
        ctx.reuse_cache[message] = instance
        return instance

    def minimal(self, message: str, prefix: str, ctx: GenerationContext) -> Any:
        """Instance with scalars populated and message-typed fields unset."""
        return self.fill(self.schema.message_class(message)(), message, prefix, ctx, minimal=True)

    def child(self, message: str, path: str, ctx: GenerationContext) -> Any:
        """Instance for a message-typed field at ``path``."""
        if has_cycle(message, ctx, self.config.max_depth, self.config.recursion_allowance):
            return self.handle_cycle(message, path, ctx)
        if ctx.depth >= self.config.max_depth:
            return self.minimal(message, path, ctx)
        return self.message(message, path, ctx)

    def handle_cycle(
        self,
        message: str,
        path: str,
        ctx: GenerationContext,
        strategy: CycleStrategy | None = None,
    ) -> Any:
        """Apply a cycle strategy to a type that is already on the stack.

        reuse returns the cached instance of the type (minimal if none),
        clipped so the result stays within ``max_depth`` nesting levels;
        probabilistic stops with probability 1 − e^(−λ·depth) and otherwise
        recurses one more level while the stack has room.
        """
        strategy = strategy or self.config.cycle_strategy
        if strategy is CycleStrategy.REUSE:
            cached = ctx.reuse_cache.get(message)
            if cached is not None:
                room = max(1, self.config.max_depth + 1 - ctx.depth)
                if message_levels(cached) <= room:
                    return cached
                clipped = type(cached)()
                clipped.CopyFrom(cached)
                clip_levels(clipped, room)
                return clipped
        elif strategy is CycleStrategy.PROBABILISTIC:
            stop = termination_probability(self.config.termination_lambda, ctx.depth)
            if ctx.rng.random() >= stop and ctx.depth < self.config.max_depth:
                return self.message(message, path, ctx)
        return self.minimal(message, path, ctx)

    def generate(self, message: str, rng: np.random.Generator | None = None) -> Any:
        """One instance of ``message``.

        Raises:
            UnknownTypeError: if ``message`` is not in the schema.
        """
        self.schema.fields(message)
        if rng is None:
            rng = instance_rng(self.config.seed, 0, self.config.batch_size)
        return self.message(message, "", GenerationContext(rng))

    def generate_indexed(self, message: str, index: int) -> Any:
        """The ``index``-th instance of a run under this engine's seed."""
        return self.generate(
            message, instance_rng(self.config.seed, index, self.config.batch_size)
        )

    # --- batches ---

    def _batch(self, message: str, batch: int, count: int) -> list[Any]:
        start = batch * self.config.batch_size
        return [self.generate_indexed(message, start + i) for i in range(count)]

    def _serial(self, message: str, count: int) -> Iterator[list[Any]]:
        size = self.config.batch_size
        for batch in range(math.ceil(count / size)):
            yield self._batch(message, batch, min(size, count - batch * size))

    def _parallel(self, message: str, count: int) -> Iterator[list[Any]]:
        size = self.config.batch_size
        batches = math.ceil(count / size)
        cls = self.schema.message_class(message)
        domain_text = None
        if self.domain is not None:
            domain_text = dumps_domain_model(self.domain)
        with ProcessPoolExecutor(
            max_workers=self.config.workers,
            initializer=_init_worker,
            initargs=(self.schema.source, domain_text, self.config, self.annotations),
        ) as pool:
            pending: deque[Future[list[bytes]]] = deque()
            submitted = 0
            while submitted < batches or pending:
                while submitted < batches and len(pending) < 2 * self.config.workers:
                    n = min(size, count - submitted * size)
                    pending.append(pool.submit(_worker_batch, message, submitted, n))
                    submitted += 1
                yield [cls.FromString(payload) for payload in pending.popleft().result()]

    def generate_batch(
        self, message: str, count: int, sinks: Sequence[Sink] = ()
    ) -> Iterator[Any]:
        """Stream ``count`` instances, writing each to every sink.

        Sinks are flushed after every batch. A sink failure flushes the
        other sinks and propagates.
        """
        if count < 1:
            raise ValueError(f"count must be >= 1, got {count}")
        self.schema.fields(message)
        parallel = self.config.workers > 1 and self.observer is None
        batches = self._parallel(message, count) if parallel else self._serial(message, count)
        written = 0
        for batch in batches:
            try:
                for instance in batch:
                    for sink in sinks:
                        sink.write(instance)
                    yield instance
            except SinkError:
                for sink in sinks:
                    try:
                        sink.flush()
                    except SinkError:
                        pass
                raise
            for sink in sinks:
                sink.flush()
            written += len(batch)
            logger.info("generated %d/%d %s instances", written, count, message)


_WORKER: dict[str, GenerationEngine] = {}


def _init_worker(
    source: bytes,
    domain_text: str | None,
    config: GenerationConfig,
    annotations: Annotations | None,
) -> None:
    schema = load_descriptor_set(source)
    domain = loads_domain_model(domain_text) if domain_text else None
    _WORKER["engine"] = GenerationEngine(schema, domain, config, annotations=annotations)


def _worker_batch(message: str, batch: int, count: int) -> list[bytes]:
    engine = _WORKER["engine"]
    return [m.SerializeToString(deterministic=True) for m in engine._batch(message, batch, count)]


# ---------------------------------------------------------------------------
# Functional entry points
# ---------------------------------------------------------------------------


def generate(
    message: str,
    config: GenerationConfig,
    schema: SchemaGraph,
    domain: DomainModel | None = None,
    registry: GeneratorRegistry | None = None,
    graphs: Mapping[str, DependencyGraph] | None = None,
) -> Any:
    """One instance of ``message`` using the run's first per-instance seed."""
    return GenerationEngine(schema, domain, config, registry=registry, graphs=graphs).generate(
        message
    )


def generate_batch(
    message: str,
    count: int,
    config: GenerationConfig,
    schema: SchemaGraph,
    domain: DomainModel | None = None,
    sinks: Sequence[Sink] = (),
    *,
    annotations: Annotations | None = None,
) -> Iterator[Any]:
    """Stream ``count`` instances of ``message`` into ``sinks``."""
    engine = GenerationEngine(schema, domain, config, annotations=annotations)
    return engine.generate_batch(message, count, sinks)
