"""Comparison baselines and the timing/quality benchmark.

Two baselines stand beside statistical generation: ``random`` fills every
field from the default generators without any domain knowledge, and
``template`` copies fixed values and substitutes a few parameter slots.
The benchmark times each strategy over seeded runs per dataset size and
scores one representative dataset per strategy.
"""

from __future__ import annotations

import io
import logging
import math
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from google.protobuf import json_format
from scipy import stats

from protosynth.common.errors import ConfigError, TemplateError, UnknownTypeError
from protosynth.common.types import (
    BenchReport,
    BenchRow,
    CycleStrategy,
    DomainModel,
    FieldInfo,
    FieldPath,
    GenerationConfig,
    Kind,
    QualityConfig,
    Rule,
    SchemaGraph,
    Slot,
    SlotKind,
    Template,
)
from protosynth.common.walk import denormalize
from protosynth.common.wire import read_delimited
from protosynth.dependency_resolver import Annotations, build_dependency_graphs
from protosynth.generation_engine import GenerationEngine
from protosynth.quality_assessor import assess, report_document
from protosynth.schema_core import enhance, resolve_path
from protosynth.sinks import MemorySink

logger = logging.getLogger(__name__)

TEMPLATE_FORMAT = "template/v1"
STRATEGIES = ("statistical", "template", "random")
MIN_RUNS = 10


# ---------------------------------------------------------------------------
# Random baseline
# ---------------------------------------------------------------------------


def random_engine(schema: SchemaGraph, seed: int, max_depth: int = 16) -> GenerationEngine:
    """Engine with default generators only and minimal cycle handling."""
    config = GenerationConfig(
        max_depth=max_depth,
        cycle_strategy=CycleStrategy.MINIMAL,
        seed=seed,
        use_dependencies=False,
    )
    return GenerationEngine(schema, None, config, graphs={})


def random_generate(message: str, schema: SchemaGraph, seed: int, max_depth: int = 16) -> Any:
    """One instance of ``message`` from the default generators."""
    return random_engine(schema, seed, max_depth).generate(message)


# ---------------------------------------------------------------------------
# Template baseline
# ---------------------------------------------------------------------------


def _set_path(instance: Any, schema: SchemaGraph, path: str, info: FieldInfo, value: Any) -> None:
    target = instance
    segments = FieldPath.parse(path).segments
    for segment in segments[:-1]:
        target = getattr(target, segment.name)
    setattr(target, segments[-1].name, denormalize(schema, info, value))


def _slot(doc: Any, info: FieldInfo, path: str) -> Slot:
    if not isinstance(doc, Mapping) or len(doc) != 1:
        raise TemplateError("slot needs exactly one of choice, range, counter", path)
    (key, spec), = doc.items()
    match key:
        case "choice":
            if not isinstance(spec, list) or not spec:
                raise TemplateError("choice takes a non-empty list", path)
            return Slot(SlotKind.CHOICE, values=tuple(spec))
        case "range":
            if not info.kind.is_numeric:
                raise TemplateError(f"range needs a numeric field, got {info.kind.value}", path)
            if isinstance(spec, Mapping):
                lo, hi = spec.get("lo"), spec.get("hi")
            elif isinstance(spec, list) and len(spec) == 2:
                lo, hi = spec
            else:
                raise TemplateError("range takes {lo, hi} or [lo, hi]", path)
            if not all(isinstance(v, int | float) and not isinstance(v, bool) for v in (lo, hi)):
                raise TemplateError("range bounds must be numbers", path)
            if lo > hi:
                raise TemplateError(f"empty range [{lo}, {hi}]", path)
            if info.kind.is_integer and math.ceil(lo) > math.floor(hi):
                raise TemplateError(f"range [{lo}, {hi}] holds no integer", path)
            return Slot(SlotKind.RANGE, lo=float(lo), hi=float(hi))
        case "counter":
            if not info.kind.is_integer:
                raise TemplateError("counter needs an integer field", path)
            base = spec.get("base", 0) if isinstance(spec, Mapping) else spec
            if isinstance(base, bool) or not isinstance(base, int):
                raise TemplateError("counter base must be an integer", path)
            return Slot(SlotKind.COUNTER, base=base)
    raise TemplateError(f"unknown slot kind '{key}'", path)


def parse_template(doc: Any, schema: SchemaGraph, locator: str = "<document>") -> Template:
    """Validate a ``template/v1`` document against the schema.

    ``fixed`` is a protobuf-JSON object for the message; ``slots`` maps
    singular scalar field paths (no repeated or map segments) to one of
    ``choice: [...]``, ``range: [lo, hi]`` or ``counter: {base: n}``.

    Raises:
        TemplateError: on a malformed document, a fixed value that does not
            parse, or a slot that does not fit its field.
    """
    if not isinstance(doc, Mapping) or doc.get("format") != TEMPLATE_FORMAT:
        raise TemplateError(f"expected a '{TEMPLATE_FORMAT}' document", locator)
    unknown = set(doc) - {"format", "message", "fixed", "slots"}
    if unknown:
        raise TemplateError(f"unknown keys {sorted(unknown)}", locator)
    message = doc.get("message")
    if not isinstance(message, str):
        raise TemplateError("template needs a message type", locator)
    try:
        cls = schema.message_class(message)
    except UnknownTypeError as exc:
        raise TemplateError(str(exc), locator) from None
    fixed = doc.get("fixed") or {}
    if not isinstance(fixed, Mapping):
        raise TemplateError("'fixed' must be a mapping", locator)
    try:
        json_format.ParseDict(dict(fixed), cls())
    except json_format.ParseError as exc:
        raise TemplateError(f"fixed values do not fit ({exc})", locator) from None
    raw_slots = doc.get("slots") or {}
    if not isinstance(raw_slots, Mapping):
        raise TemplateError("'slots' must be a mapping", locator)
    slots: dict[str, Slot] = {}
    scratch = cls()
    for path, spec in raw_slots.items():
        path = str(path)
        if any(segment.marker for segment in FieldPath.parse(path).segments):
            raise TemplateError("slots must target singular fields", path)
        try:
            _, info = resolve_path(schema, message, path)
        except UnknownTypeError as exc:
            raise TemplateError(str(exc), locator) from None
        if info.is_repeated or not info.kind.is_scalar:
            raise TemplateError("slots must target singular scalar fields", path)
        slot = _slot(spec, info, path)
        for value in slot.values:
            if info.kind is Kind.ENUM:
                assert info.type_name is not None
                if schema.enum_number(info.type_name, str(value)) is None:
                    raise TemplateError(f"'{value}' is not a declared enum value", path)
            try:
                _set_path(scratch, schema, path, info, value)
            except (TypeError, ValueError) as exc:
                raise TemplateError(f"choice {value!r} does not fit ({exc})", path) from None
        slots[path] = slot
    return Template(message, dict(fixed), slots)


def load_template(path: str | Path, schema: SchemaGraph) -> Template:
    """Read and validate a ``template/v1`` YAML file."""
    with Path(path).open(encoding="utf-8") as stream:
        try:
            doc = yaml.safe_load(stream)
        except yaml.YAMLError as exc:
            raise TemplateError(f"invalid YAML ({exc})", str(path)) from None
        except UnicodeDecodeError:
            raise TemplateError("not valid UTF-8", str(path)) from None
    return parse_template(doc, schema, str(path))


def template_generate(template: Template, index: int, seed: int, schema: SchemaGraph) -> Any:
    """The ``index``-th template instance.

    Fixed values are copied; choice and range slots draw from a generator
    seeded by (seed, index); counters yield ``base + index``.
    """
    instance = schema.message_class(template.message)()
    json_format.ParseDict(dict(template.fixed), instance)
    rng = np.random.default_rng([seed, index])
    for path, slot in sorted(template.slots.items()):
        _, info = resolve_path(schema, template.message, path)
        value: Any
        match slot.kind:
            case SlotKind.CHOICE:
                value = slot.values[int(rng.integers(len(slot.values)))]
            case SlotKind.RANGE:
                if info.kind.is_integer:
                    value = int(rng.integers(math.ceil(slot.lo), math.floor(slot.hi) + 1))
                else:
                    value = float(rng.uniform(slot.lo, slot.hi))
            case SlotKind.COUNTER:
                value = slot.base + index
        _set_path(instance, schema, path, info, value)
    return instance


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


def confidence_halfwidth(samples: Sequence[float], confidence: float = 0.95) -> float:
    """Student-t half-width of the mean's confidence interval."""
    n = len(samples)
    if n < 2:
        return 0.0
    sd = float(np.std(samples, ddof=1))
    return float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)


Producer = Callable[[int, int], Iterable[Any]]
"""(seed, size) → instances of one run."""


def _statistical(
    schema: SchemaGraph,
    message: str,
    domain: DomainModel,
    config: GenerationConfig,
    annotations: Annotations | None,
) -> Producer:
    registry = enhance(schema, domain)
    graphs = build_dependency_graphs(schema, domain, annotations) if config.use_dependencies else {}

    def produce(seed: int, size: int) -> Iterable[Any]:
        engine = GenerationEngine(
            schema, domain, replace(config, seed=seed), registry=registry, graphs=graphs
        )
        return engine.generate_batch(message, size)

    return produce


def _templated(schema: SchemaGraph, template: Template) -> Producer:
    def produce(seed: int, size: int) -> Iterable[Any]:
        return (template_generate(template, i, seed, schema) for i in range(size))

    return produce


def _random(schema: SchemaGraph, message: str, max_depth: int) -> Producer:
    def produce(seed: int, size: int) -> Iterable[Any]:
        engine = random_engine(schema, seed, max_depth)
        return (engine.generate_indexed(message, i) for i in range(size))

    return produce


def _producers(
    schema: SchemaGraph,
    message: str,
    strategies: Sequence[str],
    domain: DomainModel | None,
    template: Template | None,
    config: GenerationConfig,
    annotations: Annotations | None,
) -> dict[str, Producer]:
    producers: dict[str, Producer] = {}
    for strategy in strategies:
        match strategy:
            case "statistical":
                if domain is None:
                    raise ConfigError("statistical strategy needs a domain model")
                producers[strategy] = _statistical(schema, message, domain, config, annotations)
            case "template":
                if template is None:
                    raise ConfigError("template strategy needs a template")
                if template.message != message:
                    raise ConfigError(
                        f"template is for {template.message}, benchmark is for {message}"
                    )
                producers[strategy] = _templated(schema, template)
            case "random":
                producers[strategy] = _random(schema, message, config.max_depth)
            case _:
                raise ConfigError(f"unknown strategy '{strategy}' (expected one of {STRATEGIES})")
    return producers


def run_benchmark(
    schema: SchemaGraph,
    domain: DomainModel | None,
    rules: Sequence[Rule],
    sizes: Sequence[int],
    strategies: Sequence[str],
    *,
    runs: int = MIN_RUNS,
    reference: Iterable[Any] | None = None,
    template: Template | None = None,
    message: str | None = None,
    config: GenerationConfig | None = None,
    quality_config: QualityConfig | None = None,
    annotations: Annotations | None = None,
) -> BenchReport:
    """Time every (strategy, size) cell and score each strategy once.

    Run r of a cell uses seed ``config.seed + r``. A run covers generation
    and serialization into an in-memory sink. The first run at the largest
    size is the strategy's representative dataset, assessed against
    ``reference`` when one is given.

    Raises:
        ConfigError: on an empty strategy list, fewer than ten runs, a
            non-positive size, or a strategy missing its input.
    """
    if not strategies:
        raise ConfigError("benchmark needs at least one strategy")
    if runs < MIN_RUNS:
        raise ConfigError(f"benchmark needs at least {MIN_RUNS} runs, got {runs}")
    if not sizes or min(sizes) < 1:
        raise ConfigError("benchmark sizes must be positive")
    config = config or GenerationConfig()
    if message is None:
        message = domain.root if domain else template.message if template else None
    if message is None:
        raise ConfigError("benchmark needs a message type")
    reference_items = list(reference) if reference is not None else None
    producers = _producers(schema, message, strategies, domain, template, config, annotations)
    largest = max(sizes)
    rows: list[BenchRow] = []
    for strategy in strategies:
        produce = producers[strategy]
        representative: bytes | None = None
        for size in sorted(sizes):
            timings = []
            for run in range(runs):
                sink = MemorySink()
                start = time.perf_counter()
                for instance in produce(config.seed + run, size):
                    sink.write(instance)
                timings.append(time.perf_counter() - start)
                if size == largest and run == 0:
                    representative = sink.getvalue()
            quality = None
            if size == largest and reference_items is not None and representative is not None:
                cls = schema.message_class(message)
                generated = [cls.FromString(p) for p in _payloads(representative)]
                quality = assess(generated, reference_items, schema, rules, quality_config)
            row = BenchRow(
                strategy,
                size,
                runs,
                float(np.mean(timings)),
                confidence_halfwidth(timings),
                quality,
            )
            logger.info(
                "bench %s n=%d: %.4fs ± %.4fs", strategy, size, row.mean_seconds, row.ci_halfwidth
            )
            rows.append(row)
    return BenchReport(tuple(rows))


def _payloads(data: bytes) -> list[bytes]:
    return list(read_delimited(io.BytesIO(data)))


def bench_document(report: BenchReport) -> dict[str, Any]:
    """JSON-ready form of a benchmark report."""
    return {
        "confidence": report.confidence,
        "rows": [
            {
                "strategy": row.strategy,
                "size": row.size,
                "runs": row.runs,
                "mean_seconds": row.mean_seconds,
                "ci_halfwidth": row.ci_halfwidth,
                "quality": report_document(row.quality) if row.quality else None,
            }
            for row in report.rows
        ],
    }


def render_bench_table(report: BenchReport, scale: int = 1) -> str:
    """Aligned columns: strategy, size, mean ± CI, and quality components."""
    header = (
        f"{'strategy':<12}  {'size':>8}  {'mean s':>10}  {'± 95%':>10}  "
        f"{'struct':>7}  {'stat':>7}  {'sem':>7}  {'div':>7}  {'Q':>7}"
    )
    lines = [header]
    for row in report.rows:
        q = row.quality
        scores = (
            "".join(
                f"  {v * scale:>7.3f}" for v in (q.q_struct, q.q_stat, q.q_sem, q.q_div, q.q_total)
            )
            if q
            else "".join(f"  {'-':>7}" for _ in range(5))
        )
        lines.append(
            f"{row.strategy:<12}  {row.size:>8}  {row.mean_seconds:>10.4f}  "
            f"{row.ci_halfwidth:>10.4f}{scores}"
        )
    return "\n".join(lines) + "\n"
