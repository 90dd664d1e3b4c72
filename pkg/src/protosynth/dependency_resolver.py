"""Intra-message field dependencies and conditional distributions.

Dependency edges come from three sources: field names (``customer`` and
``customer_id``), strong associations in the domain model, and an
``annotations/v1`` sidecar. Edges run from the field generated first to
the field that depends on it. Cycles are broken by dropping the weakest
edge, and generation order is a topological sort that falls back to
declaration order.
"""

from __future__ import annotations

import logging
import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import networkx as nx
import yaml

from protosynth.common.errors import ConfigError, UnknownTypeError
from protosynth.common.types import (
    AnalysisConfig,
    ConditionalDistribution,
    DependencyEdge,
    DependencyGraph,
    DomainModel,
    FieldInfo,
    Kind,
    Provenance,
    Scalar,
    SchemaGraph,
)
from protosynth.common.walk import MessageWalker
from protosynth.domain_analyzer import LogCorpus, Record, order_key
from protosynth.schema_core import resolve_path

logger = logging.getLogger(__name__)

ANNOTATIONS_FORMAT = "annotations/v1"

Annotations = Mapping[str, Mapping[str, tuple[str, ...]]]
"""message → field → fields it depends on."""

# Stronger evidence first; used to break weight ties.
_PROVENANCE_RANK = {Provenance.SEMANTIC: 0, Provenance.ANNOTATION: 1, Provenance.CORRELATION: 2}

# ---------------------------------------------------------------------------
# Semantic edges
# ---------------------------------------------------------------------------

_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+")


def tokenize(name: str) -> frozenset[str]:
    """Lower-case tokens of an identifier split on underscores and case."""
    tokens = set()
    for part in re.split(r"[_\W]+", name):
        tokens.update(t.lower() for t in _CAMEL.findall(part))
    return frozenset(tokens)


def _is_id_of(target: frozenset[str], source: frozenset[str]) -> bool:
    return "id" not in source and target == source | {"id"}


def semantic_edges(message: str, schema: SchemaGraph) -> list[DependencyEdge]:
    """Name-token edges X → Y where Y's tokens are X's tokens plus ``id``.

    A message-typed X also matches through the tokens of its type's short
    name, so ``owner: User`` links to ``user_id``.
    """
    fields = schema.fields(message)
    edges = []
    for source in fields:
        candidates = [tokenize(source.name)]
        if source.is_message and source.type_name and not source.is_map:
            candidates.append(tokenize(source.type_name.rsplit(".", 1)[-1]))
        for target in fields:
            if target is source or not target.kind.is_scalar or target.is_repeated:
                continue
            target_tokens = tokenize(target.name)
            if any(_is_id_of(target_tokens, c) for c in candidates):
                edges.append(DependencyEdge(source.name, target.name, Provenance.SEMANTIC))
    return edges


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


def parse_annotations(
    doc: Any, schema: SchemaGraph, locator: str = "<annotations>"
) -> Annotations:
    """Validate an ``annotations/v1`` document against the schema.

    Raises:
        ConfigError: on a wrong format tag or unknown message or field.
    """
    if not isinstance(doc, Mapping) or doc.get("format") != ANNOTATIONS_FORMAT:
        raise ConfigError(f"not an {ANNOTATIONS_FORMAT} document", locator)
    unknown = set(doc) - {"format", "messages"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", locator)
    result: dict[str, dict[str, tuple[str, ...]]] = {}
    for message, fields in (doc.get("messages") or {}).items():
        if not isinstance(fields, Mapping):
            raise ConfigError("expected a field → depends-on mapping", f"{locator}:{message}")
        try:
            declared = {info.name for info in schema.fields(message)}
        except UnknownTypeError as exc:
            raise ConfigError(str(exc), locator) from exc
        entry: dict[str, tuple[str, ...]] = {}
        for name, depends in fields.items():
            sources = (depends,) if isinstance(depends, str) else tuple(depends)
            for field_name in (name, *sources):
                if field_name not in declared:
                    raise ConfigError(f"no field '{field_name}'", f"{locator}:{message}")
            entry[name] = sources
        result[message] = entry
    return result


def load_annotations(path: str | Path, schema: SchemaGraph) -> Annotations:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", str(path)) from exc
    except UnicodeDecodeError:
        raise ConfigError("not valid UTF-8", str(path)) from None
    return parse_annotations(doc, schema, str(path))


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def _owner_paths(schema: SchemaGraph, domain: DomainModel) -> dict[str, list[str]]:
    """Profile paths grouped by the message type that declares the field."""
    owners: dict[str, list[str]] = defaultdict(list)
    for path in domain.profiles:
        try:
            message, _ = resolve_path(schema, domain.root, path)
        except UnknownTypeError:
            continue
        owners[message].append(path)
    return owners


def _leaf(path: str) -> tuple[str, str]:
    """Split a path into (prefix, field name)."""
    prefix, _, name = path.rpartition(".")
    return prefix, name


def correlation_edges(
    message: str,
    schema: SchemaGraph,
    domain: DomainModel,
    *,
    owner_paths: Mapping[str, Sequence[str]] | None = None,
) -> list[DependencyEdge]:
    """Edges for strong associations between fields of ``message``.

    Symmetric measures point from the field declared first to the later
    one; a correlation ratio points from the categorical controller.
    Weight is |r|, the strongest value seen on any path to the message.
    """
    owners = owner_paths if owner_paths is not None else _owner_paths(schema, domain)
    order = {info.name: i for i, info in enumerate(schema.fields(message))}
    weights: dict[tuple[str, str], float] = {}
    for path in owners.get(message, ()):
        profile = domain.profiles[path]
        prefix, name = _leaf(path)
        if name not in order:
            continue
        for dep in profile.constraints.dependencies:
            other_prefix, other = _leaf(dep.path)
            if other_prefix != prefix or other not in order or other == name:
                continue
            if dep.provenance == "correlation-ratio" or order[other] < order[name]:
                pair = (other, name)
            else:
                pair = (name, other)
            weights[pair] = max(weights.get(pair, 0.0), abs(dep.r))
    ranked = sorted(weights.items(), key=lambda item: (order[item[0][0]], order[item[0][1]]))
    return [DependencyEdge(u, v, Provenance.CORRELATION, w) for (u, v), w in ranked]


def annotation_edges(message: str, annotations: Annotations | None) -> list[DependencyEdge]:
    edges = []
    for name, sources in ((annotations or {}).get(message) or {}).items():
        edges.extend(DependencyEdge(s, name, Provenance.ANNOTATION) for s in sources)
    return edges


def _dedupe(edges: Iterable[DependencyEdge]) -> tuple[DependencyEdge, ...]:
    best: dict[tuple[str, str], DependencyEdge] = {}
    for edge in edges:
        if edge.source == edge.target:
            continue
        key = (edge.source, edge.target)
        current = best.get(key)
        if current is None or (edge.weight, -_PROVENANCE_RANK[edge.provenance]) > (
            current.weight,
            -_PROVENANCE_RANK[current.provenance],
        ):
            best[key] = edge
    return tuple(best.values())


def build_dependency_graph(
    message: str,
    schema: SchemaGraph,
    domain: DomainModel | None = None,
    annotations: Annotations | None = None,
    *,
    owner_paths: Mapping[str, Sequence[str]] | None = None,
) -> DependencyGraph:
    """Collect semantic, correlation and annotation edges of one message.

    The result may be cyclic; ``break_cycles`` or ``topo_order`` resolve
    that.

    Raises:
        UnknownTypeError: if ``message`` is not in the schema.
    """
    nodes = tuple(info.name for info in schema.fields(message))
    edges = semantic_edges(message, schema)
    if domain is not None:
        edges += correlation_edges(message, schema, domain, owner_paths=owner_paths)
    edges += annotation_edges(message, annotations)
    return DependencyGraph(message, nodes, _dedupe(edges))


def build_dependency_graphs(
    schema: SchemaGraph,
    domain: DomainModel | None = None,
    annotations: Annotations | None = None,
) -> dict[str, DependencyGraph]:
    """Cycle-free dependency graphs of every message type."""
    owners = _owner_paths(schema, domain) if domain is not None else {}
    return {
        message: break_cycles(
            build_dependency_graph(message, schema, domain, annotations, owner_paths=owners)
        )
        for message in schema.messages
    }


# ---------------------------------------------------------------------------
# Ordering
# ---------------------------------------------------------------------------


def _digraph(graph: DependencyGraph) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(graph.nodes)
    for edge in graph.edges:
        g.add_edge(edge.source, edge.target, edge=edge)
    return g


def break_cycles(graph: DependencyGraph) -> DependencyGraph:
    """Drop the weakest edge of each remaining cycle until none is left.

    Ties go against correlation edges first, then the later-declared
    source.
    """
    g = _digraph(graph)
    order = {name: i for i, name in enumerate(graph.nodes)}
    removed = list(graph.removed)
    while True:
        try:
            cycle = nx.find_cycle(g)
        except nx.NetworkXNoCycle:
            break
        weakest: DependencyEdge = min(
            (g.edges[u, v]["edge"] for u, v in cycle),
            key=lambda e: (
                e.weight,
                -_PROVENANCE_RANK[e.provenance],
                -order.get(e.source, 0),
                -order.get(e.target, 0),
            ),
        )
        g.remove_edge(weakest.source, weakest.target)
        removed.append(weakest)
        logger.warning(
            "%s: dropped dependency %s -> %s (%s, weight %.3f) to break a cycle",
            graph.message,
            weakest.source,
            weakest.target,
            weakest.provenance.value,
            weakest.weight,
        )
    kept = tuple(e for e in graph.edges if e not in removed)
    return replace(graph, edges=kept, removed=tuple(removed))


def topo_order(graph: DependencyGraph, declaration_order: Sequence[str]) -> list[str]:
    """Generation order: dependencies first, ties by declaration order.

    Cycles are broken first, so this always succeeds.

    Raises:
        ValueError: if a graph node is missing from ``declaration_order``.
    """
    index = {name: i for i, name in enumerate(declaration_order)}
    missing = [n for n in graph.nodes if n not in index]
    if missing:
        raise ValueError(f"nodes not in declaration order: {missing}")
    g = _digraph(break_cycles(graph))
    g.add_nodes_from(declaration_order)
    return list(nx.lexicographical_topological_sort(g, key=index.__getitem__))


# ---------------------------------------------------------------------------
# Conditional distributions
# ---------------------------------------------------------------------------

CONTROLLING_KINDS = frozenset(
    {Kind.STRING, Kind.ENUM, Kind.BOOL} | {k for k in Kind if k.is_integer}
)


def _frequencies(counts: Counter[Scalar]) -> tuple[tuple[Scalar, int], ...]:
    return tuple(sorted(counts.items(), key=lambda item: (-item[1], order_key(item[0]))))


class _TableBuilder:
    """Accumulates co-occurrence counts for (controlling, dependent) pairs."""

    def __init__(self, pairs: Sequence[tuple[str, str]], max_cardinality: int):
        self.pairs = list(pairs)
        self.max_cardinality = max_cardinality
        self.by_prefix: dict[str, list[tuple[str, str, str, str]]] = defaultdict(list)
        for controlling, dependent in self.pairs:
            prefix, c = _leaf(controlling)
            dep_prefix, d = _leaf(dependent)
            if prefix != dep_prefix:
                raise ConfigError("conditional fields must share a message", dependent)
            self.by_prefix[prefix].append((controlling, dependent, c, d))
        self.rows: dict[tuple[str, str], dict[Scalar, Counter[Scalar]]] = defaultdict(dict)
        self.marginal: dict[tuple[str, str], Counter[Scalar]] = defaultdict(Counter)
        self.skipped: set[tuple[str, str]] = set()

    def field(
        self,
        path: str,
        info: FieldInfo,
        values: Sequence[Scalar],
        present: bool,
        size: int | None,
    ) -> None:
        pass

    def message(self, prefix: str, message: str, row: Mapping[str, Scalar]) -> None:
        for controlling, dependent, c, d in self.by_prefix.get(prefix, ()):
            if d not in row:
                continue
            key = (controlling, dependent)
            self.marginal[key][row[d]] += 1
            if c not in row or key in self.skipped:
                continue
            table = self.rows[key]
            if row[c] not in table:
                if len(table) >= self.max_cardinality:
                    self.skipped.add(key)
                    table.clear()
                    logger.warning(
                        "conditional %s -> %s skipped: more than %d controlling values",
                        controlling,
                        dependent,
                        self.max_cardinality,
                    )
                    continue
                table[row[c]] = Counter()
            table[row[c]][row[d]] += 1

    def result(self) -> dict[tuple[str, str], ConditionalDistribution]:
        tables = {}
        for key in self.pairs:
            rows = self.rows.get(key, {})
            tables[key] = ConditionalDistribution(
                controlling=key[0],
                dependent=key[1],
                rows={
                    value: _frequencies(rows[value])
                    for value in sorted(rows, key=order_key)
                },
                marginal=_frequencies(self.marginal.get(key, Counter())),
                skipped=key in self.skipped,
            )
        return tables


def _tables(
    corpus: LogCorpus | Iterable[Record],
    schema: SchemaGraph,
    root: str | None,
    pairs: Sequence[tuple[str, str]],
    max_cardinality: int,
) -> dict[tuple[str, str], ConditionalDistribution]:
    builder = _TableBuilder(pairs, max_cardinality)
    walker: MessageWalker | None = None
    for type_name, instance in corpus:
        if root is None:
            root = type_name
        if type_name != root:
            continue
        if walker is None:
            walker = MessageWalker(schema, root)
        walker.walk(instance, builder)
    return builder.result()


def conditional_table(
    corpus: LogCorpus | Iterable[Record],
    controlling: str,
    dependent: str,
    schema: SchemaGraph,
    *,
    root: str | None = None,
    max_cardinality: int = 10_000,
) -> ConditionalDistribution:
    """Frequencies of ``dependent`` values per ``controlling`` value.

    Both paths must name singular scalar fields of the same message
    occurrence. A controller with more than ``max_cardinality`` distinct
    values yields a table marked ``skipped`` whose rows are empty; the
    marginal is always filled.
    """
    return _tables(corpus, schema, root, [(controlling, dependent)], max_cardinality)[
        (controlling, dependent)
    ]


def _controls(controller: FieldInfo, dependent: FieldInfo) -> bool:
    return (
        controller.kind in CONTROLLING_KINDS
        and dependent.kind.is_scalar
        and not controller.is_repeated
        and not dependent.is_repeated
    )


def conditional_pairs(
    schema: SchemaGraph,
    graphs: Mapping[str, DependencyGraph],
    domain: DomainModel,
) -> list[tuple[str, str]]:
    """(controlling, dependent) paths of every retained non-semantic edge."""
    owners = _owner_paths(schema, domain)
    pairs: list[tuple[str, str]] = []
    for message, graph in graphs.items():
        if message in schema.map_entries:
            continue
        prefixes = sorted({_leaf(p)[0] for p in owners.get(message, ())})
        for edge in graph.edges:
            if edge.provenance is Provenance.SEMANTIC:
                continue
            controller = schema.field_info(message, edge.source)
            dependent = schema.field_info(message, edge.target)
            if not _controls(controller, dependent):
                continue
            for prefix in prefixes:
                c = f"{prefix}.{edge.source}" if prefix else edge.source
                d = f"{prefix}.{edge.target}" if prefix else edge.target
                if c in domain.profiles and d in domain.profiles:
                    pairs.append((c, d))
    return pairs


def build_conditional_tables(
    corpus: LogCorpus | Iterable[Record],
    schema: SchemaGraph,
    graphs: Mapping[str, DependencyGraph],
    domain: DomainModel,
    *,
    max_cardinality: int = 10_000,
) -> dict[tuple[str, str], ConditionalDistribution]:
    """Every conditional table the graphs call for, in one corpus pass."""
    pairs = conditional_pairs(schema, graphs, domain)
    if not pairs:
        return {}
    tables = _tables(corpus, schema, domain.root, pairs, max_cardinality)
    logger.info("built %d conditional tables", len(tables))
    return tables


def attach_conditionals(
    corpus: LogCorpus | Iterable[Record],
    schema: SchemaGraph,
    domain: DomainModel,
    annotations: Annotations | None = None,
    config: AnalysisConfig | None = None,
) -> DomainModel:
    """Return ``domain`` with the conditional tables its dependencies imply."""
    config = config or AnalysisConfig()
    graphs = build_dependency_graphs(schema, domain, annotations)
    tables = build_conditional_tables(
        corpus, schema, graphs, domain, max_cardinality=config.max_controlling_cardinality
    )
    return domain.with_conditionals(tables)
