"""Schema loading, field paths and the generator registry.

A compiled FileDescriptorSet becomes a SchemaGraph: messages with their
fields, enums, the message reference graph and its cyclic groups. The
graph also owns a DescriptorPool so instances can be built and parsed
without generated code.
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable, Iterator
from typing import Any

import networkx as nx
from google.protobuf import descriptor_pb2, descriptor_pool
from google.protobuf.internal.decoder import _DecodeVarint
from google.protobuf.message import DecodeError

from protosynth.common.errors import (
    DescriptorParseError,
    ResolutionError,
    SchemaError,
    UnknownTypeError,
)
from protosynth.common.types import (
    Cardinality,
    DomainModel,
    FieldInfo,
    FieldPath,
    FieldProfile,
    GeneratorRegistry,
    GeneratorSpec,
    Kind,
    PatternId,
    SchemaGraph,
    Strategy,
)

logger = logging.getLogger(__name__)

_FDP = descriptor_pb2.FieldDescriptorProto

KINDS: dict[int, Kind] = {
    _FDP.TYPE_DOUBLE: Kind.DOUBLE,
    _FDP.TYPE_FLOAT: Kind.FLOAT,
    _FDP.TYPE_INT64: Kind.INT64,
    _FDP.TYPE_UINT64: Kind.UINT64,
    _FDP.TYPE_INT32: Kind.INT32,
    _FDP.TYPE_FIXED64: Kind.FIXED64,
    _FDP.TYPE_FIXED32: Kind.FIXED32,
    _FDP.TYPE_BOOL: Kind.BOOL,
    _FDP.TYPE_STRING: Kind.STRING,
    _FDP.TYPE_GROUP: Kind.MESSAGE,
    _FDP.TYPE_MESSAGE: Kind.MESSAGE,
    _FDP.TYPE_BYTES: Kind.BYTES,
    _FDP.TYPE_UINT32: Kind.UINT32,
    _FDP.TYPE_ENUM: Kind.ENUM,
    _FDP.TYPE_SFIXED32: Kind.SFIXED32,
    _FDP.TYPE_SFIXED64: Kind.SFIXED64,
    _FDP.TYPE_SINT32: Kind.SINT32,
    _FDP.TYPE_SINT64: Kind.SINT64,
}

MIN_EMPIRICAL_SAMPLES = 10
"""Numeric profiles with fewer observations use the range strategy."""

# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _failure_offset(data: bytes) -> int:
    """Byte offset of the first top-level element that fails to decode."""
    offset = 0
    while offset < len(data):
        start = offset
        try:
            tag, offset = _DecodeVarint(data, offset)
            wire_type = tag & 0x7
            if wire_type == 0:
                _, offset = _DecodeVarint(data, offset)
            elif wire_type == 1:
                offset += 8
            elif wire_type == 5:
                offset += 4
            elif wire_type == 2:
                length, offset = _DecodeVarint(data, offset)
                chunk = data[offset : offset + length]
                offset += length
                if len(chunk) != length:
                    return start
                if tag >> 3 == 1:
                    descriptor_pb2.FileDescriptorProto.FromString(chunk)
            else:
                return start
        except (DecodeError, IndexError, ValueError):
            return start
        if offset > len(data):
            return start
    return 0


def _qualify(scope: str, name: str) -> str:
    return f"{scope}.{name}" if scope else name


def _json_name(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(part[:1].upper() + part[1:] for part in rest)


def _collect(
    scope: str,
    messages: Iterable[descriptor_pb2.DescriptorProto],
    enums: Iterable[descriptor_pb2.EnumDescriptorProto],
    syntax: str,
    message_out: dict[str, tuple[descriptor_pb2.DescriptorProto, str]],
    enum_out: dict[str, tuple[tuple[str, int], ...]],
) -> None:
    for enum in enums:
        enum_out[_qualify(scope, enum.name)] = tuple((v.name, v.number) for v in enum.value)
    for message in messages:
        full = _qualify(scope, message.name)
        message_out[full] = (message, syntax)
        _collect(full, message.nested_type, message.enum_type, syntax, message_out, enum_out)


def _field_info(
    owner: str,
    proto: descriptor_pb2.DescriptorProto,
    fdp: descriptor_pb2.FieldDescriptorProto,
    syntax: str,
    map_entries: frozenset[str],
) -> FieldInfo:
    kind = KINDS.get(fdp.type)
    if kind is None:
        raise SchemaError(f"unsupported field type {fdp.type}", f"{owner}.{fdp.name}")
    type_name = fdp.type_name.lstrip(".") if kind in (Kind.ENUM, Kind.MESSAGE) else None
    proto2 = syntax in ("", "proto2")
    if fdp.label == _FDP.LABEL_REPEATED:
        cardinality = Cardinality.REPEATED
    elif fdp.proto3_optional or (proto2 and fdp.label == _FDP.LABEL_OPTIONAL):
        cardinality = Cardinality.OPTIONAL
    else:
        cardinality = Cardinality.SINGULAR
    oneof = None
    if fdp.HasField("oneof_index") and not fdp.proto3_optional:
        oneof = proto.oneof_decl[fdp.oneof_index].name
    repeated = cardinality is Cardinality.REPEATED
    has_presence = not repeated and (
        kind is Kind.MESSAGE or oneof is not None or fdp.proto3_optional or proto2
    )
    return FieldInfo(
        name=fdp.name,
        number=fdp.number,
        kind=kind,
        cardinality=cardinality,
        type_name=type_name,
        oneof=oneof,
        is_map=repeated and type_name in map_entries,
        json_name=fdp.json_name or _json_name(fdp.name),
        has_presence=has_presence,
    )


def _file_order(files: list[descriptor_pb2.FileDescriptorProto]) -> list[int]:
    """Indices of ``files`` with every dependency before its dependents."""
    index = {f.name: i for i, f in enumerate(files)}
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(files)))
    for i, f in enumerate(files):
        for dep in f.dependency:
            if dep in index:
                graph.add_edge(index[dep], i)
    try:
        return list(nx.lexicographical_topological_sort(graph))
    except nx.NetworkXUnfeasible:
        raise SchemaError("descriptor set has circular file imports") from None


def _build_pool(files: list[descriptor_pb2.FileDescriptorProto]) -> Any:
    pool = descriptor_pool.DescriptorPool()
    for i in _file_order(files):
        try:
            pool.AddSerializedFile(files[i].SerializeToString())
        except (TypeError, KeyError, ValueError) as exc:
            raise ResolutionError(f"cannot build descriptor pool: {exc}", files[i].name) from exc
    return pool


def cyclic_components(
    nodes: Iterable[str], edges: Iterable[tuple[str, str]]
) -> frozenset[frozenset[str]]:
    """Strongly connected components that contain a cycle.

    A component qualifies when it has more than one member or a self-loop.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(edges)
    groups = set()
    for component in nx.strongly_connected_components(graph):
        member = next(iter(component))
        if len(component) > 1 or graph.has_edge(member, member):
            groups.add(frozenset(component))
    return frozenset(groups)


def load_descriptor_set(data: bytes) -> SchemaGraph:
    """Parse a serialized FileDescriptorSet into a SchemaGraph.

    Args:
        data: Bytes as written by ``protoc --descriptor_set_out``.

    Returns:
        The resolved schema graph.

    Raises:
        DescriptorParseError: if the bytes are not a FileDescriptorSet.
        ResolutionError: if a field references a type absent from the set.
        SchemaError: on duplicate field numbers or unsupported constructs.
    """
    try:
        fds = descriptor_pb2.FileDescriptorSet.FromString(data)
    except DecodeError as exc:
        raise DescriptorParseError("malformed FileDescriptorSet", _failure_offset(data)) from exc

    protos: dict[str, tuple[descriptor_pb2.DescriptorProto, str]] = {}
    enums: dict[str, tuple[tuple[str, int], ...]] = {}
    for f in fds.file:
        _collect(f.package, f.message_type, f.enum_type, f.syntax, protos, enums)
    map_entries = frozenset(
        name for name, (proto, _) in protos.items() if proto.options.map_entry
    )

    messages: dict[str, tuple[FieldInfo, ...]] = {}
    edges: set[tuple[str, str]] = set()
    for name, (proto, syntax) in protos.items():
        infos = tuple(_field_info(name, proto, fdp, syntax, map_entries) for fdp in proto.field)
        seen: set[int] = set()
        for info in infos:
            if info.number in seen:
                raise SchemaError(f"duplicate field number {info.number}", name)
            seen.add(info.number)
            if info.type_name is None:
                continue
            known = protos if info.kind is Kind.MESSAGE else enums
            if info.type_name not in known:
                raise ResolutionError(
                    f"unresolved type reference '{info.type_name}'", f"{name}.{info.name}"
                )
            if info.kind is Kind.MESSAGE:
                edges.add((name, info.type_name))
        messages[name] = infos

    schema = SchemaGraph(
        messages=messages,
        enums=enums,
        edges=frozenset(edges),
        cyclic_groups=cyclic_components(messages, edges),
        map_entries=map_entries,
        source=data,
        pool=_build_pool(list(fds.file)),
    )
    logger.info(
        "loaded schema: %d messages, %d enums, %d cyclic groups",
        len(messages),
        len(enums),
        len(schema.cyclic_groups),
    )
    return schema


def fingerprint(schema: SchemaGraph) -> str:
    """Stable identifier of the descriptor bytes a schema came from."""
    return hashlib.sha256(schema.source).hexdigest()


# ---------------------------------------------------------------------------
# Field paths
# ---------------------------------------------------------------------------


def _expand(
    schema: SchemaGraph,
    message: str,
    prefix: FieldPath,
    branch: frozenset[str],
    max_depth: int,
) -> Iterator[FieldPath]:
    for info in schema.fields(message):
        if info.is_map:
            path = prefix.child(info.name)
            if len(path) > max_depth:
                continue
            yield path
            assert info.type_name is not None
            value = schema.field_info(info.type_name, "value")
            yield prefix.child(info.name, "{}key")
            value_path = prefix.child(info.name, "{}value")
            yield value_path
            if value.is_message:
                assert value.type_name is not None
                yield from _descend(schema, value.type_name, value_path, branch, max_depth)
            continue
        path = prefix.child(info.name, "[]" if info.is_repeated else "")
        if len(path) > max_depth:
            continue
        yield path
        if info.is_message:
            assert info.type_name is not None
            yield from _descend(schema, info.type_name, path, branch, max_depth)


def _descend(
    schema: SchemaGraph,
    message: str,
    path: FieldPath,
    branch: frozenset[str],
    max_depth: int,
) -> Iterator[FieldPath]:
    if message in branch:
        return
    yield from _expand(schema, message, path, branch | {message}, max_depth)


def field_paths(schema: SchemaGraph, root: str, max_depth: int = 16) -> list[FieldPath]:
    """Depth-first enumeration of field paths reachable from ``root``.

    Paths longer than ``max_depth`` segments are dropped. A message-typed
    field whose type is already on the current branch is emitted but not
    expanded again.

    Raises:
        UnknownTypeError: if ``root`` is not a message of the schema.
    """
    schema.fields(root)
    return list(_expand(schema, root, FieldPath(()), frozenset({root}), max_depth))


def resolve_path(schema: SchemaGraph, root: str, path: str | FieldPath) -> tuple[str, FieldInfo]:
    """Resolve a path to (containing message, field).

    Map ``{}key``/``{}value`` segments resolve to the map entry's fields.

    Raises:
        UnknownTypeError: if any segment does not exist or its marker does
            not match the field's cardinality.
    """
    parsed = FieldPath.parse(path) if isinstance(path, str) else path
    text = parsed.text
    schema.fields(root)
    if not parsed.segments or not parsed.segments[0].name:
        raise UnknownTypeError("empty field path", root)
    owner = root
    info: FieldInfo | None = None
    descendable = True
    for segment in parsed.segments:
        if info is not None:
            if not descendable or not info.is_message:
                raise UnknownTypeError(f"'{info.name}' has no sub-fields", text)
            assert info.type_name is not None
            owner = info.type_name
        try:
            info = schema.field_info(owner, segment.name)
        except UnknownTypeError:
            raise UnknownTypeError(f"no field '{segment.name}' in {owner}", text) from None
        descendable = True
        if segment.marker in ("{}key", "{}value"):
            if not info.is_map:
                raise UnknownTypeError(f"'{segment.name}' is not a map field", text)
            assert info.type_name is not None
            owner = info.type_name
            info = schema.field_info(owner, segment.marker[2:])
        elif segment.marker == "[]":
            if not info.is_repeated or info.is_map:
                raise UnknownTypeError(f"'{segment.name}' is not a repeated field", text)
        elif info.is_map:
            descendable = False
        elif info.is_repeated:
            raise UnknownTypeError(f"repeated field '{segment.name}' needs '[]'", text)
    assert info is not None
    return owner, info


def schema_report(schema: SchemaGraph) -> dict[str, Any]:
    """Diagnostic summary: counts, deepest nesting chain, cyclic groups.

    Nesting depth is the longest chain of message references once every
    cyclic group is collapsed to a single node.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(schema.messages)
    graph.add_edges_from(schema.edges)
    condensed = nx.condensation(graph)
    depth = nx.dag_longest_path_length(condensed) if len(condensed) else 0
    return {
        "messages": len(schema.messages),
        "enums": len(schema.enums),
        "fields": sum(len(f) for f in schema.messages.values()),
        "max_nesting_depth": int(depth),
        "cyclic_groups": sorted(sorted(group) for group in schema.cyclic_groups),
    }


# ---------------------------------------------------------------------------
# Generator registry
# ---------------------------------------------------------------------------


def _choose(info: FieldInfo, profile: FieldProfile | None) -> tuple[Strategy, PatternId | None]:
    if profile is None:
        return Strategy.DEFAULT, None
    if info.kind is Kind.ENUM:
        return Strategy.ENUM_WEIGHTED, None
    if info.kind is Kind.STRING and profile.pattern is not None:
        if profile.pattern.pattern_id is not PatternId.GENERIC:
            return Strategy.PATTERN, profile.pattern.pattern_id
    if info.kind.is_numeric and profile.stats.present_count < MIN_EMPIRICAL_SAMPLES:
        return Strategy.RANGE, None
    return Strategy.EMPIRICAL, None


def _profiled_fields(
    schema: SchemaGraph, domain: DomainModel
) -> dict[tuple[str, str], list[str]]:
    owners: dict[tuple[str, str], list[str]] = {}
    for path in domain.profiles:
        try:
            message, info = resolve_path(schema, domain.root, path)
        except UnknownTypeError:
            logger.warning("profile path %s does not resolve; ignored", path)
            continue
        owners.setdefault((message, info.name), []).append(path)
    return owners


def enhance(schema: SchemaGraph, domain: DomainModel | None = None) -> GeneratorRegistry:
    """Build the total field-generator registry.

    Every field of every message gets exactly one entry. Fields with a
    domain profile get a data-driven strategy, chosen separately for each
    profiled path; all others get the default generator for their kind.
    """
    owners = _profiled_fields(schema, domain) if domain is not None else {}
    entries: dict[tuple[str, str], GeneratorSpec] = {}
    for message, infos in schema.messages.items():
        for info in infos:
            paths = tuple(owners.get((message, info.name), ()))
            chosen = [
                _choose(info, domain.profile(path)) for path in paths if domain is not None
            ]
            strategy, pattern = chosen[0] if chosen else (Strategy.DEFAULT, None)
            entries[(message, info.name)] = GeneratorSpec(
                strategy=strategy,
                kind=info.kind,
                profile_paths=paths,
                pattern=pattern,
                type_name=info.type_name,
                path_strategies=tuple((p, c[0]) for p, c in zip(paths, chosen, strict=True)),
            )
            logger.debug("%s.%s -> %s", message, info.name, strategy.value)
    return GeneratorRegistry(entries)
