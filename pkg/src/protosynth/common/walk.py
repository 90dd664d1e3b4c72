"""Turn message instances into field-path observations.

A walker visits every field of an instance tree and reports, per field
path, whether the field was present and which scalar values it held. It
also reports one row per visited message (singular scalars by field name,
including implicit-presence defaults), which is what intra-message
statistics work on.

Values are normalized: enums by declared name, bytes as base64 text.
"""

from __future__ import annotations

import base64
from collections import defaultdict
from collections.abc import Mapping, Sequence
from typing import Any, Protocol

from protosynth.common.types import FieldInfo, Kind, Scalar, SchemaGraph

_DEFAULTS: dict[Kind, Any] = {
    Kind.BOOL: False,
    Kind.STRING: "",
    Kind.BYTES: b"",
    Kind.ENUM: 0,
}


def default_value(kind: Kind) -> Any:
    """Implicit proto3 default of a scalar kind."""
    if kind.is_float:
        return 0.0
    return _DEFAULTS.get(kind, 0)


def normalize(schema: SchemaGraph, info: FieldInfo, value: Any) -> Scalar:
    """Convert a raw protobuf value to its normalized scalar form.

    Undeclared enum numbers stay integers so they remain detectable.
    """
    match info.kind:
        case Kind.ENUM:
            assert info.type_name is not None
            name = schema.enum_name(info.type_name, int(value))
            return name if name is not None else int(value)
        case Kind.BYTES:
            return base64.b64encode(bytes(value)).decode("ascii")
        case Kind.DOUBLE | Kind.FLOAT:
            return float(value)
        case Kind.BOOL:
            return bool(value)
        case Kind.STRING:
            return str(value)
        case _:
            return int(value)


def denormalize(schema: SchemaGraph, info: FieldInfo, value: Scalar) -> Any:
    """Convert a normalized scalar back to the value protobuf accepts."""
    match info.kind:
        case Kind.ENUM:
            if isinstance(value, str):
                assert info.type_name is not None
                number = schema.enum_number(info.type_name, value)
                return number if number is not None else 0
            return int(value)
        case Kind.BYTES:
            return base64.b64decode(str(value))
        case Kind.DOUBLE | Kind.FLOAT:
            return float(value)
        case Kind.BOOL:
            return bool(value)
        case Kind.STRING:
            return str(value)
        case _:
            return int(value)


def join(prefix: str, segment: str) -> str:
    return f"{prefix}.{segment}" if prefix else segment


class Visitor(Protocol):
    """Receives walker observations.

    ``size`` is the element count for repeated and map fields and for map
    key/value paths, and None for singular fields.
    """

    def field(
        self,
        path: str,
        info: FieldInfo,
        values: Sequence[Scalar],
        present: bool,
        size: int | None,
    ) -> None: ...

    def message(self, prefix: str, message: str, row: Mapping[str, Scalar]) -> None: ...


class MessageWalker:
    """Walk instances of ``root`` and report observations to a visitor.

    Args:
        schema: Schema the instances conform to.
        root: Fully-qualified type of the instances.
        paths: When given, only these path texts (and their subtrees) are
            visited.
        include_defaults: Report singular scalars without presence as
            present with their default value whenever the containing
            message is present.
    """

    def __init__(
        self,
        schema: SchemaGraph,
        root: str,
        *,
        paths: frozenset[str] | None = None,
        include_defaults: bool = False,
    ):
        schema.fields(root)
        self.schema = schema
        self.root = root
        self.paths = paths
        self.include_defaults = include_defaults

    def walk(self, instance: Any, visitor: Visitor) -> None:
        self._visit(instance, self.root, "", visitor)

    def _wanted(self, path: str) -> bool:
        return self.paths is None or path in self.paths

    def _visit(self, instance: Any, message: str, prefix: str, visitor: Visitor) -> None:
        row: dict[str, Scalar] = {}
        for info in self.schema.fields(message):
            if info.is_map:
                self._visit_map(instance, info, prefix, visitor)
            elif info.is_repeated:
                self._visit_repeated(instance, info, prefix, visitor)
            else:
                self._visit_singular(instance, info, prefix, visitor, row)
        visitor.message(prefix, message, row)

    def _visit_singular(
        self,
        instance: Any,
        info: FieldInfo,
        prefix: str,
        visitor: Visitor,
        row: dict[str, Scalar],
    ) -> None:
        path = join(prefix, info.name)
        if not self._wanted(path):
            return
        if info.is_message:
            present = instance.HasField(info.name)
            visitor.field(path, info, (), present, None)
            if present:
                assert info.type_name is not None
                self._visit(getattr(instance, info.name), info.type_name, path, visitor)
            return
        raw = getattr(instance, info.name)
        if info.has_presence:
            present = instance.HasField(info.name)
        else:
            present = self.include_defaults or raw != default_value(info.kind)
        if present:
            value = normalize(self.schema, info, raw)
            row[info.name] = value
            visitor.field(path, info, (value,), True, None)
        else:
            # implicit presence: the default is still the value readers see
            if not info.has_presence:
                row[info.name] = normalize(self.schema, info, raw)
            visitor.field(path, info, (), False, None)

    def _visit_repeated(
        self, instance: Any, info: FieldInfo, prefix: str, visitor: Visitor
    ) -> None:
        path = join(prefix, f"{info.name}[]")
        if not self._wanted(path):
            return
        items = getattr(instance, info.name)
        if info.is_message:
            visitor.field(path, info, (), len(items) > 0, len(items))
            assert info.type_name is not None
            for item in items:
                self._visit(item, info.type_name, path, visitor)
            return
        values = [normalize(self.schema, info, v) for v in items]
        visitor.field(path, info, values, len(values) > 0, len(values))

    def _visit_map(self, instance: Any, info: FieldInfo, prefix: str, visitor: Visitor) -> None:
        path = join(prefix, info.name)
        if not self._wanted(path):
            return
        entries = getattr(instance, info.name)
        visitor.field(path, info, (), len(entries) > 0, len(entries))
        assert info.type_name is not None
        key_info = self.schema.field_info(info.type_name, "key")
        value_info = self.schema.field_info(info.type_name, "value")
        key_path = join(prefix, f"{info.name}{{}}key")
        value_path = join(prefix, f"{info.name}{{}}value")
        keys = sorted(entries.keys())
        if self._wanted(key_path):
            visitor.field(
                key_path,
                key_info,
                [normalize(self.schema, key_info, k) for k in keys],
                len(keys) > 0,
                len(keys),
            )
        if not self._wanted(value_path):
            return
        if value_info.is_message:
            visitor.field(value_path, value_info, (), len(keys) > 0, len(keys))
            assert value_info.type_name is not None
            for key in keys:
                self._visit(entries[key], value_info.type_name, value_path, visitor)
        else:
            visitor.field(
                value_path,
                value_info,
                [normalize(self.schema, value_info, entries[k]) for k in keys],
                len(keys) > 0,
                len(keys),
            )


class _ValueCollector:
    def __init__(self) -> None:
        self.values: dict[str, list[Scalar]] = defaultdict(list)

    def field(
        self,
        path: str,
        info: FieldInfo,
        values: Sequence[Scalar],
        present: bool,
        size: int | None,
    ) -> None:
        if info.kind.is_scalar:
            self.values[path].extend(values)

    def message(self, prefix: str, message: str, row: Mapping[str, Scalar]) -> None:
        pass


def collect_values(
    schema: SchemaGraph,
    root: str,
    instance: Any,
    *,
    include_defaults: bool = False,
) -> dict[str, list[Scalar]]:
    """Scalar values of one instance grouped by field path."""
    collector = _ValueCollector()
    MessageWalker(schema, root, include_defaults=include_defaults).walk(instance, collector)
    return dict(collector.values)
