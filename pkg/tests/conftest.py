"""Shared pytest fixtures: in-memory descriptor sets, schemas and corpora."""

import uuid

import numpy as np
import pytest
from google.protobuf import descriptor_pb2

from protosynth.schema_core import load_descriptor_set

_F = descriptor_pb2.FieldDescriptorProto

_TYPES = {
    "double": _F.TYPE_DOUBLE,
    "float": _F.TYPE_FLOAT,
    "int32": _F.TYPE_INT32,
    "int64": _F.TYPE_INT64,
    "uint32": _F.TYPE_UINT32,
    "uint64": _F.TYPE_UINT64,
    "bool": _F.TYPE_BOOL,
    "string": _F.TYPE_STRING,
    "bytes": _F.TYPE_BYTES,
    "enum": _F.TYPE_ENUM,
    "message": _F.TYPE_MESSAGE,
}

# ---------------------------------------------------------------------------
# Descriptor builders
# ---------------------------------------------------------------------------


def field(name, number, kind, type_name=None, *, repeated=False, oneof=None, optional=False):
    """One field; ``type_name`` is fully qualified without the leading dot."""
    fdp = _F(name=name, number=number, type=_TYPES[kind])
    fdp.label = _F.LABEL_REPEATED if repeated else _F.LABEL_OPTIONAL
    if type_name is not None:
        fdp.type_name = f".{type_name}"
    if oneof is not None:
        fdp.oneof_index = oneof
    if optional:
        fdp.proto3_optional = True
    return fdp


def message(name, *fields, oneofs=(), nested=()):
    """A message; proto3 ``optional`` fields get their synthetic oneofs."""
    proto = descriptor_pb2.DescriptorProto(name=name)
    proto.field.extend(fields)
    proto.nested_type.extend(nested)
    for oneof in oneofs:
        proto.oneof_decl.add(name=oneof)
    for fdp in proto.field:
        if fdp.proto3_optional:
            fdp.oneof_index = len(proto.oneof_decl)
            proto.oneof_decl.add(name=f"_{fdp.name}")
    return proto


def map_entry(name, key_kind, value_kind, value_type=None):
    entry = message(
        name,
        field("key", 1, key_kind),
        field("value", 2, value_kind, value_type),
    )
    entry.options.map_entry = True
    return entry


def enum(name, *values):
    proto = descriptor_pb2.EnumDescriptorProto(name=name)
    for number, value in enumerate(values):
        proto.value.add(name=value, number=number)
    return proto


def descriptor_set(*messages, enums=(), package="demo", syntax="proto3"):
    """Serialized FileDescriptorSet holding one file."""
    fds = descriptor_pb2.FileDescriptorSet()
    f = fds.file.add(name=f"{package}.proto", package=package, syntax=syntax)
    f.message_type.extend(messages)
    f.enum_type.extend(enums)
    return fds.SerializeToString()


@pytest.fixture
def build_schema():
    """Build a SchemaGraph from message and enum protos."""

    def build(*messages, enums=(), package="demo", syntax="proto3"):
        return load_descriptor_set(
            descriptor_set(*messages, enums=enums, package=package, syntax=syntax)
        )

    return build


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------


@pytest.fixture
def ping_bytes():
    return descriptor_set(message("Ping", field("seq", 1, "int32")))


@pytest.fixture
def ping_schema(ping_bytes):
    """``Ping{int32 seq = 1;}``."""
    return load_descriptor_set(ping_bytes)


@pytest.fixture
def node_schema():
    """``Node{Node next = 1; int32 v = 2;}``: a self-referencing type."""
    return load_descriptor_set(
        descriptor_set(
            message("Node", field("next", 1, "message", "demo.Node"), field("v", 2, "int32"))
        )
    )


@pytest.fixture
def ring_schema():
    """A -> B -> C -> A."""
    return load_descriptor_set(
        descriptor_set(
            message("A", field("b", 1, "message", "demo.B"), field("x", 2, "int32")),
            message("B", field("c", 1, "message", "demo.C")),
            message("C", field("a", 1, "message", "demo.A")),
        )
    )


@pytest.fixture
def order_bytes():
    return descriptor_set(
        message(
            "Order",
            field("order_id", 1, "string"),
            field("customer_id", 2, "string"),
            field("customer", 3, "message", "demo.Customer"),
            field("items", 4, "message", "demo.Item", repeated=True),
            field("total", 5, "double"),
        ),
        message("Customer", field("id", 1, "string"), field("name", 2, "string")),
        message(
            "Item",
            field("sku", 1, "string"),
            field("qty", 2, "int32"),
            field("price", 3, "double"),
        ),
    )


@pytest.fixture
def order_schema(order_bytes):
    """Order with a Customer and repeated Items."""
    return load_descriptor_set(order_bytes)


@pytest.fixture
def account_bytes():
    return descriptor_set(
        message(
            "Account",
            field("account_id", 1, "string"),
            field("user_type", 2, "enum", "demo.UserType"),
            field("credit_limit", 3, "int64"),
            field("seq", 4, "int32"),
            field("email", 5, "string"),
        ),
        enums=[enum("UserType", "USER_TYPE_UNSPECIFIED", "BASIC", "PREMIUM")],
    )


@pytest.fixture
def account_schema(account_bytes):
    """Account whose credit limit depends on the user type."""
    return load_descriptor_set(account_bytes)


@pytest.fixture
def profile_schema():
    """Map, oneof, proto3 optional and bytes fields."""
    return load_descriptor_set(
        descriptor_set(
            message(
                "Profile",
                field("scores", 1, "message", "demo.Profile.ScoresEntry", repeated=True),
                field("phone", 2, "string", oneof=0),
                field("mail", 3, "string", oneof=0),
                field("nickname", 4, "string", optional=True),
                field("avatar", 5, "bytes"),
                oneofs=["contact"],
                nested=[map_entry("ScoresEntry", "string", "int32")],
            )
        )
    )


@pytest.fixture
def deep_schema():
    """31 message types, 12 nesting levels and two cyclic groups.

    Level0 -> ... -> Level11, each holding a Leaf; Level3 holds a
    self-recursive Tree, Level6 holds the Left <-> Right pair.
    """
    levels = []
    for i in range(12):
        fields = [field("name", 1, "string"), field("value", 2, "int32")]
        if i < 11:
            fields.append(field("next", 3, "message", f"demo.Level{i + 1}"))
        fields.append(field("leaf", 4, "message", f"demo.Leaf{i}"))
        if i < 4:
            fields.append(field("spare", 5, "message", f"demo.Leaf{12 + i}", repeated=True))
        if i == 3:
            fields.append(field("tree", 6, "message", "demo.Tree"))
        if i == 6:
            fields.append(field("left", 6, "message", "demo.Left"))
        levels.append(message(f"Level{i}", *fields))
    leaves = [
        message(f"Leaf{j}", field("code", 1, "int32"), field("flag", 2, "bool"))
        for j in range(16)
    ]
    return load_descriptor_set(
        descriptor_set(
            *levels,
            *leaves,
            message("Tree", field("child", 1, "message", "demo.Tree"), field("weight", 2, "int32")),
            message("Left", field("right", 1, "message", "demo.Right"), field("tag", 2, "string")),
            message("Right", field("left", 1, "message", "demo.Left"), field("score", 2, "double")),
        )
    )


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


def account_records(schema, n, seed=0):
    """(type, instance) records: 70% BASIC with limits 100-900, 30% PREMIUM
    with limits 5000-20000, seq uniform over 1..500."""
    rng = np.random.default_rng(seed)
    cls = schema.message_class("demo.Account")
    records = []
    for _ in range(n):
        premium = rng.random() < 0.3
        account = cls(
            account_id=str(uuid.UUID(bytes=rng.bytes(16), version=4)),
            user_type=2 if premium else 1,
            credit_limit=int(rng.integers(5000, 20001) if premium else rng.integers(100, 901)),
            seq=int(rng.integers(1, 501)),
            email=f"u{int(rng.integers(10000, 100000))}@example.com",
        )
        records.append(("demo.Account", account))
    return records


@pytest.fixture
def accounts(account_schema):
    """2,000 Account records."""
    return account_records(account_schema, 2000)


@pytest.fixture
def ping_records(ping_schema):
    """Ten Ping records with seq 1..5 twice."""
    cls = ping_schema.message_class("demo.Ping")
    return [("demo.Ping", cls(seq=s)) for s in (1, 2, 3, 4, 5) * 2]
