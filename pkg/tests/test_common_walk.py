"""Tests for value normalization and the message walker."""

from protosynth.common.types import FieldInfo, Kind
from protosynth.common.walk import (
    MessageWalker,
    collect_values,
    default_value,
    denormalize,
    normalize,
)


class _Recorder:
    def __init__(self):
        self.fields = []
        self.rows = []

    def field(self, path, info, values, present, size):
        self.fields.append((path, list(values), present, size))

    def message(self, prefix, message, row):
        self.rows.append((prefix, message, dict(row)))


class TestNormalize:
    """Enums by name, bytes as base64 text."""

    def test_enum_by_name(self, account_schema):
        info = account_schema.field_info("demo.Account", "user_type")
        assert normalize(account_schema, info, 2) == "PREMIUM"

    def test_undeclared_enum_stays_numeric(self, account_schema):
        info = account_schema.field_info("demo.Account", "user_type")
        assert normalize(account_schema, info, 9) == 9

    def test_bytes_base64(self, profile_schema):
        info = profile_schema.field_info("demo.Profile", "avatar")
        assert normalize(profile_schema, info, b"\x00\xff") == "AP8="
        assert denormalize(profile_schema, info, "AP8=") == b"\x00\xff"

    def test_enum_name_back_to_number(self, account_schema):
        info = account_schema.field_info("demo.Account", "user_type")
        assert denormalize(account_schema, info, "BASIC") == 1

    def test_defaults(self):
        assert default_value(Kind.STRING) == ""
        assert default_value(Kind.DOUBLE) == 0.0
        assert default_value(Kind.INT64) == 0
        assert default_value(Kind.BOOL) is False

    def test_integer_kinds_are_ints(self, ping_schema):
        info = FieldInfo("seq", 1, Kind.INT32)
        assert normalize(ping_schema, info, 7.0) == 7


class TestWalker:
    """Per-path observations of one instance tree."""

    def test_repeated_messages(self, order_schema):
        cls = order_schema.message_class("demo.Order")
        order = cls(order_id="o1")
        order.items.add(sku="a", qty=2)
        order.items.add(sku="b", qty=0)
        values = collect_values(order_schema, "demo.Order", order)
        assert values["items[].sku"] == ["a", "b"]
        assert values["items[].qty"] == [2]
        assert values["order_id"] == ["o1"]

    def test_include_defaults(self, order_schema):
        order = order_schema.message_class("demo.Order")(order_id="o1")
        values = collect_values(order_schema, "demo.Order", order, include_defaults=True)
        assert values["total"] == [0.0]
        assert values["customer_id"] == [""]

    def test_absent_message_not_descended(self, order_schema):
        order = order_schema.message_class("demo.Order")()
        recorder = _Recorder()
        MessageWalker(order_schema, "demo.Order").walk(order, recorder)
        paths = [path for path, *_ in recorder.fields]
        assert "customer" in paths
        assert "customer.id" not in paths

    def test_map_keys_sorted(self, profile_schema):
        profile = profile_schema.message_class("demo.Profile")()
        profile.scores["b"] = 2
        profile.scores["a"] = 1
        values = collect_values(profile_schema, "demo.Profile", profile)
        assert values["scores{}key"] == ["a", "b"]
        assert values["scores{}value"] == [1, 2]

    def test_row_holds_implicit_defaults(self, account_schema):
        account = account_schema.message_class("demo.Account")(seq=3)
        recorder = _Recorder()
        MessageWalker(account_schema, "demo.Account").walk(account, recorder)
        (_, message, row), = recorder.rows
        assert message == "demo.Account"
        assert row["seq"] == 3
        assert row["user_type"] == "USER_TYPE_UNSPECIFIED"

    def test_path_filter(self, order_schema):
        order = order_schema.message_class("demo.Order")(order_id="o1", total=3.5)
        recorder = _Recorder()
        MessageWalker(order_schema, "demo.Order", paths=frozenset({"total"})).walk(
            order, recorder
        )
        assert [path for path, *_ in recorder.fields] == ["total"]

    def test_repeated_size_reported(self, order_schema):
        order = order_schema.message_class("demo.Order")()
        order.items.add()
        recorder = _Recorder()
        MessageWalker(order_schema, "demo.Order").walk(order, recorder)
        sizes = {path: size for path, _, _, size in recorder.fields}
        assert sizes["items[]"] == 1
        assert sizes["total"] is None
