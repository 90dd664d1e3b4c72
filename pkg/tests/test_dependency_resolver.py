"""Tests for dependency graphs, ordering and conditional distributions."""

import pytest
from conftest import field, message
from hypothesis import given
from hypothesis import strategies as st

from protosynth.common.errors import ConfigError
from protosynth.common.types import DependencyEdge, DependencyGraph, Provenance
from protosynth.dependency_resolver import (
    annotation_edges,
    attach_conditionals,
    break_cycles,
    build_dependency_graph,
    build_dependency_graphs,
    conditional_table,
    load_annotations,
    parse_annotations,
    semantic_edges,
    tokenize,
    topo_order,
)
from protosynth.domain_analyzer import analyze


def _graph(*edges, nodes=("a", "b", "c")):
    return DependencyGraph("demo.M", nodes, tuple(edges))


def _edge(source, target, weight=1.0, provenance=Provenance.CORRELATION):
    return DependencyEdge(source, target, provenance, weight)


@pytest.fixture
def pair_schema(build_schema):
    """``Pair{optional string a; optional string b;}``."""
    return build_schema(
        message(
            "Pair",
            field("a", 1, "string", optional=True),
            field("b", 2, "string", optional=True),
        )
    )


@pytest.fixture
def pairs(pair_schema):
    def records(*rows):
        cls = pair_schema.message_class("demo.Pair")
        return [("demo.Pair", cls(**row)) for row in rows]

    return records


class TestTokenize:
    def test_snake_case(self):
        assert tokenize("customer_id") == {"customer", "id"}

    def test_camel_case(self):
        assert tokenize("customerID") == {"customer", "id"}
        assert tokenize("HTTPServer2") == {"http", "server", "2"}


class TestSemanticEdges:
    """X -> Y when Y's tokens are X's plus ``id``."""

    def test_no_overlap(self, pair_schema):
        assert build_dependency_graph("demo.Pair", pair_schema).edges == ()

    def test_message_field_to_id(self, order_schema):
        edges = semantic_edges("demo.Order", order_schema)
        assert edges == [DependencyEdge("customer", "customer_id", Provenance.SEMANTIC)]

    def test_type_name_tokens(self, build_schema):
        schema = build_schema(
            message(
                "Doc",
                field("owner", 1, "message", "demo.User"),
                field("user_id", 2, "int64"),
            ),
            message("User", field("id", 1, "int64")),
        )
        edges = semantic_edges("demo.Doc", schema)
        assert [(e.source, e.target) for e in edges] == [("owner", "user_id")]


class TestCorrelationEdges:
    def test_controller_points_at_numeric(self, account_schema, accounts):
        domain = analyze(accounts, account_schema)
        graph = build_dependency_graph("demo.Account", account_schema, domain)
        (edge,) = graph.edges
        assert (edge.source, edge.target) == ("user_type", "credit_limit")
        assert edge.provenance is Provenance.CORRELATION
        assert edge.weight > 0.7


class TestAnnotations:
    """annotations/v1 sidecar documents."""

    def test_parse(self, pair_schema):
        doc = {"format": "annotations/v1", "messages": {"demo.Pair": {"b": "a"}}}
        annotations = parse_annotations(doc, pair_schema)
        assert annotations == {"demo.Pair": {"b": ("a",)}}
        assert annotation_edges("demo.Pair", annotations) == [
            DependencyEdge("a", "b", Provenance.ANNOTATION)
        ]

    def test_unknown_field(self, pair_schema):
        doc = {"format": "annotations/v1", "messages": {"demo.Pair": {"b": "zzz"}}}
        with pytest.raises(ConfigError, match="no field 'zzz'"):
            parse_annotations(doc, pair_schema)

    def test_unknown_message(self, pair_schema):
        doc = {"format": "annotations/v1", "messages": {"demo.Nope": {"b": "a"}}}
        with pytest.raises(ConfigError, match="unknown message type"):
            parse_annotations(doc, pair_schema)

    def test_wrong_format(self, pair_schema):
        with pytest.raises(ConfigError, match="annotations/v1"):
            parse_annotations({"format": "v0"}, pair_schema)

    def test_load_yaml(self, tmp_path, pair_schema):
        path = tmp_path / "deps.yaml"
        path.write_text(
            "format: annotations/v1\nmessages:\n  demo.Pair:\n    b: [a]\n", encoding="utf-8"
        )
        assert load_annotations(path, pair_schema) == {"demo.Pair": {"b": ("a",)}}

    def test_load_not_utf8(self, tmp_path, pair_schema):
        path = tmp_path / "deps.yaml"
        path.write_bytes(b"format: annotations/v1\n\xff\xfe\n")
        with pytest.raises(ConfigError, match="not valid UTF-8"):
            load_annotations(path, pair_schema)

    def test_annotation_edge_in_graph(self, pair_schema):
        annotations = {"demo.Pair": {"a": ("b",)}}
        graph = build_dependency_graph("demo.Pair", pair_schema, annotations=annotations)
        assert [(e.source, e.target) for e in graph.edges] == [("b", "a")]


class TestTopoOrder:
    """Dependencies first; ties by declaration order."""

    def test_chain(self):
        graph = _graph(_edge("a", "b"), _edge("b", "c"))
        assert topo_order(graph, ["a", "b", "c"]) == ["a", "b", "c"]

    def test_declaration_tie_break(self):
        graph = _graph(nodes=("x", "y", "z"))
        assert topo_order(graph, ["x", "y", "z"]) == ["x", "y", "z"]

    def test_dependency_moves_field_forward(self):
        graph = _graph(_edge("c", "a"))
        assert topo_order(graph, ["a", "b", "c"]) == ["b", "c", "a"]

    def test_cycle_drops_weakest(self):
        graph = _graph(_edge("a", "b", 0.9), _edge("b", "a", 0.75), nodes=("a", "b"))
        broken = break_cycles(graph)
        assert broken.removed == (_edge("b", "a", 0.75),)
        assert broken.edges == (_edge("a", "b", 0.9),)
        assert topo_order(graph, ["a", "b"]) == ["a", "b"]

    def test_correlation_loses_tie(self):
        semantic = _edge("b", "a", 1.0, Provenance.SEMANTIC)
        correlation = _edge("a", "b", 1.0)
        broken = break_cycles(_graph(semantic, correlation, nodes=("a", "b")))
        assert broken.removed == (correlation,)

    def test_missing_node(self):
        with pytest.raises(ValueError, match="declaration order"):
            topo_order(_graph(_edge("a", "b")), ["a"])

    @given(
        st.permutations("abcdef"),
        st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda e: e[0] < e[1])),
    )
    def test_matches_smallest_ready_first(self, declared, pairs):
        nodes = "abcdef"
        edges = [_edge(nodes[i], nodes[j]) for i, j in sorted(pairs)]
        index = {name: i for i, name in enumerate(declared)}
        pending = {n: {e.source for e in edges if e.target == n} for n in nodes}
        expected = []
        while pending:
            ready = min((n for n, deps in pending.items() if not deps), key=index.__getitem__)
            expected.append(ready)
            del pending[ready]
            for deps in pending.values():
                deps.discard(ready)
        assert topo_order(_graph(*edges, nodes=tuple(nodes)), list(declared)) == expected

    def test_graphs_are_acyclic(self, pair_schema):
        annotations = {"demo.Pair": {"a": ("b",), "b": ("a",)}}
        graphs = build_dependency_graphs(pair_schema, annotations=annotations)
        assert len(graphs["demo.Pair"].edges) == 1
        assert len(graphs["demo.Pair"].removed) == 1


class TestConditionalTable:
    """Dependent frequencies per controlling value."""

    def test_constant_controller(self, pairs, pair_schema):
        corpus = pairs({"a": "x", "b": "p"}, {"a": "x", "b": "q"}, {"a": "x", "b": "p"})
        table = conditional_table(corpus, "a", "b", pair_schema)
        assert list(table.rows) == ["x"]
        assert table.row("x") == table.marginal == (("p", 2), ("q", 1))

    def test_never_co_present(self, pairs, pair_schema):
        corpus = pairs({"a": "x"}, {"b": "p"})
        table = conditional_table(corpus, "a", "b", pair_schema)
        assert table.rows == {}
        assert table.marginal == (("p", 1),)

    def test_cardinality_overflow(self, pairs, pair_schema):
        corpus = pairs(*({"a": str(i), "b": "p"} for i in range(5)))
        table = conditional_table(corpus, "a", "b", pair_schema, max_cardinality=3)
        assert table.skipped
        assert table.rows == {}
        assert table.marginal == (("p", 5),)

    def test_disjoint_supports(self, account_schema, accounts):
        table = conditional_table(accounts, "user_type", "credit_limit", account_schema)
        basic = {v for v, _ in table.row("BASIC")}
        premium = {v for v, _ in table.row("PREMIUM")}
        assert set(table.rows) == {"BASIC", "PREMIUM"}
        assert basic.isdisjoint(premium)
        assert max(basic) <= 900 < 5000 <= min(premium)

    def test_paths_must_share_message(self, order_schema):
        with pytest.raises(ConfigError, match="share a message"):
            conditional_table([], "order_id", "customer.name", order_schema)


class TestAttachConditionals:
    def test_tables_follow_edges(self, account_schema, accounts):
        domain = attach_conditionals(accounts, account_schema, analyze(accounts, account_schema))
        assert list(domain.conditionals) == [("user_type", "credit_limit")]
        assert not domain.conditional("user_type", "credit_limit").skipped

    def test_semantic_edges_need_no_table(self, order_schema):
        cls = order_schema.message_class("demo.Order")
        records = [("demo.Order", cls(order_id="o", customer_id="c"))]
        domain = attach_conditionals(records, order_schema, analyze(records, order_schema))
        assert domain.conditionals == {}

