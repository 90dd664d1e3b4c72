"""Tests for the random and template baselines and the benchmark."""

import pytest

from protosynth.baselines_bench import (
    STRATEGIES,
    bench_document,
    confidence_halfwidth,
    load_template,
    parse_template,
    random_generate,
    render_bench_table,
    run_benchmark,
    template_generate,
)
from protosynth.common.errors import ConfigError, TemplateError
from protosynth.common.types import SlotKind
from protosynth.dependency_resolver import attach_conditionals
from protosynth.domain_analyzer import analyze
from protosynth.quality_assessor import parse_rules

FIXED_ID = "123e4567-e89b-42d3-a456-426614174000"


def _template(slots=None, fixed=None, message="demo.Account"):
    return {
        "format": "template/v1",
        "message": message,
        "fixed": fixed if fixed is not None else {"accountId": FIXED_ID},
        "slots": slots or {},
    }


@pytest.fixture
def account_template(account_schema):
    """Every account BASIC with a low limit and a counting seq."""
    return parse_template(
        _template(
            {
                "user_type": {"choice": ["BASIC"]},
                "credit_limit": {"range": [100, 900]},
                "seq": {"counter": {"base": 1}},
            },
            {"accountId": FIXED_ID, "email": "template@example.com"},
        ),
        account_schema,
    )


@pytest.fixture
def account_rules(account_schema):
    """UUID ids, and PREMIUM accounts with a limit of at least 1000."""
    _, rules = parse_rules(
        {
            "format": "rules/v1",
            "message": "demo.Account",
            "rules": [
                {"id": "id-uuid", "target": "account_id", "matches": "uuid"},
                {
                    "id": "premium-limit",
                    "implies": {
                        "if": {"path": "user_type", "equals": "PREMIUM"},
                        "then": {"target": "credit_limit", "in_range": [1000, None]},
                    },
                },
            ],
        },
        account_schema,
    )
    return rules


class TestRandomBaseline:
    """Default generators only."""

    def test_deterministic(self, order_schema):
        a = random_generate("demo.Order", order_schema, seed=5)
        b = random_generate("demo.Order", order_schema, seed=5)
        assert a == b
        assert a != random_generate("demo.Order", order_schema, seed=6)

    def test_ignores_dependencies(self, order_schema):
        order = random_generate("demo.Order", order_schema, seed=1)
        assert order.customer_id != order.customer.id

    def test_terminates_on_cycles(self, node_schema):
        node = random_generate("demo.Node", node_schema, seed=0, max_depth=3)
        assert node.HasField("next")
        assert not node.next.HasField("next")


class TestTemplate:
    """template/v1 documents and instances."""

    def test_counter(self, account_schema):
        template = parse_template(_template({"seq": {"counter": {"base": 100}}}), account_schema)
        assert template_generate(template, 5, 0, account_schema).seq == 105
        assert template.slots["seq"].kind is SlotKind.COUNTER

    def test_fixed_copied(self, account_template, account_schema):
        instance = template_generate(account_template, 0, 0, account_schema)
        assert instance.account_id == FIXED_ID
        assert instance.email == "template@example.com"
        assert instance.user_type == 1

    def test_choice_and_range(self, account_schema):
        template = parse_template(
            _template(
                {
                    "email": {"choice": ["a", "b"]},
                    "credit_limit": {"range": {"lo": 10, "hi": 20}},
                }
            ),
            account_schema,
        )
        instances = [template_generate(template, i, 3, account_schema) for i in range(100)]
        assert {m.email for m in instances} == {"a", "b"}
        assert all(10 <= m.credit_limit <= 20 for m in instances)

    def test_seeded(self, account_template, account_schema):
        a = template_generate(account_template, 7, 1, account_schema)
        assert a == template_generate(account_template, 7, 1, account_schema)

    @pytest.mark.parametrize(
        ("slots", "match"),
        [
            ({"user_type": {"choice": ["GOLD"]}}, "not a declared enum value"),
            ({"email": {"range": [0, 1]}}, "numeric field"),
            ({"email": {"counter": {"base": 0}}}, "integer field"),
            ({"seq": {"range": [5, 1]}}, "empty range"),
            ({"seq": {"range": [0.2, 0.8]}}, "holds no integer"),
            ({"seq": {"counter": {"base": "x"}}}, "must be an integer"),
            ({"seq": {"cycle": [1]}}, "unknown slot kind"),
            ({"seq": {"choice": []}}, "non-empty list"),
            ({"seq": {"choice": ["x"]}}, "does not fit"),
            ({"nope": {"choice": [1]}}, "no field 'nope'"),
        ],
    )
    def test_bad_slots(self, account_schema, slots, match):
        with pytest.raises(TemplateError, match=match):
            parse_template(_template(slots), account_schema)

    def test_repeated_path(self, order_schema):
        doc = _template({"items[].qty": {"counter": 0}}, {}, "demo.Order")
        with pytest.raises(TemplateError, match="singular"):
            parse_template(doc, order_schema)

    def test_nested_slot(self, order_schema):
        template = parse_template(
            _template({"customer.name": {"choice": ["ada"]}}, {}, "demo.Order"), order_schema
        )
        assert template_generate(template, 0, 0, order_schema).customer.name == "ada"

    def test_fixed_must_fit(self, account_schema):
        with pytest.raises(TemplateError, match="do not fit"):
            parse_template(_template(fixed={"seq": "many"}), account_schema)

    def test_wrong_format(self, account_schema):
        with pytest.raises(TemplateError, match="template/v1"):
            parse_template({"format": "rules/v1"}, account_schema)

    def test_load_yaml(self, tmp_path, account_schema):
        path = tmp_path / "template.yaml"
        path.write_text(
            "format: template/v1\n"
            "message: demo.Account\n"
            "fixed: {email: t@example.com}\n"
            "slots:\n"
            "  seq: {counter: {base: 10}}\n",
            encoding="utf-8",
        )
        template = load_template(path, account_schema)
        assert template_generate(template, 2, 0, account_schema).seq == 12

    def test_load_not_utf8(self, tmp_path, account_schema):
        path = tmp_path / "template.yaml"
        path.write_bytes(b"format: template/v1\nmessage: \xff\xfe\n")
        with pytest.raises(TemplateError, match="not valid UTF-8"):
            load_template(path, account_schema)


class TestConfidenceHalfwidth:
    def test_known_value(self):
        assert confidence_halfwidth([1.0, 2.0, 3.0]) == pytest.approx(2.484138, abs=1e-5)

    def test_single_sample(self):
        assert confidence_halfwidth([4.0]) == 0.0

    def test_constant(self):
        assert confidence_halfwidth([2.0, 2.0, 2.0]) == 0.0


class TestRunBenchmark:
    """Timing rows per (strategy, size) and one quality report per strategy."""

    @pytest.fixture
    def domain(self, account_schema, accounts):
        return attach_conditionals(accounts, account_schema, analyze(accounts, account_schema))

    @pytest.mark.parametrize(
        ("kwargs", "match"),
        [
            ({"runs": 9}, "at least 10 runs"),
            ({"strategies": []}, "at least one strategy"),
            ({"sizes": [0]}, "positive"),
            ({"strategies": ["magic"]}, "unknown strategy"),
            ({"strategies": ["template"]}, "needs a template"),
        ],
    )
    def test_rejects(self, account_schema, domain, kwargs, match):
        args = {"sizes": [10], "strategies": ["random"], "runs": 10, **kwargs}
        with pytest.raises(ConfigError, match=match):
            run_benchmark(account_schema, domain, [], **args)

    def test_statistical_needs_domain(self, account_schema):
        with pytest.raises(ConfigError, match="domain model"):
            run_benchmark(
                account_schema, None, [], [10], ["statistical"], runs=10, message="demo.Account"
            )

    def test_single_cell(self, account_schema):
        report = run_benchmark(
            account_schema, None, [], [20], ["random"], runs=10, message="demo.Account"
        )
        (row,) = report.rows
        assert (row.strategy, row.size, row.runs) == ("random", 20, 10)
        assert row.mean_seconds > 0
        assert row.ci_halfwidth >= 0
        assert row.quality is None

    def test_rows_and_quality_only_at_largest(self, account_schema, domain, accounts):
        report = run_benchmark(
            account_schema, domain, [], [50, 10], ["random", "statistical"], runs=10,
            reference=accounts,
        )
        cells = [(row.strategy, row.size) for row in report.rows]
        assert cells == [("random", 10), ("random", 50), ("statistical", 10), ("statistical", 50)]
        assert [row.quality is not None for row in report.rows] == [False, True, False, True]

    @pytest.mark.slow
    def test_quality_ordering(
        self, account_schema, domain, accounts, account_rules, account_template
    ):
        report = run_benchmark(
            account_schema,
            domain,
            account_rules,
            [300],
            STRATEGIES,
            runs=10,
            reference=accounts,
            template=account_template,
        )
        statistical, template, random = (report.quality_of(s) for s in STRATEGIES)
        assert statistical.q_sem == 1.0
        assert template.q_sem == 1.0
        assert random.q_sem == 0.0
        assert statistical.q_total > template.q_total > random.q_total

    def test_document_and_table(self, account_schema, accounts, domain):
        report = run_benchmark(
            account_schema, domain, [], [30], ["statistical"], runs=10, reference=accounts
        )
        doc = bench_document(report)
        assert doc["confidence"] == 0.95
        assert doc["rows"][0]["quality"]["q_struct"] == 1.0
        lines = render_bench_table(report, scale=10).splitlines()
        assert lines[0].split()[:2] == ["strategy", "size"]
        assert lines[1].split()[:2] == ["statistical", "30"]
        assert lines[1].split()[4] == "10.000"
