"""Command-line front end.

Subcommands: ``analyze`` (descriptor + logs → domain model), ``generate``
(descriptor + optional domain model → dataset), ``validate`` (dataset +
reference + rules → quality report), ``bench`` (strategy comparison) and
``schema`` (schema summary).

Settings come from built-in defaults, then an optional ``config/v1`` YAML
file, then explicit flags. Exit status is 0 on success, 1 for invalid
input or configuration, 2 for I/O failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import deque
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NoReturn

import yaml

from protosynth import __version__
from protosynth.baselines_bench import (
    MIN_RUNS,
    STRATEGIES,
    bench_document,
    load_template,
    render_bench_table,
    run_benchmark,
)
from protosynth.common.errors import ConfigError, ProtosynthError, RuleError, SinkError
from protosynth.common.types import (
    AnalysisConfig,
    CycleStrategy,
    GenerationConfig,
    QualityConfig,
    RepeatedSize,
    Rule,
    SchemaGraph,
)
from protosynth.dependency_resolver import Annotations, attach_conditionals, load_annotations
from protosynth.domain_analyzer import (
    analyze,
    dumps_domain_model,
    ingest_corpus,
    load_domain_model,
    parse_format,
)
from protosynth.generation_engine import GenerationEngine
from protosynth.quality_assessor import assess, load_rules, render_table, report_document
from protosynth.schema_core import load_descriptor_set, schema_report
from protosynth.sinks import (
    MAX_JSON_ARRAY,
    DelimitedSink,
    JsonArraySink,
    NdjsonSink,
    OutputFormat,
    open_sink,
    parse_output_format,
    read_dataset,
    write_text_atomic,
)

logger = logging.getLogger(__name__)

CONFIG_FORMAT = "config/v1"


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one invocation."""
    descriptor: str | None = None
    logs: str | None = None
    log_format: str = "ndjson"
    domain: str | None = None
    annotations: str | None = None
    type: str | None = None
    count: int = 100
    format: str = "pb"
    out: str | None = None
    rules: str | None = None
    reference: str | None = None
    template: str | None = None
    sizes: tuple[int, ...] = (100, 1000)
    strategies: tuple[str, ...] = STRATEGIES
    runs: int = MIN_RUNS
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.runs < MIN_RUNS:
            raise ConfigError(f"runs must be >= {MIN_RUNS}, got {self.runs}")
        if not self.sizes or min(self.sizes) < 1:
            raise ConfigError("sizes must be positive")
        unknown = set(self.strategies) - set(STRATEGIES)
        if not self.strategies or unknown:
            raise ConfigError(f"strategies must be a non-empty subset of {list(STRATEGIES)}")
        parse_output_format(self.format)
        parse_format(self.log_format)


_SECTIONS = {"generation", "analysis", "quality"}


def _section(cls: type[Any], doc: Any, name: str) -> Any:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"'{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in '{name}'")
    values = dict(doc)
    if cls is GenerationConfig:
        if "cycle_strategy" in values:
            values["cycle_strategy"] = _cycle_strategy(values["cycle_strategy"])
        if "repeated_size" in values:
            values["repeated_size"] = _section(
                RepeatedSize, values["repeated_size"], "repeated_size"
            )
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid '{name}' section ({exc})") from None


def _cycle_strategy(value: Any) -> CycleStrategy:
    try:
        return CycleStrategy(value)
    except ValueError:
        raise ConfigError(f"unknown cycle strategy '{value}'") from None


def parse_run_config(doc: Any, locator: str = "<document>") -> RunConfig:
    """Build a RunConfig from a ``config/v1`` document.

    Raises:
        ConfigError: on a wrong format tag, unknown keys or invalid values.
    """
    if not isinstance(doc, Mapping) or doc.get("format") != CONFIG_FORMAT:
        raise ConfigError(f"expected a '{CONFIG_FORMAT}' document", locator)
    known = {f.name for f in fields(RunConfig)}
    values = {k: v for k, v in doc.items() if k != "format"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", locator)
    for name in _SECTIONS & set(values):
        cls = {"generation": GenerationConfig, "analysis": AnalysisConfig}.get(name, QualityConfig)
        values[name] = _section(cls, values[name], name)
    for name in ("sizes", "strategies"):
        if name in values:
            values[name] = tuple(values[name])
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration ({exc})", locator) from None


def load_run_config(path: str | Path) -> RunConfig:
    with Path(path).open(encoding="utf-8") as stream:
        try:
            doc = yaml.safe_load(stream)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML ({exc})", str(path)) from None
        except UnicodeDecodeError:
            raise ConfigError("not valid UTF-8", str(path)) from None
    return parse_run_config(doc, str(path))


# flag dest → (section, field); an empty section means a RunConfig field
_FLAG_TARGETS: dict[str, tuple[tuple[str, str], ...]] = {
    "descriptor": (("", "descriptor"),),
    "logs": (("", "logs"),),
    "log_format": (("", "log_format"),),
    "domain": (("", "domain"),),
    "annotations": (("", "annotations"),),
    "type": (("", "type"),),
    "count": (("", "count"),),
    "format": (("", "format"),),
    "out": (("", "out"),),
    "rules": (("", "rules"),),
    "reference": (("", "reference"),),
    "template": (("", "template"),),
    "sizes": (("", "sizes"),),
    "strategies": (("", "strategies"),),
    "runs": (("", "runs"),),
    "seed": (("generation", "seed"),),
    "max_depth": (("generation", "max_depth"), ("analysis", "max_depth")),
    "cycle_strategy": (("generation", "cycle_strategy"),),
    "lam": (("generation", "termination_lambda"),),
    "workers": (("generation", "workers"), ("analysis", "workers")),
    "scale": (("quality", "display_scale"),),
}


def merge_flags(config: RunConfig, args: argparse.Namespace, explicit: set[str]) -> RunConfig:
    """Overlay explicitly given flags on a RunConfig."""
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    for dest in sorted(explicit):
        value = getattr(args, dest)
        if dest == "cycle_strategy":
            value = _cycle_strategy(value)
        for section, name in _FLAG_TARGETS.get(dest, ()):
            (sections[section] if section else top)[name] = value
    for section, values in sections.items():
        if values:
            top[section] = replace(getattr(config, section), **values)
    return replace(config, **top)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class UsageError(Exception):
    """Command line could not be parsed."""


class _ExitRequest(Exception):
    def __init__(self, status: int):
        self.status = status


class ArgumentParser(argparse.ArgumentParser):
    """Parser that reports usage errors instead of exiting the process."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")

    def exit(self, status: int = 0, message: str | None = None) -> NoReturn:
        if message:
            sys.stderr.write(message)
        raise _ExitRequest(status)


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got '{text}'"
        ) from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser() -> ArgumentParser:
    defaults = RunConfig()
    gen = defaults.generation

    common = ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="config/v1 YAML file; explicit flags override it")
    common.add_argument("--descriptor", help="compiled FileDescriptorSet")
    common.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="diagnostics written to stderr",
    )
    common.add_argument("--type", help="fully-qualified root message type")
    common.add_argument("--workers", type=int, default=gen.workers, help="worker processes")

    parser = ArgumentParser(
        prog="protosynth",
        allow_abbrev=False,
        formatter_class=_HelpFormatter,
        description="Schema-aware synthetic data for protobuf messages.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name: str, summary: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name,
            parents=[common],
            formatter_class=_HelpFormatter,
            help=summary,
            allow_abbrev=False,
        )

    def corpus_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--log-format",
            default=defaults.log_format,
            choices=("ndjson", "binary"),
            help="corpus encoding",
        )

    def generation_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--domain", help="domain-model/v1 JSON from 'analyze'")
        p.add_argument("--annotations", help="annotations/v1 YAML dependency sidecar")
        p.add_argument("--seed", type=int, default=gen.seed, help="64-bit run seed")
        p.add_argument("--max-depth", type=int, default=gen.max_depth, help="recursion limit")
        p.add_argument(
            "--cycle-strategy",
            default=gen.cycle_strategy.value,
            choices=[s.value for s in CycleStrategy],
            help="policy when a message type recurs",
        )
        p.add_argument(
            "--lambda",
            dest="lam",
            type=float,
            default=gen.termination_lambda,
            help="rate of probabilistic termination",
        )

    p = command("analyze", "profile a log corpus into a domain model")
    p.add_argument("--logs", help="corpus file")
    corpus_flags(p)
    p.add_argument("--annotations", help="annotations/v1 YAML dependency sidecar")
    p.add_argument("--max-depth", type=int, default=defaults.analysis.max_depth, help="path depth")
    p.add_argument("--out", help="domain model output (stdout when omitted)")

    p = command("generate", "generate a dataset")
    generation_flags(p)
    p.add_argument("--count", type=int, default=defaults.count, help="number of instances")
    p.add_argument(
        "--format", default=defaults.format, choices=[f.value for f in OutputFormat], help="output"
    )
    p.add_argument("--out", help="dataset output (stdout when omitted)")

    p = command("validate", "score a dataset against a reference corpus")
    p.add_argument("dataset", help="dataset file written by 'generate'")
    p.add_argument(
        "--format", default=defaults.format, choices=[f.value for f in OutputFormat], help="dataset"
    )
    p.add_argument("--reference", help="reference corpus")
    corpus_flags(p)
    p.add_argument("--rules", help="rules/v1 YAML business rules")
    p.add_argument("--scale", type=int, default=1, choices=(1, 10), help="score display scale")
    p.add_argument("--out", help="JSON report output")

    p = command("bench", "compare generation strategies")
    generation_flags(p)
    p.add_argument("--reference", help="reference corpus for quality scoring")
    corpus_flags(p)
    p.add_argument("--rules", help="rules/v1 YAML business rules")
    p.add_argument("--template", help="template/v1 YAML for the template baseline")
    p.add_argument("--sizes", type=_int_list, default=defaults.sizes, help="dataset sizes")
    p.add_argument(
        "--strategies", type=_str_list, default=defaults.strategies, help="strategies to run"
    )
    p.add_argument("--runs", type=int, default=defaults.runs, help="timed runs per cell")
    p.add_argument("--scale", type=int, default=1, choices=(1, 10), help="score display scale")
    p.add_argument("--out", help="JSON report output")

    command("schema", "summarize a descriptor set")
    return parser


def _explicit(argv: Sequence[str], parser: argparse.ArgumentParser, command: str) -> set[str]:
    """Destinations of the optional flags that appear in ``argv``."""
    sub = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    ).choices[command]
    given = set()
    for action in sub._actions:
        for option in action.option_strings:
            if any(token == option or token.startswith(option + "=") for token in argv):
                given.add(action.dest)
    return given


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _schema(config: RunConfig) -> SchemaGraph:
    if not config.descriptor:
        raise ConfigError("--descriptor is required")
    return load_descriptor_set(Path(config.descriptor).read_bytes())


def _annotations(config: RunConfig, schema: SchemaGraph) -> Annotations | None:
    return load_annotations(config.annotations, schema) if config.annotations else None


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text_atomic(out, text)
    else:
        sys.stdout.write(text)


def cmd_analyze(config: RunConfig, args: argparse.Namespace) -> int:
    schema = _schema(config)
    if not config.logs:
        raise ConfigError("--logs is required")
    corpus = ingest_corpus(
        config.logs,
        config.log_format,
        schema,
        malformed_threshold=config.analysis.malformed_threshold,
    )
    model = analyze(corpus, schema, config.analysis, root=config.type)
    annotations = _annotations(config, schema)
    model = attach_conditionals(corpus, schema, model, annotations, config.analysis)
    _emit(dumps_domain_model(model), config.out)
    return 0


def cmd_generate(config: RunConfig, args: argparse.Namespace) -> int:
    schema = _schema(config)
    domain = load_domain_model(config.domain) if config.domain else None
    message = config.type or (domain.root if domain else None)
    if message is None:
        raise ConfigError("--type is required without --domain")
    fmt = parse_output_format(config.format)
    if fmt is OutputFormat.JSON and config.count > MAX_JSON_ARRAY:
        raise ConfigError(f"json output holds at most {MAX_JSON_ARRAY} instances")
    engine = GenerationEngine(
        schema, domain, config.generation, annotations=_annotations(config, schema)
    )
    if config.out:
        with open_sink(config.out, fmt, message) as sink:
            deque(engine.generate_batch(message, config.count, [sink]), maxlen=0)
        return 0
    match fmt:
        case OutputFormat.PB:
            stream_sink: DelimitedSink | NdjsonSink | JsonArraySink = DelimitedSink(
                sys.stdout.buffer, "<stdout>"
            )
        case OutputFormat.NDJSON:
            stream_sink = NdjsonSink(sys.stdout, "<stdout>")
        case OutputFormat.JSON:
            stream_sink = JsonArraySink(sys.stdout, "<stdout>")
    deque(engine.generate_batch(message, config.count, [stream_sink]), maxlen=0)
    stream_sink.close()
    return 0


def _report_json(document: Mapping[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def cmd_validate(config: RunConfig, args: argparse.Namespace) -> int:
    schema = _schema(config)
    found, items = read_dataset(args.dataset, config.format, schema)
    message = config.type or found
    if message is None:
        raise ConfigError("cannot tell the dataset's message type; pass --type")
    rules: list[Rule] = []
    if config.rules:
        rules_message, rules = load_rules(config.rules, schema)
        if rules_message != message:
            raise RuleError(f"rules are for {rules_message}, dataset is {message}", config.rules)
    if not config.reference:
        raise ConfigError("--reference is required")
    reference = ingest_corpus(
        config.reference,
        config.log_format,
        schema,
        malformed_threshold=config.analysis.malformed_threshold,
    )
    report = assess(items, reference, schema, rules, config.quality, message=message)
    sys.stdout.write(render_table(report, config.quality.display_scale))
    if config.out:
        write_text_atomic(config.out, _report_json(report_document(report)))
    return 0


def cmd_bench(config: RunConfig, args: argparse.Namespace) -> int:
    schema = _schema(config)
    domain = load_domain_model(config.domain) if config.domain else None
    template = load_template(config.template, schema) if config.template else None
    message = config.type or (domain.root if domain else None) or (
        template.message if template else None
    )
    rules: list[Rule] = []
    if config.rules:
        rules_message, rules = load_rules(config.rules, schema)
        if message is not None and rules_message != message:
            raise RuleError(f"rules are for {rules_message}, benchmark is {message}", config.rules)
    reference = None
    if config.reference:
        reference = ingest_corpus(
            config.reference,
            config.log_format,
            schema,
            malformed_threshold=config.analysis.malformed_threshold,
        )
    report = run_benchmark(
        schema,
        domain,
        rules,
        config.sizes,
        config.strategies,
        runs=config.runs,
        reference=reference,
        template=template,
        message=message,
        config=config.generation,
        quality_config=config.quality,
        annotations=_annotations(config, schema),
    )
    sys.stdout.write(render_bench_table(report, config.quality.display_scale))
    if config.out:
        write_text_atomic(config.out, _report_json(bench_document(report)))
    return 0


def cmd_schema(config: RunConfig, args: argparse.Namespace) -> int:
    schema = _schema(config)
    sys.stdout.write(_report_json(schema_report(schema)))
    return 0


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "analyze": cmd_analyze,
    "generate": cmd_generate,
    "validate": cmd_validate,
    "bench": cmd_bench,
    "schema": cmd_schema,
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def run(argv: Sequence[str]) -> int:
    """Run one command line and return its exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except _ExitRequest as exc:
        return exc.status
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_run_config(args.config) if args.config else RunConfig()
        config = merge_flags(config, args, _explicit(argv, parser, args.command))
        return COMMANDS[args.command](config, args)
    except SinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtosynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> int:
    return run(sys.argv[1:])
