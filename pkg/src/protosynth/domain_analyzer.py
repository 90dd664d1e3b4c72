"""Corpus ingestion and statistical profiling of field paths.

A corpus is streamed once through a ProfileAccumulator that keeps, per
field path, a value→count table, opportunity and presence counts, list
sizes, and bounded samples of values and message rows. Statistics, string
patterns, associations and constraints are derived from those tables.
While every table is below its capacity, profiles do not depend on record
order and shard accumulators merge associatively.
"""

from __future__ import annotations

import base64
import hashlib
import heapq
import itertools
import json
import logging
import math
import re
import string
from collections import Counter, defaultdict, deque
from collections.abc import Callable, Iterable, Iterator, Mapping, Sequence
from concurrent.futures import Executor, Future, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import UTC, datetime
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from google.protobuf import json_format
from google.protobuf.message import DecodeError
from scipy.stats.contingency import association

from protosynth.common.errors import (
    ConfigError,
    CorpusError,
    CorpusQualityError,
    UnknownTypeError,
)
from protosynth.common.types import (
    PERCENTILES,
    AnalysisConfig,
    ConditionalDistribution,
    ConstraintSet,
    Dependency,
    DomainModel,
    FieldInfo,
    FieldProfile,
    FieldStats,
    Kind,
    ModelProvenance,
    PatternId,
    PatternSpec,
    Scalar,
    SchemaGraph,
    finite_or_none,
)
from protosynth.common.walk import MessageWalker, join
from protosynth.common.wire import read_delimited
from protosynth.schema_core import field_paths, fingerprint, load_descriptor_set

logger = logging.getLogger(__name__)

FORMAT_TAG = "domain-model/v1"
TYPE_SIDECAR_SUFFIX = ".type"


class CorpusFormat(Enum):
    """On-disk corpus encodings."""
    NDJSON = "ndjson"
    BINARY = "binary"


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

Record = tuple[str, Any]
"""(fully-qualified type name, decoded message instance)."""


class LogCorpus:
    """Re-iterable stream of decoded records.

    File-backed corpora re-read the file on every pass. Malformed records
    are skipped; ``record_count`` and ``skipped_count`` describe the most
    recent complete pass.

    Raises:
        CorpusQualityError: at the end of a pass whose malformed share
            exceeds ``malformed_threshold``.
    """

    def __init__(
        self,
        reader: Callable[[], Iterator[Record | None]],
        *,
        fmt: CorpusFormat = CorpusFormat.NDJSON,
        locator: str = "<memory>",
        malformed_threshold: float = 0.5,
    ):
        self._reader = reader
        self.fmt = fmt
        self.locator = locator
        self.malformed_threshold = malformed_threshold
        self.record_count = 0
        self.skipped_count = 0

    @classmethod
    def from_records(
        cls, records: Iterable[Record], fmt: CorpusFormat = CorpusFormat.NDJSON
    ) -> LogCorpus:
        """Corpus over in-memory records."""
        items: list[Record | None] = list(records)
        return cls(lambda: iter(items), fmt=fmt)

    def __iter__(self) -> Iterator[Record]:
        good = bad = 0
        for record in self._reader():
            if record is None:
                bad += 1
                continue
            good += 1
            yield record
        self.record_count, self.skipped_count = good, bad
        total = good + bad
        if total and bad / total > self.malformed_threshold:
            raise CorpusQualityError(
                f"{bad} of {total} records malformed "
                f"(threshold {self.malformed_threshold:.0%})",
                self.locator,
            )


def _ndjson_reader(path: Path, schema: SchemaGraph) -> Callable[[], Iterator[Record | None]]:
    def read() -> Iterator[Record | None]:
        with path.open("rb") as stream:
            for line_no, line in enumerate(stream, 1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line.decode("utf-8"))
                    type_name = doc["type"]
                    instance = schema.message_class(type_name)()
                    json_format.ParseDict(doc["payload"], instance)
                except (
                    ValueError,
                    KeyError,
                    TypeError,
                    UnknownTypeError,
                    json_format.ParseError,
                ) as exc:
                    logger.warning("%s:%d: skipped malformed record (%s)", path, line_no, exc)
                    yield None
                    continue
                yield type_name, instance

    return read


def _binary_reader(
    path: Path, schema: SchemaGraph, type_name: str
) -> Callable[[], Iterator[Record | None]]:
    cls = schema.message_class(type_name)

    def read() -> Iterator[Record | None]:
        with path.open("rb") as stream:
            try:
                for index, payload in enumerate(read_delimited(stream)):
                    try:
                        yield type_name, cls.FromString(payload)
                    except DecodeError as exc:
                        logger.warning("%s: record %d skipped (%s)", path, index, exc)
                        yield None
            except CorpusError as exc:
                logger.warning("%s: %s; rest of file skipped", path, exc)
                yield None

    return read


def read_type_sidecar(path: str | Path) -> str:
    """Message type named by the ``<file>.type`` sidecar of a binary file."""
    sidecar = Path(f"{path}{TYPE_SIDECAR_SUFFIX}")
    try:
        type_name = sidecar.read_text(encoding="utf-8").strip()
    except FileNotFoundError:
        raise CorpusError("binary corpus needs a type sidecar", str(sidecar)) from None
    except UnicodeDecodeError:
        raise CorpusError("type sidecar is not valid UTF-8", str(sidecar)) from None
    if not type_name:
        raise CorpusError("type sidecar is empty", str(sidecar))
    return type_name


def parse_format(fmt: str | CorpusFormat) -> CorpusFormat:
    try:
        return CorpusFormat(fmt)
    except ValueError:
        raise ConfigError(f"unknown corpus format '{fmt}'") from None


def ingest_corpus(
    path: str | Path,
    fmt: str | CorpusFormat,
    schema: SchemaGraph,
    *,
    malformed_threshold: float = 0.5,
) -> LogCorpus:
    """Open a corpus file as a streaming LogCorpus.

    Args:
        path: NDJSON file of ``{"type", "payload"}`` objects, or a
            length-delimited binary file with a ``.type`` sidecar.
        fmt: ``ndjson`` or ``binary``.
        schema: Schema the records are decoded against.
        malformed_threshold: Largest tolerated malformed share.

    Raises:
        OSError: if the file cannot be read.
        CorpusError: if a binary corpus has no usable type sidecar.
    """
    fmt = parse_format(fmt)
    path = Path(path)
    with path.open("rb"):
        pass
    if fmt is CorpusFormat.BINARY:
        reader = _binary_reader(path, schema, read_type_sidecar(path))
    else:
        reader = _ndjson_reader(path, schema)
    return LogCorpus(
        reader, fmt=fmt, locator=str(path), malformed_threshold=malformed_threshold
    )


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def order_key(value: Scalar) -> tuple[int, Any]:
    """Total order over normalized scalars of mixed type; NaN sorts last."""
    if isinstance(value, bool):
        return (0, int(value))
    if isinstance(value, int):
        return (1, value)
    if isinstance(value, float):
        return (1, value) if not math.isnan(value) else (2, 0)
    return (3, value)


def _is_number(value: Scalar) -> bool:
    return isinstance(value, int | float) and not isinstance(value, bool)


def stats_from_counts(
    counts: Mapping[Any, int], count: int | None = None, top_k: int = 1000
) -> FieldStats:
    """FieldStats of the multiset described by a value→count table.

    ``count`` is the number of opportunities; it defaults to the number of
    values. Percentiles use nearest rank: the ⌈p·n/100⌉-th order statistic.
    """
    present = sum(counts.values())
    total = present if count is None else count
    if present == 0:
        return FieldStats(count=total)
    ordered = sorted(counts.items(), key=lambda item: order_key(item[0]))
    values = [v for v, _ in ordered]
    weights = [c for _, c in ordered]
    cumulative = np.cumsum(weights)

    def nearest_rank(p: int) -> Scalar:
        rank = max(1, -(-p * present // 100))
        return values[int(np.searchsorted(cumulative, rank))]

    mean = variance = None
    if all(_is_number(v) for v in values):
        x = np.asarray(values, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        finite = np.isfinite(x)
        n = float(w[finite].sum())
        if n > 0:
            mean = float(np.dot(x[finite], w[finite]) / n)
            spread = float(np.dot(w[finite], (x[finite] - mean) ** 2))
            variance = spread / (n - 1) if n > 1 else 0.0

    top = sorted(ordered, key=lambda item: (-item[1], order_key(item[0])))[:top_k]
    return FieldStats(
        count=total,
        present_count=present,
        mean=mean,
        variance=variance,
        minimum=values[0],
        maximum=values[-1],
        percentiles={p: nearest_rank(p) for p in PERCENTILES},
        quantiles=tuple(nearest_rank(q) for q in range(101)),
        frequencies=tuple(top),
        overflow=present - sum(c for _, c in top),
        distinct=len(values),
    )


def compute_stats(
    values: Iterable[Scalar], *, count: int | None = None, top_k: int = 1000
) -> FieldStats:
    """Summary statistics of a sample of same-kind scalars.

    Sample variance (n−1 divisor, 0 for a single value); nearest-rank
    percentiles; top-K frequencies with an overflow count.
    """
    return stats_from_counts(Counter(values), count, top_k)


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------

UUID_RE = re.compile(
    r"[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[1-8][0-9a-fA-F]{3}-[89abAB][0-9a-fA-F]{3}-[0-9a-fA-F]{12}"
)
ISO8601_RE = re.compile(
    r"\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d{1,9})?)?(?:Z|[+-]\d{2}:?\d{2})?)?"
)
EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")
NUMERIC_RE = re.compile(r"[+-]?\d+(?:\.\d+)?")
HEX_RE = re.compile(r"(?:0[xX])?[0-9a-fA-F]+")

DETECTORS: tuple[tuple[PatternId, re.Pattern[str]], ...] = (
    (PatternId.UUID, UUID_RE),
    (PatternId.ISO8601, ISO8601_RE),
    (PatternId.EMAIL, EMAIL_RE),
    (PatternId.NUMERIC_STRING, NUMERIC_RE),
    (PatternId.HEX, HEX_RE),
)

CHAR_CLASSES = ("lower", "upper", "digit", "space", "punct", "other")


def char_class(ch: str) -> str:
    if ch in string.ascii_lowercase:
        return "lower"
    if ch in string.ascii_uppercase:
        return "upper"
    if ch in string.digits:
        return "digit"
    if ch.isspace():
        return "space"
    if ch in string.punctuation:
        return "punct"
    return "other"


def parse_timestamp(text: str) -> datetime | None:
    """Parse an ISO 8601 timestamp; naive values are taken as UTC."""
    try:
        moment = datetime.fromisoformat(text)
    except ValueError:
        return None
    return moment if moment.tzinfo else moment.replace(tzinfo=UTC)


def _histogram(counts: Mapping[int, int] | Counter[int]) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(counts.items()))


def _time_span(counts: Mapping[str, int]) -> tuple[str, str] | None:
    parsed = [(moment, text) for text in counts if (moment := parse_timestamp(text))]
    if not parsed:
        return None
    return min(parsed)[1], max(parsed)[1]


def detect_counted(counts: Mapping[str, int], threshold: float = 0.95) -> PatternSpec:
    """Pattern detection over a string→count table."""
    total = sum(counts.values())
    lengths: Counter[int] = Counter()
    for text, n in counts.items():
        lengths[len(text)] += n
    for pattern_id, regex in DETECTORS:
        if not total:
            break
        matched = sum(n for text, n in counts.items() if regex.fullmatch(text))
        rate = matched / total
        if rate >= threshold:
            span = _time_span(counts) if pattern_id is PatternId.ISO8601 else None
            return PatternSpec(pattern_id, _histogram(lengths), (), span, rate)
    classes: Counter[str] = Counter()
    for text, n in counts.items():
        for ch in text:
            classes[char_class(ch)] += n
    return PatternSpec(
        PatternId.GENERIC,
        _histogram(lengths),
        tuple((name, classes[name]) for name in CHAR_CLASSES if classes[name]),
    )


def detect_pattern(samples: Sequence[str], threshold: float = 0.95) -> PatternSpec:
    """Detect the format of string samples.

    Detectors run in order uuid, iso8601, email, numeric-string, hex; the
    first matching at least ``threshold`` of the samples wins. Otherwise the
    result is GENERIC with length and character-class histograms.
    """
    return detect_counted(Counter(samples), threshold)


# ---------------------------------------------------------------------------
# Associations
# ---------------------------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Product-moment correlation; None when either series is constant.

    Raises:
        ValueError: if the series differ in length or have fewer than two
            points.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two series of equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0 or not math.isfinite(denom):
        return None
    return float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))


def correlation_ratio(categories: Sequence[Scalar], values: Sequence[float]) -> float | None:
    """How much of a numeric field's variance a categorical field explains.

    Returns η in [0, 1], or None when the numeric values are constant or
    only one category occurs.
    """
    y = np.asarray(values, dtype=np.float64)
    groups: dict[Scalar, list[float]] = defaultdict(list)
    for category, value in zip(categories, y, strict=True):
        groups[category].append(float(value))
    if len(groups) < 2:
        return None
    mean = float(y.mean())
    total = float(np.dot(y - mean, y - mean))
    if total == 0.0:
        return None
    between = sum(len(g) * (float(np.mean(g)) - mean) ** 2 for g in groups.values())
    return float(min(1.0, math.sqrt(between / total)))


def cramers_v(a: Sequence[Scalar], b: Sequence[Scalar]) -> float | None:
    """Cramér's V of two categorical series; None for a degenerate table."""
    rows = {v: i for i, v in enumerate(dict.fromkeys(a))}
    cols = {v: i for i, v in enumerate(dict.fromkeys(b))}
    if len(rows) < 2 or len(cols) < 2:
        return None
    table = np.zeros((len(rows), len(cols)), dtype=np.int64)
    np.add.at(table, ([rows[v] for v in a], [cols[v] for v in b]), 1)
    return float(association(table, method="cramer"))


def infer_constraints(
    stats: FieldStats,
    correlations: Iterable[Dependency | tuple[str, float]] = (),
    threshold: float = 0.7,
) -> ConstraintSet:
    """Range, null probability and strong dependencies of one field."""
    deps = []
    for item in correlations:
        dep = item if isinstance(item, Dependency) else Dependency(item[0], item[1])
        if abs(dep.r) > threshold:
            deps.append(dep)
    value_range = None
    if stats.is_numeric and stats.minimum is not None and stats.maximum is not None:
        value_range = (stats.minimum, stats.maximum)
    return ConstraintSet(
        value_range=value_range,
        null_probability=stats.null_probability,
        dependencies=tuple(sorted(deps, key=lambda d: (d.path, d.provenance))),
    )


# ---------------------------------------------------------------------------
# Accumulation
# ---------------------------------------------------------------------------


@dataclass
class Moments:
    """Running count, mean and squared deviation of finite numbers."""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def merge(self, other: Moments) -> None:
        if not other.n:
            return
        n = self.n + other.n
        delta = other.mean - self.mean
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.mean += delta * other.n / n
        self.n = n

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0


SampleEntry = tuple[int, int, int, Scalar]
"""(negated sample key, record index, occurrence of the path in the record, value)."""


@dataclass
class PathCounts:
    """Raw observations of one field path.

    ``values`` is exact until it holds more than ``capacity`` distinct
    values; it is then cut to its heaviest half and ``dropped`` counts the
    evicted occurrences. A bottom-k sample of occurrences, keyed by a hash
    of (record, path, occurrence), backs quantiles and patterns from then
    on. Extremes and numeric moments stay exact.
    """
    kind: Kind
    capacity: int = 100_000
    sample_size: int = 100_000
    count: int = 0
    present: int = 0
    values: Counter[Scalar] = field(default_factory=Counter)
    sizes: Counter[int] = field(default_factory=Counter)
    dropped: int = 0
    sample: list[SampleEntry] = field(default_factory=list)
    moments: Moments = field(default_factory=Moments)
    low: Scalar | None = None
    high: Scalar | None = None

    @property
    def trimmed(self) -> bool:
        return self.dropped > 0

    def observe(self, values: Sequence[Scalar], record: int, path: str, start: int) -> None:
        self.values.update(values)
        for occurrence, value in enumerate(values, start):
            key = _sample_key(record, path, occurrence)
            self._offer((-key, record, occurrence, value))
            self._extend(value, value)
            if _is_number(value) and math.isfinite(value):
                self.moments.add(float(value))
        if len(self.values) > self.capacity:
            self._trim()

    def _offer(self, entry: SampleEntry) -> None:
        if len(self.sample) < self.sample_size:
            heapq.heappush(self.sample, entry)
        elif entry[0] > self.sample[0][0]:
            heapq.heapreplace(self.sample, entry)

    def _extend(self, low: Scalar | None, high: Scalar | None) -> None:
        if low is not None and (self.low is None or order_key(low) < order_key(self.low)):
            self.low = low
        if high is not None and (self.high is None or order_key(high) > order_key(self.high)):
            self.high = high

    def _trim(self) -> None:
        ranked = sorted(self.values.items(), key=lambda item: (-item[1], order_key(item[0])))
        keep = ranked[: self.capacity // 2]
        self.dropped += sum(c for _, c in ranked[len(keep) :])
        self.values = Counter(dict(keep))

    def merge(self, other: PathCounts) -> None:
        self.count += other.count
        self.present += other.present
        self.values.update(other.values)
        self.sizes.update(other.sizes)
        self.dropped += other.dropped
        for entry in other.sample:
            self._offer(entry)
        self.moments.merge(other.moments)
        self._extend(other.low, other.high)
        if len(self.values) > self.capacity:
            self._trim()

    def table(self) -> Counter[Scalar]:
        """Exact value counts, or the sampled counts once trimmed."""
        if not self.trimmed:
            return self.values
        return Counter(entry[3] for entry in self.sample)

    def stats(self, top_k: int) -> FieldStats:
        if not self.trimmed:
            return stats_from_counts(self.values, self.count, top_k)
        sampled = stats_from_counts(self.table(), None, top_k)
        top = sorted(self.values.items(), key=lambda item: (-item[1], order_key(item[0])))
        top = top[:top_k]
        numeric = self.kind.is_numeric and self.moments.n > 0
        return replace(
            sampled,
            count=self.count,
            present_count=self.present,
            mean=self.moments.mean if numeric else None,
            variance=self.moments.variance if numeric else None,
            minimum=self.low,
            maximum=self.high,
            frequencies=tuple(top),
            overflow=self.present - sum(c for _, c in top),
            distinct=len(self.values),
        )


def _sample_key(*parts: object) -> int:
    text = ":".join(str(part) for part in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


RowEntry = tuple[int, int, int, dict[str, Scalar]]
"""(negated sample key, record index, occurrence in record, row)."""


class ProfileAccumulator:
    """Mergeable partial profile of a corpus of ``root`` messages.

    Message rows (present singular scalars of one message occurrence) are
    kept as a bottom-k sample under a hash of (record index, occurrence),
    so the sample is the same however the corpus is sharded.
    """

    def __init__(self, schema: SchemaGraph, root: str, config: AnalysisConfig):
        self.root = root
        self.paths = tuple(p.text for p in field_paths(schema, root, config.max_depth))
        self.capacity = config.reservoir_size
        self.value_capacity = config.value_capacity
        self.fields: dict[str, PathCounts] = {}
        self.rows: dict[str, list[RowEntry]] = {}
        self.row_types: dict[str, str] = {}
        self.records = 0
        self._walker: MessageWalker | None = MessageWalker(
            schema, root, paths=frozenset(self.paths)
        )
        self._record = 0
        self._occurrence = 0
        self._seen: Counter[str] = Counter()

    def _counts(self, kind: Kind) -> PathCounts:
        return PathCounts(kind, self.value_capacity, self.capacity)

    def __getstate__(self) -> dict[str, Any]:
        state = self.__dict__.copy()
        state["_walker"] = None
        return state

    def add(self, instance: Any, record_index: int) -> None:
        assert self._walker is not None
        self._record = record_index
        self._occurrence = 0
        self._seen.clear()
        self._walker.walk(instance, self)
        self.records += 1

    def field(
        self,
        path: str,
        info: FieldInfo,
        values: Sequence[Scalar],
        present: bool,
        size: int | None,
    ) -> None:
        counts = self.fields.get(path)
        if counts is None:
            counts = self.fields[path] = self._counts(info.kind)
        if size is not None:
            counts.count += size
            counts.present += size
            if info.is_repeated:
                counts.sizes[size] += 1
        else:
            counts.count += 1
            counts.present += int(present)
        if values:
            counts.observe(values, self._record, path, self._seen[path])
            self._seen[path] += len(values)

    def message(self, prefix: str, message: str, row: Mapping[str, Scalar]) -> None:
        if len(row) < 2:
            return
        self.row_types[prefix] = message
        occurrence = self._occurrence
        self._occurrence += 1
        key = _sample_key(self._record, occurrence)
        self._offer(prefix, (-key, self._record, occurrence, dict(row)))

    def _offer(self, prefix: str, entry: RowEntry) -> None:
        heap = self.rows.setdefault(prefix, [])
        if len(heap) < self.capacity:
            heapq.heappush(heap, entry)
        elif entry[0] > heap[0][0]:
            heapq.heapreplace(heap, entry)

    def merge(self, other: ProfileAccumulator) -> ProfileAccumulator:
        """Fold another shard into this one, in corpus order."""
        for path, counts in other.fields.items():
            mine = self.fields.get(path)
            if mine is None:
                mine = self.fields[path] = self._counts(counts.kind)
            mine.merge(counts)
        for prefix, heap in other.rows.items():
            self.row_types[prefix] = other.row_types[prefix]
            for entry in heap:
                self._offer(prefix, entry)
        self.records += other.records
        return self

    def sampled_rows(self, prefix: str) -> list[dict[str, Scalar]]:
        """Sampled rows of one message prefix in corpus order."""
        return [e[3] for e in sorted(self.rows.get(prefix, ()), key=lambda e: (e[1], e[2]))]

    def _categorical(self, path: str, config: AnalysisConfig) -> bool:
        counts = self.fields[path]
        if counts.kind.is_categorical:
            return True
        return counts.kind is Kind.STRING and len(counts.values) <= config.categorical_cardinality

    def associations(
        self, schema: SchemaGraph, config: AnalysisConfig
    ) -> dict[str, list[Dependency]]:
        """Pairwise associations between fields of the same message occurrence."""
        found: dict[str, list[Dependency]] = defaultdict(list)
        for prefix in sorted(self.rows):
            rows = self.sampled_rows(prefix)
            names = [
                info.name
                for info in schema.fields(self.row_types[prefix])
                if join(prefix, info.name) in self.fields
            ]
            numeric = [n for n in names if self.fields[join(prefix, n)].kind.is_numeric]
            categorical = [n for n in names if self._categorical(join(prefix, n), config)]
            for a, b in itertools.combinations(numeric, 2):
                pairs = [(r[a], r[b]) for r in rows if a in r and b in r]
                if len(pairs) < 2:
                    continue
                xs, ys = zip(*pairs, strict=True)
                r = pearson(xs, ys)
                if r is not None:
                    found[join(prefix, a)].append(Dependency(join(prefix, b), r, "pearson"))
                    found[join(prefix, b)].append(Dependency(join(prefix, a), r, "pearson"))
            for a, b in itertools.combinations(categorical, 2):
                pairs = [(r[a], r[b]) for r in rows if a in r and b in r]
                v = cramers_v(*zip(*pairs, strict=True)) if pairs else None
                if v is not None:
                    found[join(prefix, a)].append(Dependency(join(prefix, b), v, "cramers-v"))
                    found[join(prefix, b)].append(Dependency(join(prefix, a), v, "cramers-v"))
            for c in categorical:
                for n in numeric:
                    pairs = [(r[c], r[n]) for r in rows if c in r and n in r]
                    eta = correlation_ratio(*zip(*pairs, strict=True)) if pairs else None
                    if eta is not None:
                        found[join(prefix, n)].append(
                            Dependency(join(prefix, c), eta, "correlation-ratio")
                        )
        return found

    def to_model(
        self, schema: SchemaGraph, config: AnalysisConfig, provenance: ModelProvenance
    ) -> DomainModel:
        found = self.associations(schema, config)
        profiles: dict[str, FieldProfile] = {}
        for path in self.paths:
            counts = self.fields.get(path)
            if counts is None or counts.count == 0:
                continue
            stats = counts.stats(config.top_k)
            table = counts.table()
            pattern = None
            if counts.kind is Kind.STRING and table:
                texts = {str(v): n for v, n in table.items()}
                pattern = detect_counted(texts, config.pattern_threshold)
            elif counts.kind is Kind.BYTES and table:
                lengths: Counter[int] = Counter()
                for value, n in table.items():
                    lengths[len(base64.b64decode(str(value)))] += n
                pattern = PatternSpec(PatternId.GENERIC, _histogram(lengths))
            sizes = None
            if counts.sizes:
                sizes = stats_from_counts(counts.sizes, None, config.top_k)
            profiles[path] = FieldProfile(
                path=path,
                kind=counts.kind,
                stats=stats,
                constraints=infer_constraints(
                    stats, found.get(path, ()), config.correlation_threshold
                ),
                pattern=pattern,
                sizes=sizes,
            )
        return DomainModel(self.root, profiles, {}, provenance)


# ---------------------------------------------------------------------------
# Analysis
# ---------------------------------------------------------------------------

_WORKER: dict[str, Any] = {}


def _init_worker(source: bytes, root: str, config: AnalysisConfig) -> None:
    _WORKER["schema"] = load_descriptor_set(source)
    _WORKER["root"] = root
    _WORKER["config"] = config


def _profile_chunk(chunk: tuple[int, list[bytes]]) -> ProfileAccumulator:
    start, payloads = chunk
    schema: SchemaGraph = _WORKER["schema"]
    acc = ProfileAccumulator(schema, _WORKER["root"], _WORKER["config"])
    cls = schema.message_class(_WORKER["root"])
    for offset, payload in enumerate(payloads):
        acc.add(cls.FromString(payload), start + offset)
    return acc


def bounded_map[T, R](
    pool: Executor, fn: Callable[[T], R], items: Iterable[T], window: int
) -> Iterator[R]:
    """Results of ``fn`` over ``items`` in input order.

    At most ``window`` submissions are outstanding, so ``items`` is drawn
    no further ahead of the consumer than that.
    """
    pending: deque[Future[R]] = deque()
    for item in items:
        pending.append(pool.submit(fn, item))
        if len(pending) >= window:
            yield pending.popleft().result()
    while pending:
        yield pending.popleft().result()


def _chunks(instances: Iterator[Any], size: int) -> Iterator[tuple[int, list[bytes]]]:
    start = 0
    while batch := [m.SerializeToString() for m in itertools.islice(instances, size)]:
        yield start, batch
        start += len(batch)


def analyze(
    corpus: LogCorpus | Iterable[Record],
    schema: SchemaGraph,
    config: AnalysisConfig | None = None,
    *,
    root: str | None = None,
    analyzed_at: datetime | None = None,
) -> DomainModel:
    """Profile every field path of a corpus of ``root`` messages.

    Args:
        corpus: Records to profile; streamed once.
        schema: Schema the records conform to.
        config: Analysis settings.
        root: Root message type; defaults to the type of the first record.
            Records of any other type are skipped.
        analyzed_at: Timestamp recorded in the provenance (now by default).

    Returns:
        A DomainModel with one profile per visited field path and no
        conditional tables.

    Raises:
        CorpusError: if the corpus is empty and no root is given.
    """
    config = config or AnalysisConfig()
    records = iter(corpus)
    first = next(records, None)
    if root is None:
        if first is None:
            raise CorpusError("corpus is empty; the root type must be given")
        root = first[0]
    schema.fields(root)
    others = 0

    def of_root() -> Iterator[Any]:
        nonlocal others
        for type_name, instance in itertools.chain([first] if first else [], records):
            if type_name == root:
                yield instance
            else:
                others += 1

    if config.workers > 1:
        acc = ProfileAccumulator(schema, root, config)
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_init_worker,
            initargs=(schema.source, root, config),
        ) as pool:
            chunks = _chunks(of_root(), config.chunk_size)
            for part in bounded_map(pool, _profile_chunk, chunks, 2 * config.workers):
                acc.merge(part)
    else:
        acc = ProfileAccumulator(schema, root, config)
        for index, instance in enumerate(of_root()):
            acc.add(instance, index)
    if others:
        logger.warning("%d records of types other than %s skipped", others, root)

    skipped = corpus.skipped_count if isinstance(corpus, LogCorpus) else 0
    moment = analyzed_at or datetime.now(UTC)
    provenance = ModelProvenance(
        record_count=acc.records,
        skipped_count=skipped,
        analyzed_at=moment.isoformat(timespec="seconds"),
        schema_fingerprint=fingerprint(schema),
    )
    model = acc.to_model(schema, config, provenance)
    logger.info("analysed %d %s records: %d field paths", acc.records, root, len(model.profiles))
    return model


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _pairs(items: Iterable[tuple[Any, Any]]) -> list[list[Any]]:
    return [[a, b] for a, b in items]


def _stats_doc(stats: FieldStats) -> dict[str, Any]:
    return {
        "count": stats.count,
        "present_count": stats.present_count,
        "mean": finite_or_none(stats.mean),
        "variance": finite_or_none(stats.variance),
        "min": stats.minimum,
        "max": stats.maximum,
        "percentiles": _pairs(stats.percentiles.items()),
        "quantiles": list(stats.quantiles),
        "frequencies": _pairs(stats.frequencies),
        "overflow": stats.overflow,
        "distinct": stats.distinct,
    }


def _stats_from_doc(doc: Mapping[str, Any]) -> FieldStats:
    return FieldStats(
        count=doc["count"],
        present_count=doc["present_count"],
        mean=doc["mean"],
        variance=doc["variance"],
        minimum=doc["min"],
        maximum=doc["max"],
        percentiles={int(p): v for p, v in doc["percentiles"]},
        quantiles=tuple(doc["quantiles"]),
        frequencies=tuple((v, c) for v, c in doc["frequencies"]),
        overflow=doc["overflow"],
        distinct=doc["distinct"],
    )


def _pattern_doc(pattern: PatternSpec | None) -> dict[str, Any] | None:
    if pattern is None:
        return None
    return {
        "pattern_id": pattern.pattern_id.value,
        "lengths": _pairs(pattern.lengths),
        "char_classes": _pairs(pattern.char_classes),
        "span": list(pattern.span) if pattern.span else None,
        "match_rate": pattern.match_rate,
    }


def _pattern_from_doc(doc: Mapping[str, Any] | None) -> PatternSpec | None:
    if doc is None:
        return None
    span = doc["span"]
    return PatternSpec(
        pattern_id=PatternId(doc["pattern_id"]),
        lengths=tuple((n, c) for n, c in doc["lengths"]),
        char_classes=tuple((k, c) for k, c in doc["char_classes"]),
        span=(span[0], span[1]) if span else None,
        match_rate=doc["match_rate"],
    )


def _profile_doc(profile: FieldProfile) -> dict[str, Any]:
    c = profile.constraints
    return {
        "path": profile.path,
        "kind": profile.kind.value,
        "stats": _stats_doc(profile.stats),
        "constraints": {
            "value_range": list(c.value_range) if c.value_range else None,
            "null_probability": c.null_probability,
            "dependencies": [
                {"path": d.path, "r": d.r, "provenance": d.provenance} for d in c.dependencies
            ],
        },
        "pattern": _pattern_doc(profile.pattern),
        "sizes": _stats_doc(profile.sizes) if profile.sizes else None,
    }


def _profile_from_doc(doc: Mapping[str, Any]) -> FieldProfile:
    c = doc["constraints"]
    value_range = c["value_range"]
    return FieldProfile(
        path=doc["path"],
        kind=Kind(doc["kind"]),
        stats=_stats_from_doc(doc["stats"]),
        constraints=ConstraintSet(
            value_range=(value_range[0], value_range[1]) if value_range else None,
            null_probability=c["null_probability"],
            dependencies=tuple(
                Dependency(d["path"], d["r"], d["provenance"]) for d in c["dependencies"]
            ),
        ),
        pattern=_pattern_from_doc(doc["pattern"]),
        sizes=_stats_from_doc(doc["sizes"]) if doc["sizes"] else None,
    )


def _conditional_doc(table: ConditionalDistribution) -> dict[str, Any]:
    return {
        "controlling": table.controlling,
        "dependent": table.dependent,
        "skipped": table.skipped,
        "marginal": _pairs(table.marginal),
        "rows": [[key, _pairs(row)] for key, row in table.rows.items()],
    }


def _conditional_from_doc(doc: Mapping[str, Any]) -> ConditionalDistribution:
    return ConditionalDistribution(
        controlling=doc["controlling"],
        dependent=doc["dependent"],
        rows={key: tuple((v, c) for v, c in row) for key, row in doc["rows"]},
        marginal=tuple((v, c) for v, c in doc["marginal"]),
        skipped=doc["skipped"],
    )


def model_document(model: DomainModel) -> dict[str, Any]:
    """Plain-data form of a domain model, tagged ``domain-model/v1``."""
    p = model.provenance
    return {
        "format": FORMAT_TAG,
        "root": model.root,
        "provenance": {
            "record_count": p.record_count,
            "skipped_count": p.skipped_count,
            "analyzed_at": p.analyzed_at,
            "schema_fingerprint": p.schema_fingerprint,
        },
        "profiles": [_profile_doc(profile) for profile in model.profiles.values()],
        "conditionals": [_conditional_doc(t) for t in model.conditionals.values()],
    }


def model_from_document(doc: Mapping[str, Any], locator: str = "<document>") -> DomainModel:
    """Inverse of model_document.

    Raises:
        ConfigError: if the document is not a ``domain-model/v1`` document.
    """
    if not isinstance(doc, Mapping) or doc.get("format") != FORMAT_TAG:
        raise ConfigError(f"not a {FORMAT_TAG} document", locator)
    try:
        p = doc["provenance"]
        profiles = [_profile_from_doc(d) for d in doc["profiles"]]
        tables = [_conditional_from_doc(d) for d in doc["conditionals"]]
        return DomainModel(
            root=doc["root"],
            profiles={profile.path: profile for profile in profiles},
            conditionals={(t.controlling, t.dependent): t for t in tables},
            provenance=ModelProvenance(
                record_count=p["record_count"],
                skipped_count=p["skipped_count"],
                analyzed_at=p["analyzed_at"],
                schema_fingerprint=p["schema_fingerprint"],
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed domain model: {exc!r}", locator) from exc


def dumps_domain_model(model: DomainModel) -> str:
    return json.dumps(model_document(model), indent=2, sort_keys=True) + "\n"


def loads_domain_model(text: str, locator: str = "<document>") -> DomainModel:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"domain model is not JSON: {exc}", locator) from exc
    return model_from_document(doc, locator)


def load_domain_model(path: str | Path) -> DomainModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ConfigError("domain model is not valid UTF-8", str(path)) from None
    return loads_domain_model(text, str(path))
