"""Output sinks and dataset readers.

Sinks take generated instances one at a time. File sinks write into a
temporary file beside the target and move it into place only when closed
without error; binary outputs also get a ``<file>.type`` sidecar naming
the message type.
"""

from __future__ import annotations

import io
import json
import logging
import os
import tempfile
from collections.abc import Iterator
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from types import TracebackType
from typing import IO, Any, BinaryIO, Protocol, TextIO

from google.protobuf import json_format

from protosynth.common.errors import ConfigError, CorpusError, SinkError
from protosynth.common.types import SchemaGraph
from protosynth.common.wire import read_delimited, write_delimited
from protosynth.domain_analyzer import TYPE_SIDECAR_SUFFIX, read_type_sidecar

logger = logging.getLogger(__name__)

MAX_JSON_ARRAY = 100_000


class OutputFormat(Enum):
    """Dataset encodings."""
    PB = "pb"
    NDJSON = "ndjson"
    JSON = "json"


def parse_output_format(fmt: str | OutputFormat) -> OutputFormat:
    try:
        return OutputFormat(fmt)
    except ValueError:
        raise ConfigError(f"unknown output format '{fmt}'") from None


class Sink(Protocol):
    """Receiver of generated instances."""

    def write(self, instance: Any) -> None: ...

    def flush(self) -> None: ...


@contextmanager
def _io_guard(locator: str) -> Iterator[None]:
    try:
        yield
    except OSError as exc:
        raise SinkError(f"write failed ({exc.strerror or exc})", locator) from exc


def record_document(instance: Any) -> dict[str, Any]:
    """``{"type", "payload"}`` object with canonical protobuf-JSON payload."""
    return {
        "type": instance.DESCRIPTOR.full_name,
        "payload": json_format.MessageToDict(instance),
    }


# ---------------------------------------------------------------------------
# Stream sinks
# ---------------------------------------------------------------------------


class DelimitedSink:
    """Length-delimited binary protobuf records."""

    def __init__(self, stream: BinaryIO, locator: str = "<stream>"):
        self.stream = stream
        self.locator = locator
        self.count = 0

    def write(self, instance: Any) -> None:
        with _io_guard(self.locator):
            write_delimited(self.stream, instance.SerializeToString(deterministic=True))
        self.count += 1

    def flush(self) -> None:
        with _io_guard(self.locator):
            self.stream.flush()

    def close(self) -> None:
        self.flush()


class NdjsonSink:
    """One ``{"type", "payload"}`` JSON object per line."""

    def __init__(self, stream: TextIO, locator: str = "<stream>"):
        self.stream = stream
        self.locator = locator
        self.count = 0

    def write(self, instance: Any) -> None:
        line = json.dumps(record_document(instance), sort_keys=True, ensure_ascii=False)
        with _io_guard(self.locator):
            self.stream.write(line + "\n")
        self.count += 1

    def flush(self) -> None:
        with _io_guard(self.locator):
            self.stream.flush()

    def close(self) -> None:
        self.flush()


class JsonArraySink:
    """A single JSON array, written on close.

    Raises:
        SinkError: once more than ``limit`` instances are written.
    """

    def __init__(self, stream: TextIO, locator: str = "<stream>", limit: int = MAX_JSON_ARRAY):
        self.stream = stream
        self.locator = locator
        self.limit = limit
        self.documents: list[dict[str, Any]] = []

    @property
    def count(self) -> int:
        return len(self.documents)

    def write(self, instance: Any) -> None:
        if len(self.documents) >= self.limit:
            raise SinkError(
                f"JSON array output holds at most {self.limit} instances; use ndjson or pb",
                self.locator,
            )
        self.documents.append(record_document(instance))

    def flush(self) -> None:
        pass

    def close(self) -> None:
        with _io_guard(self.locator):
            json.dump(self.documents, self.stream, indent=2, sort_keys=True, ensure_ascii=False)
            self.stream.write("\n")
            self.stream.flush()


class MemorySink(DelimitedSink):
    """Delimited records kept in memory."""

    def __init__(self) -> None:
        super().__init__(io.BytesIO(), "<memory>")

    def getvalue(self) -> bytes:
        assert isinstance(self.stream, io.BytesIO)
        return self.stream.getvalue()


# ---------------------------------------------------------------------------
# File sinks
# ---------------------------------------------------------------------------


def write_text_atomic(path: str | Path, text: str) -> None:
    """Replace ``path`` with ``text`` through a temporary sibling file."""
    path = Path(path)
    with tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=path.parent, prefix=f".{path.name}.", delete=False
    ) as tmp:
        tmp.write(text)
    os.replace(tmp.name, path)


class FileSink:
    """Context manager writing one dataset file atomically.

    Args:
        path: Final output path.
        fmt: Output encoding.
        type_name: Message type, written to the sidecar of ``pb`` outputs.
    """

    def __init__(self, path: str | Path, fmt: str | OutputFormat, type_name: str):
        self.path = Path(path)
        self.fmt = parse_output_format(fmt)
        self.type_name = type_name
        self._tmp: IO[Any] | None = None
        self._sink: DelimitedSink | NdjsonSink | JsonArraySink | None = None

    @property
    def count(self) -> int:
        return self._sink.count if self._sink is not None else 0

    def __enter__(self) -> FileSink:
        locator = str(self.path)
        binary = self.fmt is OutputFormat.PB
        with _io_guard(locator):
            self._tmp = tempfile.NamedTemporaryFile(
                "wb" if binary else "w",
                encoding=None if binary else "utf-8",
                dir=self.path.parent,
                prefix=f".{self.path.name}.",
                delete=False,
            )
        match self.fmt:
            case OutputFormat.PB:
                self._sink = DelimitedSink(self._tmp, locator)  # type: ignore[arg-type]
            case OutputFormat.NDJSON:
                self._sink = NdjsonSink(self._tmp, locator)  # type: ignore[arg-type]
            case OutputFormat.JSON:
                self._sink = JsonArraySink(self._tmp, locator)  # type: ignore[arg-type]
        return self

    def write(self, instance: Any) -> None:
        assert self._sink is not None
        self._sink.write(instance)

    def flush(self) -> None:
        assert self._sink is not None
        self._sink.flush()

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        assert self._tmp is not None and self._sink is not None
        tmp_name = self._tmp.name
        try:
            if exc_type is None:
                self._sink.close()
            self._tmp.close()
        except (OSError, SinkError):
            Path(tmp_name).unlink(missing_ok=True)
            if exc_type is None:
                raise
            return
        if exc_type is not None:
            Path(tmp_name).unlink(missing_ok=True)
            return
        with _io_guard(str(self.path)):
            os.replace(tmp_name, self.path)
            if self.fmt is OutputFormat.PB:
                sidecar = Path(f"{self.path}{TYPE_SIDECAR_SUFFIX}")
                write_text_atomic(sidecar, self.type_name + "\n")
        logger.info("wrote %d %s records to %s", self._sink.count, self.fmt.value, self.path)


def open_sink(path: str | Path, fmt: str | OutputFormat, type_name: str) -> FileSink:
    """File sink for ``path``; use it as a context manager."""
    return FileSink(path, fmt, type_name)


# ---------------------------------------------------------------------------
# Dataset reading
# ---------------------------------------------------------------------------


def _parse_document(doc: Any, schema: SchemaGraph) -> tuple[str, Any] | None:
    try:
        type_name = doc["type"]
        instance = schema.message_class(type_name)()
        json_format.ParseDict(doc["payload"], instance)
    except (KeyError, TypeError, LookupError, json_format.ParseError):
        return None
    return type_name, instance


def read_dataset(
    path: str | Path, fmt: str | OutputFormat, schema: SchemaGraph
) -> tuple[str | None, list[Any]]:
    """Load a dataset written by a sink.

    Items that cannot be decoded are kept in raw form (payload bytes for
    ``pb``, the offending text or object otherwise) so structural validation
    counts them as invalid.

    Returns:
        The message type (None if no item names one) and the items.

    Raises:
        OSError: if the file cannot be read.
        CorpusError: if a ``pb`` dataset has no type sidecar.
    """
    fmt = parse_output_format(fmt)
    path = Path(path)
    if fmt is OutputFormat.PB:
        type_name = read_type_sidecar(path)
        items: list[Any] = []
        with path.open("rb") as stream:
            try:
                items.extend(read_delimited(stream))
            except CorpusError as exc:
                logger.warning("%s: %s", path, exc)
                items.append(exc)
        return type_name, items

    data = path.read_bytes()
    raw: list[Any]
    if fmt is OutputFormat.JSON:
        try:
            loaded = json.loads(data.decode("utf-8"))
        except ValueError as exc:
            raise CorpusError(f"not a JSON array ({exc})", str(path)) from None
        raw = loaded if isinstance(loaded, list) else [loaded]
    else:
        raw = []
        for line_no, line in enumerate(data.splitlines(), 1):
            if not line.strip():
                continue
            try:
                text = line.decode("utf-8")
            except UnicodeDecodeError:
                logger.warning("%s:%d: not valid UTF-8", path, line_no)
                raw.append(CorpusError(f"line {line_no} is not valid UTF-8", str(path)))
                continue
            try:
                raw.append(json.loads(text))
            except ValueError:
                raw.append(text)
    found: str | None = None
    items = []
    for doc in raw:
        parsed = _parse_document(doc, schema)
        if parsed is None:
            items.append(doc)
            continue
        found = found or parsed[0]
        items.append(parsed[1])
    return found, items
