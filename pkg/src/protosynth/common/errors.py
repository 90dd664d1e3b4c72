"""Error hierarchy.

Every failure raised by the toolkit is a typed exception that names the
subject it concerns: a message type, a field path, a file, a rule id.
"""


class ProtosynthError(Exception):
    """Base exception for all toolkit failures."""

    def __init__(self, message: str, subject: str | None = None):
        self.subject = subject
        prefix = f"{subject}: " if subject else ""
        super().__init__(f"{prefix}{message}")


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


class SchemaError(ProtosynthError):
    """Descriptor set could not be turned into a schema graph."""


class DescriptorParseError(SchemaError):
    """Malformed FileDescriptorSet bytes.

    ``offset`` is the byte position of the first element that failed to
    decode.
    """

    def __init__(self, message: str, offset: int, subject: str | None = None):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})", subject)


class ResolutionError(SchemaError):
    """A field references a message or enum type absent from the set."""


class UnknownTypeError(SchemaError, LookupError):
    """A message type or field path was looked up and does not exist."""


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


class CorpusError(ProtosynthError):
    """Log corpus is unusable."""


class CorpusQualityError(CorpusError):
    """Too many malformed records in a corpus.

    Raised once the malformed share exceeds the configured threshold
    (50% by default).
    """


# ---------------------------------------------------------------------------
# Configuration and user-supplied documents
# ---------------------------------------------------------------------------


class ConfigError(ProtosynthError, ValueError):
    """Invalid configuration value or document."""


class TemplateError(ConfigError):
    """Template slot or fixed value does not fit the schema."""


class RuleError(ConfigError):
    """Business rule is malformed or targets an unknown field path."""


# ---------------------------------------------------------------------------
# Quality assessment
# ---------------------------------------------------------------------------


class QualityError(ProtosynthError, ValueError):
    """Quality assessment cannot be computed."""


class EmptyDatasetError(QualityError):
    """Dataset has no instances."""


class NoComparableFieldsError(QualityError):
    """Generated and reference datasets share no comparable field path."""


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


class SinkError(ProtosynthError):
    """An output sink failed to accept a record.

    Raised with the underlying OSError chained as the cause.
    """
