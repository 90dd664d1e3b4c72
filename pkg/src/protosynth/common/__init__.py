"""Common types, errors, framing and value extraction."""

from protosynth.common.errors import (
    ConfigError,
    CorpusError,
    CorpusQualityError,
    DescriptorParseError,
    EmptyDatasetError,
    NoComparableFieldsError,
    ProtosynthError,
    QualityError,
    ResolutionError,
    RuleError,
    SchemaError,
    SinkError,
    TemplateError,
    UnknownTypeError,
)
from protosynth.common.types import (
    AnalysisConfig,
    Cardinality,
    CycleStrategy,
    DomainModel,
    FieldInfo,
    FieldPath,
    GenerationConfig,
    Kind,
    QualityConfig,
    QualityReport,
    SchemaGraph,
    Strategy,
)

__all__ = [
    "AnalysisConfig",
    "Cardinality",
    "ConfigError",
    "CorpusError",
    "CorpusQualityError",
    "CycleStrategy",
    "DescriptorParseError",
    "DomainModel",
    "EmptyDatasetError",
    "FieldInfo",
    "FieldPath",
    "GenerationConfig",
    "Kind",
    "NoComparableFieldsError",
    "ProtosynthError",
    "QualityConfig",
    "QualityError",
    "QualityReport",
    "ResolutionError",
    "RuleError",
    "SchemaError",
    "SchemaGraph",
    "SinkError",
    "Strategy",
    "TemplateError",
    "UnknownTypeError",
]
