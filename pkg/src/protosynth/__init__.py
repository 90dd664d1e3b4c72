"""protosynth: schema-driven test data generation for Protocol Buffers.

Profiles a corpus of messages into a statistical domain model, generates
structurally valid and statistically realistic datasets from it, and
scores generated data against the corpus.
"""

__version__ = "0.1.0"
