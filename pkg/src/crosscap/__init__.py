"""Caption hallucination correction and enhancement pipeline.

Model inference is delegated to pluggable backends (JSON-over-HTTP or
deterministic fixtures); every decision rule is testable offline.
"""

__version__ = "0.1.0"

from .gateway import (
    BackendEndpoint,
    BackendRole,
    BinaryAnswer,
    BinaryValue,
    DetectionCandidate,
    Gateway,
    TransportKind,
    parse_binary_answer,
)

__all__ = [
    "__version__",
    "BackendEndpoint",
    "BackendRole",
    "BinaryAnswer",
    "BinaryValue",
    "DetectionCandidate",
    "Gateway",
    "TransportKind",
    "parse_binary_answer",
]
