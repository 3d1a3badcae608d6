"""Model-oracle abstraction: wire protocol, subprocess client, synthetic oracle."""

from .base import Backend
from .client import SubprocessBackend
from .protocol import (
    GenerateRequest,
    GenerateResponse,
    PROTOCOL_VERSION,
    ScoreRequest,
    ScoreResponse,
)
from .synthetic import (
    CellRect,
    SyntheticBackend,
    SyntheticModelSpec,
    SyntheticSuite,
    load_suite,
    save_suite,
    synthetic_step_distribution,
)

__all__ = [
    "Backend",
    "SubprocessBackend",
    "GenerateRequest",
    "GenerateResponse",
    "PROTOCOL_VERSION",
    "ScoreRequest",
    "ScoreResponse",
    "CellRect",
    "SyntheticBackend",
    "SyntheticModelSpec",
    "SyntheticSuite",
    "load_suite",
    "save_suite",
    "synthetic_step_distribution",
]
