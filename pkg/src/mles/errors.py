"""Exception types shared across the engine.

Names follow the operation contracts; callers are expected to catch the
specific class, so none of these should be raised for conditions outside
their documented trigger.
"""

from __future__ import annotations


class MlesError(Exception):
    """Base class for all engine errors."""


# core model -----------------------------------------------------------------

class EmptyCode(MlesError):
    """Policy source is empty or consists only of whitespace."""


class SequenceGap(MlesError):
    """Ledger event sequence number does not continue the ledger."""


# policy pool ----------------------------------------------------------------

class EmptyPool(MlesError):
    """Selection requested from an empty pool."""


class UnevaluatedCandidate(MlesError):
    """Candidate without populated metrics offered for admission."""


# operators ------------------------------------------------------------------

class ArityMismatch(MlesError):
    """Parent count does not match the operator's arity."""


class MissingIBE(MlesError):
    """Operator requires behavioral evidence and none was supplied."""


class MissingThought(MlesError):
    """Response contains no braced thought span."""


class MissingCode(MlesError):
    """Response contains neither a code fence nor an entry-point definition."""


class MissingSection(MlesError):
    """Response lacks a section the operator's template demands."""

    def __init__(self, name: str):
        super().__init__(f"missing required section: {name}")
        self.name = name


# gateway --------------------------------------------------------------------

class BudgetExhausted(MlesError):
    """A reservation would exceed the configured budget cap."""


class EndpointFailure(MlesError):
    """An endpoint failed for one slot after exhausting retries."""


class ImageUnsupported(MlesError):
    """Bundle carries images but no capable endpoint is configured."""


# eval bridge ----------------------------------------------------------------

class DomainError(MlesError):
    """Metric argument outside its documented domain."""


class MixedTask(MlesError):
    """Per-instance metrics from different tasks aggregated together."""


class EvaluatorCrashed(MlesError):
    """Evaluator subprocess exited or its pipe closed mid-request."""


class EvaluatorTimeout(MlesError):
    """Evaluator did not answer within the wall-clock limit."""


Timeout = EvaluatorTimeout


class AggregateMismatch(MlesError):
    """Evaluator-reported aggregate disagrees with local recomputation."""


# orchestrator ---------------------------------------------------------------

class AllSeedsFailed(MlesError):
    """Every seed policy errored during initial evaluation."""


class SchemaMismatch(MlesError):
    """Checkpoint schema version is not the one this build reads."""


class CorruptCheckpoint(MlesError):
    """Checkpoint content hash does not match its payload."""


class ConfigError(MlesError):
    """run.toml is missing, malformed, or fails validation."""
