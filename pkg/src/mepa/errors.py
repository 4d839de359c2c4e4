"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto the
documented process exit codes: 2 = configuration error, 3 = provider error,
4 = data error.
"""

from __future__ import annotations


class MepaError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ConfigError(MepaError):
    """Invalid configuration value or flag combination."""

    exit_code = 2


class ProviderError(MepaError):
    """Transport, auth, or protocol failure talking to an external provider."""

    exit_code = 3


class DataError(MepaError):
    """Malformed or inconsistent input data."""

    exit_code = 4


# -- vector geometry ---------------------------------------------------------

class ZeroVector(DataError):
    """Vector norm too small to normalize."""


class NonFinite(DataError):
    """Vector contains NaN or infinity."""


class DimMismatch(DataError):
    """Operands have different embedding dimensions."""


# -- knowledge store ---------------------------------------------------------

class ParseError(DataError):
    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class DuplicateId(DataError):
    def __init__(self, entry_id: str):
        super().__init__(f"duplicate id {entry_id!r}")
        self.entry_id = entry_id


class BadMagic(DataError):
    """Embedding file does not start with the expected magic bytes."""


class TruncatedFile(DataError):
    """Embedding file ended mid-header or mid-record."""


class DimZero(DataError):
    """Embedding file declares dimension 0."""


class MissingVector(DataError):
    def __init__(self, entry_id: str, which: str):
        super().__init__(f"no {which} vector for entry {entry_id!r}")
        self.entry_id = entry_id
        self.which = which


class UnresolvedKb(DataError):
    """Operation requires a knowledge base with embeddings attached."""


class MissingParaphrase(DataError):
    def __init__(self, query_id: str):
        super().__init__(f"query {query_id!r} has no paraphrase embedding")
        self.query_id = query_id


class UnknownScopeId(DataError):
    def __init__(self, query_id: str, entry_id: str):
        super().__init__(f"query {query_id!r} scopes unknown entry {entry_id!r}")
        self.query_id = query_id
        self.entry_id = entry_id


# -- attack ------------------------------------------------------------------

class NoFeasibleCandidate(DataError):
    """No candidate passes the cohesion threshold."""

    def __init__(self, max_cohesion: float, tau: float):
        super().__init__(
            f"no feasible candidate: max cohesion {max_cohesion:.6f} < tau {tau:.6f}"
        )
        self.max_cohesion = max_cohesion
        self.tau = tau


class MissingTargetAnswer(DataError):
    def __init__(self, query_id: str):
        super().__init__(f"query {query_id!r} has no target answer to inject")
        self.query_id = query_id


# -- providers ---------------------------------------------------------------

class ParseFailure(ProviderError):
    """Provider response did not parse; raw response retained."""

    def __init__(self, reason: str, raw: str):
        super().__init__(reason)
        self.raw = raw


class CountMismatch(ProviderError):
    """Provider returned fewer items than requested."""

    def __init__(self, expected: int, got: int, raw: str = ""):
        super().__init__(f"expected {expected} items, got {got}")
        self.expected = expected
        self.got = got
        self.raw = raw


class EmptyResponse(ProviderError):
    """Provider returned an empty string."""


class DimInconsistent(ProviderError):
    """Embedding provider returned vectors of mixed dimension."""


# -- evaluation --------------------------------------------------------------

class EmptyRun(DataError):
    """Metric requested over an empty set of query outcomes."""


class NoPoisonedQueries(DataError):
    """Attack success rate requested but no query carries an injected poison."""
