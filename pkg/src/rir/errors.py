"""Exception hierarchy shared across the package."""


class RirError(Exception):
    """Base class for all package errors."""


# --- datasets ---------------------------------------------------------------

class ParseError(RirError):
    """A manifest or fixture file could not be parsed or failed validation."""


class InsufficientSamples(RirError):
    """A sampling plan requested more samples than a pool contains."""


class ResolutionFailure(RirError):
    """An entity id could not be resolved to a name."""


# --- retrieval --------------------------------------------------------------

class ProviderError(RirError):
    """Base class for search-provider failures."""


class ProviderTimeout(ProviderError):
    """The provider did not produce results within its deadline."""


class NavigationFailure(ProviderError):
    """The live provider's browser session failed to reach the results page."""


class UnknownImage(ProviderError):
    """The fixture provider has no manifest row for the query image's hash."""


class TooManyEntries(RirError):
    """More result entries than the layout grid can place."""


class UndecodableImage(RirError):
    """An image reference did not decode to a usable image."""


# --- prompt composition -----------------------------------------------------

class MissingCapture(RirError):
    """A retrieval-augmented condition was composed without a capture."""


class MissingEntity(RirError):
    """The oracle-entity condition was composed without an entity name."""


class EmptyField(RirError):
    """A required text field was empty or whitespace-only."""


# --- backends ---------------------------------------------------------------

class BackendError(RirError):
    """Base class for chat-backend failures."""


class AuthError(BackendError):
    """Authentication rejected (401/403) or no token available; never retried."""


class RateLimited(BackendError):
    """Rate-limit responses persisted through every allowed retry."""


class MalformedResponse(BackendError):
    """The backend reply could not be interpreted as an answer."""


class FixtureMiss(MalformedResponse):
    """The scripted backend has no reply for the requested key."""


class UnparseableVerdict(BackendError):
    """A judge reply contained neither verdict token."""


# --- metrics / analysis -----------------------------------------------------

class EmptyInput(RirError):
    """An aggregate operation received no data."""


class MalformedGroundTruth(RirError):
    """A ground-truth binomial did not have exactly two tokens."""


class KeyMismatch(RirError):
    """Two outcome maps do not cover the same sample ids."""


class NonPositiveCount(RirError):
    """Web-presence counts must be positive before the log transform."""


class MissingCondition(RirError):
    """A relative-change report was requested without its baseline condition."""


# --- persistence / configuration --------------------------------------------

class StoreCorrupt(RirError):
    """The run store contains a line that is not a valid record."""


class ConfigError(RirError):
    """The run configuration is invalid or incomplete."""
