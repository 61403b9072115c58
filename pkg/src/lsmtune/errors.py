"""Exception hierarchy shared across the package."""


class LsmTuneError(Exception):
    """Base class for all package-specific errors."""


# trace
class UnreadableSource(LsmTuneError):
    pass


class FormatError(LsmTuneError):
    """Malformed trace input beyond the tolerated fraction."""


class InvalidWindow(LsmTuneError):
    pass


class EmptyTrace(LsmTuneError):
    pass


# characterize
class TooFewSamples(LsmTuneError):
    pass


class FitFailure(LsmTuneError):
    """Every candidate family failed to produce a usable fit."""


class LengthMismatch(LsmTuneError):
    pass


class UnparseableSuggestion(LsmTuneError):
    """A single advisor suggestion line could not be interpreted."""


# workload
class SchemaError(LsmTuneError):
    """Invalid workload spec JSON; carries the offending path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class UnsupportedFamily(LsmTuneError):
    pass


# engine
class OptionsParseError(LsmTuneError):
    """Options file syntax error; carries the line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateOption(OptionsParseError):
    pass


class EngineOpenError(LsmTuneError):
    pass


class ImmutableOptionError(LsmTuneError):
    pass


class EngineIoError(LsmTuneError):
    pass


class EngineFailure(LsmTuneError):
    """An engine operation failed mid-benchmark."""


# bench
class EmptyHistogram(LsmTuneError):
    pass


class IntrospectionUnavailable(LsmTuneError):
    pass


# advisor
class AdvisorUnavailable(LsmTuneError):
    """Backend could not produce a response (after retries, if remote)."""


class AuthError(AdvisorUnavailable):
    pass


class ContextIncomplete(LsmTuneError):
    pass
