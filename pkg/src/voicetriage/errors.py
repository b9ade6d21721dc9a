"""Exception hierarchy. CLI exit codes: DataError -> 3, NumericError -> 4."""


class VoiceTriageError(Exception):
    pass


class DataError(VoiceTriageError):
    """Malformed inputs, schema violations, broken files."""


class NumericError(VoiceTriageError):
    """Numerical failures: divergence, NaN loss, non-convergence."""


class MalformedWavError(DataError):
    pass


class UnsupportedCodecError(DataError):
    pass


class EmptyAudioError(DataError):
    pass


class ManifestError(DataError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class MissingColumnError(ManifestError):
    pass


class UnknownEnumError(ManifestError):
    def __init__(self, row, field, token):
        self.field = field
        self.token = token
        super(ManifestError, self).__init__(f"row {row}: unknown {field} value {token!r}")
        self.row = row


class DuplicateRecordingIdError(ManifestError):
    pass


class SignalTooShortError(DataError):
    pass


class TooFewCyclesError(DataError):
    pass


class UnvoicedError(DataError):
    pass


class DimensionError(DataError):
    """Fused stage vector width does not match its contract (23 / 22 / 25)."""


class MissingClassError(DataError):
    pass


class VersionMismatchError(DataError):
    pass


class ChecksumError(DataError):
    pass


class TruncatedFileError(DataError):
    pass
