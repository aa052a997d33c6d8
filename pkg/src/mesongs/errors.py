"""Exception types shared across the codec.

Argument misuse raises plain ValueError; file-system trouble propagates as
OSError. Everything that depends on the *content* of external data gets one
of the classes below so callers can map failures to exit codes.
"""


class FormatError(Exception):
    """Structurally invalid input (bad magic, missing PLY property, ...)."""


class DataError(Exception):
    """Well-formed input carrying unusable values (NaN/Inf payloads, ...)."""


class CorruptStreamError(Exception):
    """Compressed stream fails validation (CRC, truncation, bad indices)."""


class PipelineError(Exception):
    """Encode pipeline reached an unrecoverable state (e.g. empty cloud)."""
