"""Error families for the pipeline.

Every failure raised by this package derives from :class:`OvertileError`.
Each family carries a short machine-parsable tag and a stable CLI exit
code so callers can branch on the kind of failure without string-matching
messages.
"""

from __future__ import annotations


class OvertileError(Exception):
    """Base class for all pipeline errors."""

    family = "error"
    exit_code = 1


class ValidationError(OvertileError):
    """Invalid argument, config value, or violated type invariant."""

    family = "validation"
    exit_code = 2


class MalformedNameError(OvertileError):
    """Cutout name does not match the ``parent|row_col_h_w.ext`` schema."""

    family = "malformed-name"
    exit_code = 3


class FrameMismatchError(OvertileError):
    """Detection supplied in the wrong coordinate frame."""

    family = "frame-mismatch"
    exit_code = 4


class MixedParentError(OvertileError):
    """Tiles from more than one parent image in a single stitch."""

    family = "mixed-parent"
    exit_code = 5


class MixedClassError(OvertileError):
    """More than one class in a single-class evaluation step."""

    family = "mixed-class"
    exit_code = 6


class ImageIOError(OvertileError):
    """Unreadable image or unwritable output location."""

    family = "image-io"
    exit_code = 7


class MissingGsdError(OvertileError):
    """Image lacks the ground-sample-distance sidecar."""

    family = "missing-gsd"
    exit_code = 8


class ProcessFailureError(OvertileError):
    """External detector process exited abnormally."""

    family = "process-failure"
    exit_code = 9

    def __init__(self, message: str, returncode: int | None = None,
                 stderr: str = ""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


class DetectionParseError(OvertileError):
    """Malformed row in a detection or label file; names the line."""

    family = "parse"
    exit_code = 10

    def __init__(self, message: str, path: str = "", line: int | None = None):
        if line is not None:
            message = f"{path or 'input'}:{line}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class UnknownCutoutError(OvertileError):
    """Detection row references a cutout absent from the manifest."""

    family = "unknown-cutout"
    exit_code = 11


class InfeasibleDensityError(OvertileError):
    """Synthetic scene cannot place the requested objects."""

    family = "infeasible-density"
    exit_code = 12


class UpsampleRequiredError(OvertileError):
    """Profile resampling would need to upsample the source image."""

    family = "upsample-required"
    exit_code = 13


class EmptyCurveError(OvertileError):
    """Average precision requested for an empty PR curve."""

    family = "empty-curve"
    exit_code = 14
