"""Exception hierarchy shared by all voxpart modules.

Every error carries a short machine-readable ``category`` used by the CLI
to print one-line diagnostics and pick exit codes.
"""


class VoxpartError(Exception):
    category = "error"


class ShapeError(VoxpartError):
    """Tensor dimension mismatch; message lists both dim tuples."""

    category = "shape-error"


class ArgumentError(VoxpartError):
    category = "argument-error"


class DegenerateInputError(VoxpartError):
    """Input is structurally valid but carries no usable signal
    (empty mesh, zero occupied voxels, single-class dataset, ...)."""

    category = "degenerate-input"


class MeshParseError(VoxpartError):
    """OBJ parse failure; remembers the 1-based source line."""

    category = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VoxelFormatError(VoxpartError):
    """Voxel file decode failure; remembers the byte offset."""

    category = "format-error"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"byte {offset}: {message}"
        super().__init__(message)
        self.offset = offset


class DatasetError(VoxpartError):
    category = "dataset-error"


class CheckpointError(VoxpartError):
    """Checkpoint/manifest load failure or config mismatch."""

    category = "checkpoint-error"

    def __init__(self, message: str, differing_keys: tuple[str, ...] = ()):
        if differing_keys:
            message = f"{message}: {', '.join(differing_keys)}"
        super().__init__(message)
        self.differing_keys = differing_keys


class ConfigError(VoxpartError):
    category = "config-error"


class NoPartError(VoxpartError):
    """A shape has no salient voxels above threshold where one is required."""

    category = "no-part"
