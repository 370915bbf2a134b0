"""Domain exceptions shared across the toolkit."""


class PartSegError(Exception):
    """Base class for all domain errors; the CLI maps these to exit code 1."""


class ParseError(PartSegError):
    """Input file is malformed or uses an unsupported variant."""


class EmptyMesh(PartSegError):
    """Mesh has no faces (or no non-degenerate faces where sampling needs one)."""


class KTooLarge(PartSegError):
    """Asked for more samples than there are points."""


class EmptyDataset(PartSegError):
    """Training requested on an empty dataset."""


class FeatureMismatch(PartSegError):
    """Per-point features do not belong to the given cloud."""


class FaceCountMismatch(PartSegError):
    """Two annotations being compared label different numbers of faces."""


class NoLabeledSeed(PartSegError):
    """Flood fill was started with no labeled face at all."""


class EmptyCandidate(PartSegError):
    """A prompt produced no nonempty candidate mask."""
