"""Exception hierarchy for the augmentation engine."""


class VoxmixError(Exception):
    """Base class for all engine errors."""


class SchemaViolation(VoxmixError):
    """A label value or schema constraint was violated."""


class DatasetInconsistency(VoxmixError):
    """Cases in one dataset disagree on grid shape, spacing or orientation."""


class GenerationError(VoxmixError):
    """Phantom dataset generation could not satisfy its spec."""


class EmptyMaskError(VoxmixError):
    """An operation needing a nonempty mask received an empty one."""


class UnfillableError(VoxmixError):
    """Inpainting hole covers the entire grid."""


class PlanningError(VoxmixError):
    """Augmentation or pipeline planning failed."""


class AugmentationError(VoxmixError):
    """A strategy could not produce its output."""


class PipelineError(VoxmixError):
    """A batch run aborted; partial outputs are retained."""
