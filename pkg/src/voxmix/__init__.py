"""voxmix: inter-image and object-level augmentation for volumetric
multi-organ segmentation datasets.

Four strategies (box mixing, object-level augmentation, organ carving,
organ transplantation) over a shared immutable data model, with a
deterministic parallel batch pipeline, an executable anatomy audit, dice
evaluation and a synthetic phantom generator for verification.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402,F401
    AugmentationError,
    DatasetInconsistency,
    EmptyMaskError,
    GenerationError,
    PipelineError,
    PlanningError,
    SchemaViolation,
    UnfillableError,
    VoxmixError,
)
from .model import (  # noqa: E402,F401
    Case,
    CaseEntry,
    DatasetIndex,
    LabelMap,
    LabelSchema,
    OrganStats,
    Volume,
    compute_organ_stats,
    extract_organ_mask,
    labels_from_masks,
)
from .transforms import (  # noqa: E402,F401
    AffineParams,
    BoxMask,
    apply_affine,
    apply_affine_mask,
    cutmix_box,
    fuse,
    integer_shift,
    mask_centroid,
    mask_count,
    sample_cutmix_box,
)
from .inpaint import InpaintParams, erase_organs, inpaint  # noqa: E402,F401
from .strategies import (  # noqa: E402,F401
    AnatoPlan,
    AugProvenance,
    PlanEntry,
    anatomix_apply,
    anatomix_plan,
    carvemix,
    cutmix,
    objectaug,
    replay,
)
from .dataset_io import (  # noqa: E402,F401
    DatasetManifest,
    ManifestCase,
    index_dataset,
    load_manifest,
    read_case,
    read_manifest_case,
    save_manifest,
    write_case,
)
from .phantoms import (  # noqa: E402,F401
    PhantomOrgan,
    PhantomSpec,
    build_phantom_case,
    generate_phantom_dataset,
    small_phantom_spec,
    standard_phantom_spec,
)
from .pipeline import (  # noqa: E402,F401
    AugJob,
    PipelineConfig,
    bench_strategies,
    plan_outputs,
    run,
)
from .audit import AuditReport, audit_case, organ_component_counts, strategy_matrix  # noqa: E402,F401
from .metrics import DiceTable, aggregate, dice, dice_entry, per_organ_means  # noqa: E402,F401
from ._kernels import backend_name  # noqa: E402,F401
