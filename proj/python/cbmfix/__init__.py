"""Python access to the intervention pipeline core."""

from ._core import (  # noqa: F401
    DimensionError,
    Error,
    FormatError,
    InvalidArgument,
    IoError,
    StageError,
    ablate,
    build_teacher,
    distillation_grad,
    distillation_loss,
    fit_nmf,
    generate_synth,
    load_matrix,
    run,
    save_matrix,
    select_interventions,
    softmax,
)

__all__ = [name for name in dir() if not name.startswith("_")]
