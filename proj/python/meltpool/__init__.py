"""Melt-pool segmentation core: imaging, corrections, geometry and the training workflow."""

import json as _json

from ._core import (
    Conflict,
    CorrectionError,
    FitError,
    InvalidInput,
    IoError,
    ManifestError,
    NotFound,
    ReviewPending,
    Workflow,
    apply_corrections,
    count_regions,
    decode_overlay,
    downscale,
    encode_overlay,
    fit_half_ellipse,
    generate_scene,
    mask_statistics,
    pixel_accuracy,
    read_mask_png,
    read_png,
    region_mask,
    seed_annotation,
    ssim,
    write_mask_png,
    write_png,
)

BACKGROUND, BOUNDARY, DEFECT = 0, 1, 2


def statistics(masks):
    """Pool statistics over class masks, parsed into a dict."""
    return _json.loads(mask_statistics(list(masks)))


__all__ = [name for name in dir() if not name.startswith("_")]
