"""Image ingestion, manifests and post-processing transforms."""

from .dataset import ImageDataset
from .images import (
    center_crop,
    decode_image,
    decode_ppm_bytes,
    encode_ppm,
    resize_bilinear,
    save_grayscale_png,
)
from .manifest import (
    GENERATED,
    PHOTO,
    SPLITS,
    DatasetManifest,
    ImageRecord,
    load_manifest,
    make_split,
    save_manifest,
)
from .transforms import (
    TRANSFORM_KINDS,
    TransformSpec,
    apply_transform,
    blur,
    default_transforms,
    enhance,
    gaussian_taps,
    luma,
    resolve_transform,
    rotate,
    sample_transform,
)

__all__ = [
    'decode_image',
    'decode_ppm_bytes',
    'encode_ppm',
    'save_grayscale_png',
    'resize_bilinear',
    'center_crop',
    'ImageRecord',
    'DatasetManifest',
    'PHOTO',
    'GENERATED',
    'SPLITS',
    'load_manifest',
    'make_split',
    'save_manifest',
    'TRANSFORM_KINDS',
    'TransformSpec',
    'enhance',
    'luma',
    'rotate',
    'blur',
    'gaussian_taps',
    'sample_transform',
    'resolve_transform',
    'apply_transform',
    'default_transforms',
    'ImageDataset',
]
