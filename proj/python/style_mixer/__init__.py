"""Multi-style transfer with patch attention and region-based style fusion.

Images are ``H x W x 3`` float32 arrays in ``[0, 1]``; feature maps are
``C x H x W`` float64 arrays.
"""

from ._core import (
    Encoder,
    Error,
    Model,
    NonFiniteError,
    ShapeError,
    assign_styles,
    assign_styles_discrete,
    cluster,
    confidence,
    contextual_loss,
    load_image,
    psnr,
    save_png,
    train,
    unfold_patches,
)

__all__ = [
    "Encoder",
    "Error",
    "Model",
    "NonFiniteError",
    "ShapeError",
    "assign_styles",
    "assign_styles_discrete",
    "cluster",
    "confidence",
    "contextual_loss",
    "load_image",
    "psnr",
    "save_png",
    "train",
    "unfold_patches",
]
