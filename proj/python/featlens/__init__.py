"""Python surface of the feature-lens toolkit's native kernels."""

from ._featlens import (
    bilinear_resize,
    bin_angle,
    conv2d,
    dual_rotate_features,
    mae_loss,
    mse_loss,
    pearson,
    regress_corr_accuracy,
    rotate_image,
    self_attentive_sum,
    tac_loss,
    topk_locations,
    transposed_conv2d,
)

__all__ = [
    "bilinear_resize",
    "bin_angle",
    "conv2d",
    "dual_rotate_features",
    "mae_loss",
    "mse_loss",
    "pearson",
    "regress_corr_accuracy",
    "rotate_image",
    "self_attentive_sum",
    "tac_loss",
    "topk_locations",
    "transposed_conv2d",
]
