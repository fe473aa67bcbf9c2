"""Foveated 8x video super-resolution: tensor ops, gaze traces, metrics and
the recurrent model, backed by the C++ core."""

from ._core import (
    Error,
    FovBox,
    GazeTrace,
    Model,
    bicubic_resize,
    bilinear_resize,
    charbonnier,
    clamp_crop,
    conv2d,
    dcn_lite,
    evaluate,
    horizontal_trajectory,
    leaky_relu,
    load_trace,
    masked_psnr,
    masked_ssim,
    pixel_shuffle_up,
    pixel_unshuffle_down,
    raster_trajectory,
    read_image,
    save_trace,
    ssim_map,
    synth_clip,
    tracker_trajectory,
    train,
    warp_bilinear,
    write_image,
)

__all__ = [
    "Error",
    "FovBox",
    "GazeTrace",
    "Model",
    "bicubic_resize",
    "bilinear_resize",
    "charbonnier",
    "clamp_crop",
    "conv2d",
    "dcn_lite",
    "evaluate",
    "horizontal_trajectory",
    "leaky_relu",
    "load_trace",
    "masked_psnr",
    "masked_ssim",
    "pixel_shuffle_up",
    "pixel_unshuffle_down",
    "raster_trajectory",
    "read_image",
    "save_trace",
    "ssim_map",
    "synth_clip",
    "tracker_trajectory",
    "train",
    "warp_bilinear",
    "write_image",
]
