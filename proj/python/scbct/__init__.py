"""Sparse-view cone-beam CT reconstruction toolkit."""

from ._core import (
    GridSpec,
    ProjectionSet,
    ScannerGeometry,
    TrainConfig,
    Volume,
    cube_phantom,
    fdk,
    load_geometry,
    load_projection_set,
    load_train_config,
    load_volume,
    psnr_db,
    reconstruct,
    render_drr,
    render_projections,
    sample_view_angles,
    sart,
    save_geometry,
    save_projection_set,
    save_train_config,
    save_volume,
    set_thread_count,
    shell_phantom,
    sphere_phantom,
    ssim,
    train,
    write_center_slices,
)

__all__ = [
    "GridSpec",
    "ProjectionSet",
    "ScannerGeometry",
    "TrainConfig",
    "Volume",
    "cube_phantom",
    "fdk",
    "load_geometry",
    "load_projection_set",
    "load_train_config",
    "load_volume",
    "psnr_db",
    "reconstruct",
    "render_drr",
    "render_projections",
    "sample_view_angles",
    "sart",
    "save_geometry",
    "save_projection_set",
    "save_train_config",
    "save_volume",
    "set_thread_count",
    "shell_phantom",
    "sphere_phantom",
    "ssim",
    "train",
    "write_center_slices",
]

__version__ = "0.1.0"
