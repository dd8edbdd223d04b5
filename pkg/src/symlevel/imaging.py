"""Planar rotation acting on raster images.

Convention: a positive angle rotates the image CONTENT counterclockwise (as
displayed with row 0 at the top), about the pixel center ((H-1)/2, (W-1)/2).
Samples falling outside the input are filled with 0. Bilinear interpolation is
the default; nearest is kept for exactness tests (90-degree multiples on a
square image reduce to an index permutation).

The tensor-level entry point `rotate_tensor` is differentiable with respect to
both the image intensities and the rotation angles.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

_MODES = ("nearest", "bilinear")


def rotation_grid(
    angles_deg: torch.Tensor, height: int, width: int, *, dtype=torch.float32
) -> torch.Tensor:
    """Sampling grid for `torch.nn.functional.grid_sample` (align_corners=True).

    angles_deg: (B,) tensor; output (B, H, W, 2) with (x, y) normalized coords.
    Built from the angle tensor, so gradients flow through the grid.
    """
    if angles_deg.ndim != 1:
        raise ValueError(f"angles must be a 1-d tensor, got shape {tuple(angles_deg.shape)}")
    theta = angles_deg.to(dtype) * (math.pi / 180.0)
    cos = torch.cos(theta).view(-1, 1, 1)
    sin = torch.sin(theta).view(-1, 1, 1)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    vs = torch.arange(height, dtype=dtype).view(1, -1, 1) - cy  # row offset, down
    us = torch.arange(width, dtype=dtype).view(1, 1, -1) - cx   # col offset, right
    # inverse map: output pixel (u, v) samples the input at R(-angle) (u, v)
    u_in = us * cos - vs * sin
    v_in = us * sin + vs * cos
    x_norm = (u_in + cx) * (2.0 / max(width - 1, 1)) - 1.0
    y_norm = (v_in + cy) * (2.0 / max(height - 1, 1)) - 1.0
    return torch.stack([x_norm, y_norm], dim=-1)


def rotate_tensor(
    images: torch.Tensor, angles_deg: torch.Tensor, interpolation: str = "bilinear"
) -> torch.Tensor:
    """Rotate a batch of images (B, C, H, W) by per-sample angles in degrees."""
    if interpolation not in _MODES:
        raise ValueError(f"unknown interpolation mode {interpolation!r}")
    if images.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got shape {tuple(images.shape)}")
    b, _, h, w = images.shape
    if angles_deg.numel() != b:
        raise ValueError(f"batch size {b} != number of angles {angles_deg.numel()}")
    grid = rotation_grid(angles_deg.reshape(-1), h, w, dtype=images.dtype)
    return F.grid_sample(
        images, grid, mode=interpolation, padding_mode="zeros", align_corners=True
    )


def rotate_image(img: np.ndarray, angle_deg: float, interpolation: str = "bilinear") -> np.ndarray:
    """Rotate a single image given as (H, W) or (C, H, W) float array."""
    if img.size == 0:
        raise ValueError("cannot rotate an empty image")
    squeeze = img.ndim == 2
    arr = img[None, :, :] if squeeze else img
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got shape {img.shape}")
    with torch.no_grad():
        t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[None]
        out = rotate_tensor(t, torch.tensor([float(angle_deg)]), interpolation)[0]
    result = out.numpy()
    return result[0] if squeeze else result


def rotate_batch(
    imgs, angles_deg, interpolation: str = "bilinear"
) -> list[np.ndarray]:
    """Elementwise rotate_image over parallel sequences of images and angles."""
    imgs = list(imgs)
    angles = [float(a) for a in angles_deg]
    if len(imgs) != len(angles):
        raise ValueError(f"{len(imgs)} images but {len(angles)} angles")
    return [rotate_image(img, a, interpolation) for img, a in zip(imgs, angles)]


def interior_mask(height: int, width: int, radius_fraction: float = 0.7) -> np.ndarray:
    """Boolean mask of pixels within radius_fraction of the inscribed half-size.

    Used to compare rotations away from the corner fill region.
    """
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width]
    r = np.hypot(ys - cy, xs - cx)
    return r <= radius_fraction * min(height, width) / 2.0
