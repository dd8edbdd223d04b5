"""Learnable components built on group-lifting convolutions over C_K.

The backbone correlates inputs with K rotated copies of each filter, producing
feature maps with an explicit group axis: rotating the input by 360/K cyclically
shifts that axis (up to filter-rotation interpolation error; exactly, for
nearest-mode rotation at 90-degree multiples).

Components:
  EncoderEta     invariant encoder (group-mean + spatial-mean pooling)
  DecoderDelta   conventional upsampling decoder, sigmoid output in [0, 1]
  PsiEstimator   group-action estimator: per-position scores -> softmax-weighted
                 circular mean -> angle readout
  BoundaryTheta  invariant backbone + fully connected head predicting the
                 symmetry level (softplus scalar, or logits over cyclic orders)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import rotation_grid
from .persist import read_blob, read_manifest, write_blob, write_manifest

CONTINUOUS_FAMILIES = ("uniform", "gaussian")


@dataclass
class ModelConfig:
    image_size: int = 32
    k_group: int = 16
    d_inv: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 32, 64)
    psi_channels: tuple[int, ...] = (8, 16, 16, 32)
    theta_channels: tuple[int, ...] = (8, 16, 16, 32)
    lift_kernel: int = 5
    group_kernel: int = 3
    group_support: tuple[int, ...] = (-1, 0, 1)
    filter_mode: str = "bicubic"
    family: str = "uniform"
    max_cyclic_order: int = 8

    def __post_init__(self) -> None:
        if self.k_group < 4:
            raise ValueError("group discretization K must be >= 4")
        if self.image_size % 8 != 0 or self.image_size < 16:
            raise ValueError("image size must be a multiple of 8 and >= 16")
        if self.family not in CONTINUOUS_FAMILIES + ("cyclic",):
            raise ValueError(f"unknown family {self.family!r}")
        if self.filter_mode not in ("nearest", "bilinear", "bicubic"):
            raise ValueError(f"unknown filter rotation mode {self.filter_mode!r}")

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in flat:
                continue
            raw = flat[f.name]
            if f.name in ("enc_channels", "psi_channels", "theta_channels", "group_support"):
                kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x != "")
            elif f.name in ("filter_mode", "family"):
                kwargs[f.name] = raw
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def _filter_grids(k_group: int, kernel_size: int) -> torch.Tensor:
    """Sampling grids that rotate a filter CCW by each of the K grid angles."""
    angles = torch.arange(k_group, dtype=torch.float32) * (360.0 / k_group)
    return rotation_grid(angles, kernel_size, kernel_size)


def _rotate_filter_bank(flat: torch.Tensor, grids: torch.Tensor, mode: str,
                        kernel_size: int) -> torch.Tensor:
    """Rotate (1, N, ks, ks) kernels into (K, N, ks, ks) copies."""
    return F.grid_sample(flat.expand(grids.shape[0], -1, -1, -1), grids,
                         mode=mode, padding_mode="zeros", align_corners=True)


def _radial_window(kernel_size: int) -> torch.Tensor:
    """Circular taper on the kernel support.

    Keeps filter mass from rotating in and out of the square support corners,
    which would otherwise dominate the off-grid equivariance error.
    """
    c = (kernel_size - 1) / 2.0
    ys, xs = torch.meshgrid(
        torch.arange(kernel_size, dtype=torch.float32) - c,
        torch.arange(kernel_size, dtype=torch.float32) - c,
        indexing="ij",
    )
    return torch.clamp(c + 0.5 - torch.sqrt(ys * ys + xs * xs), 0.0, 1.0)


@torch.no_grad()
def _smooth_init(weight: torch.Tensor) -> None:
    """Binomial 3x3 blur of freshly initialized kernels, variance preserved.

    Off-grid rotations of high-frequency kernel content are inconsistent across
    the bank, so starting smooth keeps the layer close to its ideal
    equivariance from the first step.
    """
    k = torch.tensor([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
    shape = weight.shape
    flat = weight.reshape(-1, 1, shape[-2], shape[-1])
    blurred = F.conv2d(flat, k.view(1, 1, 3, 3), padding=1)
    blurred *= weight.std() / blurred.std().clamp_min(1e-12)
    weight.copy_(blurred.reshape(shape))


class LiftConv2d(nn.Module):
    """Correlate a planar input with K rotated copies of each filter.

    Input (B, C_in, H, W) -> output (B, C_out, K, H, W). Bias is per output
    channel, constant over the group axis.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 k_group: int, filter_mode: str = "bilinear"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.k_group = k_group
        self.filter_mode = filter_mode
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        _smooth_init(self.weight)
        self.register_buffer("grids", _filter_grids(k_group, kernel_size), persistent=False)
        self.register_buffer("window", _radial_window(kernel_size), persistent=False)

    def rotated_bank(self) -> torch.Tensor:
        # (out*K, in, ks, ks) with copy k rotated by k*360/K
        o, i, ks = self.out_channels, self.in_channels, self.kernel_size
        flat = (self.weight * self.window).reshape(1, o * i, ks, ks)
        rot = _rotate_filter_bank(flat, self.grids, self.filter_mode, ks)
        return rot.reshape(self.k_group, o, i, ks, ks).permute(1, 0, 2, 3, 4).reshape(
            o * self.k_group, i, ks, ks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        bias = self.bias.repeat_interleave(self.k_group)  # constant over the group axis
        y = F.conv2d(x, self.rotated_bank(), bias=bias, padding=self.kernel_size // 2)
        return y.view(b, self.out_channels, self.k_group, y.shape[-2], y.shape[-1])


class GroupConv2d(nn.Module):
    """Group-equivariant convolution on lifted maps (B, C, K, H, W).

    The kernel's support along the group axis is restricted to `offsets`
    (relative positions); equivariance is exact for any support set, and the
    restriction keeps desk-scale compute linear in K instead of quadratic.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 k_group: int, offsets: tuple[int, ...] = (-1, 0, 1),
                 filter_mode: str = "bilinear"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.k_group = k_group
        self.offsets = tuple(int(o) % k_group for o in offsets)
        self.filter_mode = filter_mode
        self.weight = nn.Parameter(
            torch.empty(out_channels, in_channels, len(self.offsets), kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        _smooth_init(self.weight)
        self.register_buffer("grids", _filter_grids(k_group, kernel_size), persistent=False)
        self.register_buffer("window", _radial_window(kernel_size), persistent=False)

    def _bank(self, offset_index: int) -> torch.Tensor:
        # (K*out, in, ks, ks): block k holds the offset's filter rotated by k*360/K
        o, i, ks = self.out_channels, self.in_channels, self.kernel_size
        w = self.weight[:, :, offset_index] * self.window
        rot = _rotate_filter_bank(w.reshape(1, o * i, ks, ks), self.grids, self.filter_mode, ks)
        return rot.reshape(self.k_group * o, i, ks, ks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, k, h, w = x.shape
        acc = None
        for oi, off in enumerate(self.offsets):
            # position k of the rolled tensor holds input position (k + off) mod K
            xo = torch.roll(x, shifts=-off, dims=2) if off else x
            xg = xo.permute(0, 2, 1, 3, 4).reshape(b, k * self.in_channels, h, w)
            bias = self.bias.repeat(k) if oi == 0 else None
            yo = F.conv2d(xg, self._bank(oi), bias=bias,
                          padding=self.kernel_size // 2, groups=k)
            acc = yo if acc is None else acc + yo
        return acc.view(b, k, self.out_channels, h, w).permute(0, 2, 1, 3, 4)


def _pool_lifted(x: torch.Tensor) -> torch.Tensor:
    # 2x2 average pooling via reshape-mean (faster than avg_pool2d on one core)
    b, c, k, h, w = x.shape
    return x.view(b, c, k, h // 2, 2, w // 2, 2).mean(dim=(4, 6))


class LiftedBackbone(nn.Module):
    """Lift + three group conv stages; 2x2 average pooling after the first two.

    Returns lifted features (B, C_last, K, H/4, W/4); `stages` additionally
    exposes the two deepest stage outputs for multiscale pooling.
    """

    def __init__(self, channels: tuple[int, ...], cfg: ModelConfig):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("backbone expects four stage widths")
        c0, c1, c2, c3 = channels
        self.lift = LiftConv2d(1, c0, cfg.lift_kernel, cfg.k_group, cfg.filter_mode)
        self.g1 = GroupConv2d(c0, c1, cfg.group_kernel, cfg.k_group, cfg.group_support, cfg.filter_mode)
        self.g2 = GroupConv2d(c1, c2, cfg.group_kernel, cfg.k_group, cfg.group_support, cfg.filter_mode)
        self.g3 = GroupConv2d(c2, c3, cfg.group_kernel, cfg.k_group, cfg.group_support, cfg.filter_mode)
        self.out_channels = c3
        self.stage_channels = (c2, c3)

    def stages(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        y = _pool_lifted(F.relu(self.lift(x)))
        y = _pool_lifted(F.relu(self.g1(y)))
        s2 = F.relu(self.g2(y))
        s3 = F.relu(self.g3(s2))
        return s2, s3

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x)[1]


def invariant_pool(features: torch.Tensor) -> torch.Tensor:
    """Mean over the group axis then over space: (B, C, K, H, W) -> (B, C)."""
    return features.mean(dim=(2, 3, 4))


def invariant_pool_meanmax(features: torch.Tensor) -> torch.Tensor:
    """Group-mean followed by concatenated spatial mean and max: (B, 2C).

    The max half keeps per-channel shape evidence that pure averaging washes
    out; both reductions commute with grid rotations, so invariance is intact.
    """
    group_mean = features.mean(dim=2)
    spatial_mean = group_mean.mean(dim=(2, 3))
    spatial_max = group_mean.amax(dim=(2, 3))
    return torch.cat([spatial_mean, spatial_max], dim=1)


class EncoderEta(nn.Module):
    """Invariant encoder: lifted backbone, multiscale invariant pooling, linear.

    Pools the two deepest stages (mean+max each) before projecting, which
    keeps enough shape evidence in the latent to separate visually similar
    classes.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.backbone = LiftedBackbone(cfg.enc_channels, cfg)
        width = 2 * sum(self.backbone.stage_channels)
        self.project = nn.Linear(width, cfg.d_inv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s2, s3 = self.backbone.stages(x)
        pooled = torch.cat([invariant_pool_meanmax(s2), invariant_pool_meanmax(s3)], dim=1)
        return self.project(pooled)


class DecoderDelta(nn.Module):
    """Upsampling decoder from the invariant latent back to image space.

    Leaky activations and a low-intensity output bias keep the decoder from
    collapsing onto the all-background solution early in training (sparse
    bright strokes on black make that a strong local optimum for plain MSE).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.base = cfg.image_size // 8
        self.fc = nn.Linear(cfg.d_inv, 64 * self.base * self.base)
        self.c1 = nn.Conv2d(64, 32, 3, padding=1)
        self.c2 = nn.Conv2d(32, 16, 3, padding=1)
        self.c3 = nn.Conv2d(16, 8, 3, padding=1)
        self.out = nn.Conv2d(8, 1, 3, padding=1)
        nn.init.constant_(self.out.bias, -2.0)  # sigmoid(-2) ~ typical background level

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        y = F.leaky_relu(self.fc(z), 0.1).view(-1, 64, self.base, self.base)
        for conv in (self.c1, self.c2, self.c3):
            y = F.interpolate(y, scale_factor=2, mode="nearest")
            y = F.leaky_relu(conv(y), 0.1)
        return torch.sigmoid(self.out(y))


def scores_to_vector(scores: torch.Tensor) -> torch.Tensor:
    """Softmax-weighted circular mean of the K grid directions.

    (B, K) scores -> (B, 2) vector. Cyclically shifting the scores by j rotates
    the vector by exactly 360*j/K; this covariance is what makes the readout
    equivariant by construction.
    """
    k = scores.shape[-1]
    # accumulate in f64: uniform scores must cancel to below the degeneracy threshold
    p = torch.softmax(scores, dim=-1).double()
    grid = torch.arange(k, dtype=torch.float64, device=scores.device) * (2.0 * math.pi / k)
    v = torch.stack([(p * torch.cos(grid)).sum(-1), (p * torch.sin(grid)).sum(-1)], dim=-1)
    return v.to(scores.dtype) if scores.dtype != torch.float64 else v


def vector_to_angle_deg(v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Angle readout with a degenerate flag for near-zero vectors.

    Returns (angles_deg, degenerate_mask); degenerate entries read as 0 degrees.
    """
    norm = torch.linalg.vector_norm(v, dim=-1)
    degenerate = norm < 1e-8
    angle = torch.rad2deg(torch.atan2(v[..., 1], v[..., 0]))
    return torch.where(degenerate, torch.zeros_like(angle), angle), degenerate


class PsiEstimator(nn.Module):
    """Group-action estimator: per-group-position scores -> circular readout.

    Scores pool the lifted features over the inscribed spatial disk only: the
    square corners carry rotation fill noise that would wobble the readout,
    and a radial mask commutes with rotations, so equivariance is unharmed.
    Scores are then standardized per sample to a fixed contrast: without this
    the training equilibrium keeps the softmax near uniform, and the readout
    direction (norm ~1e-3) amplifies interpolation noise into several degrees
    of angle wobble. Standardization is a fixed deterministic transform that
    commutes with cyclic score shifts, so the readout stays exactly covariant.
    forward returns (angle_deg, vector, scores). Degenerate readouts (vector
    norm below 1e-8) default to angle 0 and bump `degenerate_count`.
    """

    SCORE_GAIN = 2.5

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.backbone = LiftedBackbone(cfg.psi_channels, cfg)
        self.score_head = nn.Linear(self.backbone.out_channels, 1)
        self.degenerate_count = 0
        side = cfg.image_size // 4  # backbone output resolution
        c = (side - 1) / 2.0
        ys, xs = torch.meshgrid(
            torch.arange(side, dtype=torch.float32) - c,
            torch.arange(side, dtype=torch.float32) - c,
            indexing="ij",
        )
        disk = (torch.sqrt(ys * ys + xs * xs) <= side / 2.0).float()
        self.register_buffer("pool_mask", disk / disk.sum(), persistent=False)

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        feats = (self.backbone(x) * self.pool_mask).sum(dim=(3, 4))  # (B, C, K)
        raw = self.score_head(feats.transpose(1, 2)).squeeze(-1)     # (B, K)
        centered = raw - raw.mean(dim=-1, keepdim=True)
        spread = raw.std(dim=-1, keepdim=True, unbiased=False)
        return self.SCORE_GAIN * centered / (spread + 1e-6)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        s = self.scores(x)
        v = scores_to_vector(s)
        angle, degenerate = vector_to_angle_deg(v)
        n_bad = int(degenerate.sum().item())
        if n_bad:
            self.degenerate_count += n_bad
        return angle, v, s


class BoundaryTheta(nn.Module):
    """Boundary prediction network: invariant backbone + three FC layers.

    Continuous families use a single softplus output in degrees; the cyclic
    family uses logits over orders 1..max_cyclic_order.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.family = cfg.family
        self.max_order = cfg.max_cyclic_order
        self.backbone = LiftedBackbone(cfg.theta_channels, cfg)
        width = 2 * sum(self.backbone.stage_channels)
        out_dim = 1 if cfg.family in CONTINUOUS_FAMILIES else cfg.max_cyclic_order
        self.fc1 = nn.Linear(width, 64)
        self.fc2 = nn.Linear(64, 64)
        self.fc3 = nn.Linear(64, out_dim)
        if cfg.family in CONTINUOUS_FAMILIES:
            # start predictions near the middle of the level scale (softplus(45) ~ 45
            # degrees) instead of softplus(0) ~ 0.7, which regression recovers from slowly
            nn.init.constant_(self.fc3.bias, 45.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s2, s3 = self.backbone.stages(x)
        h = torch.cat([invariant_pool_meanmax(s2), invariant_pool_meanmax(s3)], dim=1)
        h = F.relu(self.fc1(h))
        h = F.relu(self.fc2(h))
        out = self.fc3(h)
        if self.family in CONTINUOUS_FAMILIES:
            return F.softplus(out).squeeze(-1)  # degrees, >= 0
        return out  # (B, max_order) logits for orders 1..max_order

    def predicted_order(self, x: torch.Tensor) -> torch.Tensor:
        if self.family in CONTINUOUS_FAMILIES:
            raise ValueError("predicted_order requires a cyclic head")
        return self.forward(x).argmax(dim=-1) + 1


class ModelBundle:
    """All learnable parts plus their config and training seed.

    Checkpoints are a directory of SYMT blobs (one per parameter tensor) plus a
    manifest and the flat config; reloads reproduce forward passes bit-exactly.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, with_theta: bool = True):
        self.config = config
        self.seed = seed
        torch.manual_seed(seed)
        self.eta = EncoderEta(config)
        self.delta = DecoderDelta(config)
        self.psi = PsiEstimator(config)
        self.theta = BoundaryTheta(config) if with_theta else None

    def modules(self) -> dict[str, nn.Module]:
        mods = {"eta": self.eta, "delta": self.delta, "psi": self.psi}
        if self.theta is not None:
            mods["theta"] = self.theta
        return mods

    def eval(self) -> "ModelBundle":
        for m in self.modules().values():
            m.eval()
        return self

    def pretrain_parameters(self):
        for name in ("eta", "delta", "psi"):
            yield from self.modules()[name].parameters()

    def psi_angles(self, images: torch.Tensor) -> torch.Tensor:
        angle, _, _ = self.psi(images)
        return angle

    def save(self, path: str | Path) -> None:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for mod_name, module in self.modules().items():
            for tensor_name, tensor in module.state_dict().items():
                key = f"{mod_name}.{tensor_name}"
                fname = key.replace(".", "__") + ".symt"
                write_blob(out / fname, tensor.detach().cpu().numpy().astype(np.float32))
                rows.append((key, fname, "x".join(str(d) for d in tensor.shape)))
        write_manifest(out / "params.csv", ("tensor", "file", "shape"), rows)
        flat = self.config.to_flat()
        flat["seed"] = str(self.seed)
        flat["has_theta"] = str(self.theta is not None)
        lines = [f"{k} = {v}" for k, v in sorted(flat.items())]
        (out / "config.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        src = Path(path)
        flat = {}
        for line in (src / "config.txt").read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            flat[key.strip()] = value.strip()
        config = ModelConfig.from_flat(flat)
        bundle = cls(config, seed=int(flat.get("seed", "0")),
                     with_theta=flat.get("has_theta", "True") == "True")
        states: dict[str, dict[str, torch.Tensor]] = {name: {} for name in bundle.modules()}
        for key, fname, _shape in read_manifest(src / "params.csv", ("tensor", "file", "shape")):
            mod_name, _, tensor_name = key.partition(".")
            states[mod_name][tensor_name] = torch.from_numpy(read_blob(src / fname))
        for mod_name, module in bundle.modules().items():
            module.load_state_dict(states[mod_name])
        return bundle
