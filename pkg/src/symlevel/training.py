"""Loss functions and the two training phases.

Pretraining jointly optimizes (encoder, decoder, group-action estimator) with
a reconstruction term plus a weighted identity-pull term on the estimated
rotation. The self-supervision phase trains the boundary network against
pseudo-labels. Both phases use Adam with a cosine schedule and linear warmup,
select the best checkpoint by validation loss, and are deterministic given
their seed (at fixed thread count).
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datasets import SymDataset
from .imaging import rotate_tensor
from .nets import CONTINUOUS_FAMILIES, BoundaryTheta, ModelBundle, ModelConfig
from .persist import read_blob, read_manifest, write_blob, write_manifest


@dataclass
class TrainConfig:
    epochs: int = 400
    lr: float = 0.01
    warmup_epochs: int = 5
    lambda2: float = 0.03125
    batch_size: int = 64
    seed: int = 0

    @classmethod
    def theta_defaults(cls, **overrides) -> "TrainConfig":
        kwargs = dict(epochs=150, lr=0.001)
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf

    def add(self, epoch: int, l1: float, l2_or_l3: float, val_loss: float, seconds: float) -> None:
        self.rows.append((epoch, l1, l2_or_l3, val_loss, seconds))

    def to_csv(self, path: str | Path) -> None:
        write_manifest(
            path,
            ("epoch", "l1", "l2_or_l3", "val_loss", "seconds"),
            [(e, repr(a), repr(b), repr(v), repr(s)) for e, a, b, v, s in self.rows],
        )


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, warmup_epochs: int) -> float:
    """Linear warmup for `warmup_epochs`, then cosine decay to zero."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max(total_epochs - warmup_epochs, 1)
    progress = (epoch - warmup_epochs) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def dataset_tensor(ds: SymDataset) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(ds.images, dtype=np.float32)).unsqueeze(1)


def reconstruction_and_rotation(x: torch.Tensor, bundle: ModelBundle):
    """One shared forward pass: reconstruction, estimated angle, readout vector."""
    recon = bundle.delta(bundle.eta(x))
    angle, vector, scores = bundle.psi(x)
    return recon, angle, vector, scores


def l1_from_parts(x: torch.Tensor, recon: torch.Tensor, angle_deg: torch.Tensor) -> torch.Tensor:
    """Pixel MSE between the rotated reconstruction and the input."""
    aligned = rotate_tensor(recon, angle_deg, "bilinear")
    return torch.mean((aligned - x) ** 2)


def l2_from_vector(vector: torch.Tensor) -> torch.Tensor:
    """Smooth circular distance of the estimated rotation to the identity.

    1 - cos(angle), evaluated on the normalized readout direction: 0 at the
    identity, 1 at 90 degrees, 2 at 180 degrees. Degenerate readouts (norm
    below 1e-8) contribute the maximal penalty 2.
    """
    norm = torch.linalg.vector_norm(vector, dim=-1)
    safe = torch.clamp(norm, min=1e-8)
    per_sample = 1.0 - vector[..., 0] / safe
    per_sample = torch.where(norm < 1e-8, torch.full_like(per_sample, 2.0), per_sample)
    return per_sample.mean()


def loss_l1(x: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    recon, angle, _, _ = reconstruction_and_rotation(x, bundle)
    return l1_from_parts(x, recon, angle)


def loss_l2(x: torch.Tensor, bundle: ModelBundle) -> torch.Tensor:
    _, vector, _ = bundle.psi(x)
    return l2_from_vector(vector)


def _pretrain_losses(x: torch.Tensor, bundle: ModelBundle) -> tuple[torch.Tensor, torch.Tensor]:
    recon, angle, vector, _ = reconstruction_and_rotation(x, bundle)
    return l1_from_parts(x, recon, angle), l2_from_vector(vector)


@torch.no_grad()
def _validation_loss(images: torch.Tensor, bundle: ModelBundle, lambda2: float,
                     batch_size: int) -> float:
    total, count = 0.0, 0
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size]
        l1, l2 = _pretrain_losses(xb, bundle)
        total += float(l1 + lambda2 * l2) * len(xb)
        count += len(xb)
    return total / max(count, 1)


def pretrain(
    train_ds: SymDataset,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    val_ds: SymDataset | None = None,
) -> tuple[ModelBundle, TrainLog]:
    """Joint pretraining of (eta, delta, psi); returns the best-validation bundle.

    Validation uses the full training loss (reconstruction + weighted identity
    pull). When no validation split is given, the train split is reused.
    """
    if len(train_ds) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    torch.manual_seed(cfg.seed)
    bundle = ModelBundle(model_cfg, seed=cfg.seed, with_theta=False)
    images = dataset_tensor(train_ds)
    val_images = dataset_tensor(val_ds) if val_ds is not None else images
    params = list(bundle.pretrain_parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    best_state: dict | None = None

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(images))
        epoch_l1, epoch_l2, n_batches = 0.0, 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[start : start + cfg.batch_size])
            xb = images[idx]
            l1, l2 = _pretrain_losses(xb, bundle)
            loss = l1 + cfg.lambda2 * l2
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} batch {bi}: "
                    f"l1={float(l1.detach())!r} l2={float(l2.detach())!r}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_l1 += float(l1.detach())
            epoch_l2 += float(l2.detach())
            n_batches += 1
        val_loss = _validation_loss(val_images, bundle, cfg.lambda2, cfg.batch_size)
        log.add(epoch, epoch_l1 / n_batches, epoch_l2 / n_batches, val_loss,
                time.perf_counter() - t0)
        if val_loss < log.best_val:
            log.best_val = val_loss
            log.best_epoch = epoch
            best_state = {
                name: copy.deepcopy(module.state_dict())
                for name, module in bundle.modules().items()
            }
    if best_state is not None:
        for name, module in bundle.modules().items():
            module.load_state_dict(best_state[name])
    return bundle, log


@dataclass
class EmbeddingTable:
    sample_ids: np.ndarray  # (N,) int
    latents: np.ndarray     # (N, d_inv) float32
    angles: np.ndarray      # (N,) float32 degrees in (-180, 180]

    def save(self, path: str | Path) -> None:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        write_blob(out / "latents.symt", self.latents.astype(np.float32))
        write_blob(out / "angles.symt", self.angles.astype(np.float32))
        write_manifest(out / "ids.csv", ("sample_id",), [(int(i),) for i in self.sample_ids])

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        src = Path(path)
        ids = [int(r[0]) for r in read_manifest(src / "ids.csv", ("sample_id",))]
        return cls(
            sample_ids=np.array(ids, dtype=np.int64),
            latents=read_blob(src / "latents.symt"),
            angles=read_blob(src / "angles.symt"),
        )


@torch.no_grad()
def embed_dataset(bundle: ModelBundle, ds: SymDataset, batch_size: int = 64) -> EmbeddingTable:
    """Invariant embedding and estimated rotation for every sample."""
    bundle.eval()
    images = dataset_tensor(ds)
    zs, angles = [], []
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size]
        zs.append(bundle.eta(xb).numpy())
        angles.append(bundle.psi_angles(xb).numpy())
    return EmbeddingTable(
        sample_ids=np.array([r.sample_id for r in ds.records], dtype=np.int64),
        latents=np.concatenate(zs) if zs else np.zeros((0, bundle.config.d_inv), np.float32),
        angles=np.concatenate(angles) if angles else np.zeros(0, np.float32),
    )


def train_theta(
    bundle: ModelBundle,
    train_ds: SymDataset,
    targets: dict[int, float],
    cfg: TrainConfig,
    val_ds: SymDataset | None = None,
    val_targets: dict[int, float] | None = None,
) -> TrainLog:
    """Train the boundary network on pseudo-labels; best-validation selection.

    Continuous families regress the label in degrees with MSE; the cyclic
    family classifies the order with cross entropy over the logit head.
    """
    family = bundle.config.family
    missing = [r.sample_id for r in train_ds.records if r.sample_id not in targets]
    if missing:
        raise ValueError(f"missing pseudo-labels for {len(missing)} samples (e.g. id {missing[0]})")
    torch.manual_seed(cfg.seed)
    bundle.theta = BoundaryTheta(bundle.config)
    images = dataset_tensor(train_ds)
    labels = torch.tensor([float(targets[r.sample_id]) for r in train_ds.records])
    if val_ds is not None and val_targets is not None:
        val_images = dataset_tensor(val_ds)
        val_labels = torch.tensor([float(val_targets[r.sample_id]) for r in val_ds.records])
    else:
        val_images, val_labels = images, labels

    def batch_loss(xb: torch.Tensor, yb: torch.Tensor) -> torch.Tensor:
        out = bundle.theta(xb)
        if family in CONTINUOUS_FAMILIES:
            return torch.mean((out - yb) ** 2)
        orders = yb.long() - 1
        if orders.min() < 0 or orders.max() >= bundle.theta.max_order:
            raise ValueError("cyclic pseudo-labels must lie in the configured order range")
        return torch.nn.functional.cross_entropy(out, orders)

    optimizer = torch.optim.Adam(bundle.theta.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()
    best_state = None
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng.permutation(len(images))
        epoch_l3, n_batches = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = torch.from_numpy(order[start : start + cfg.batch_size])
            loss = batch_loss(images[idx], labels[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite theta loss at epoch {epoch} batch {bi}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_l3 += float(loss.detach())
            n_batches += 1
        with torch.no_grad():
            val_loss = float(
                sum(
                    float(batch_loss(val_images[s : s + cfg.batch_size],
                                     val_labels[s : s + cfg.batch_size]))
                    * len(val_images[s : s + cfg.batch_size])
                    for s in range(0, len(val_images), cfg.batch_size)
                )
                / max(len(val_images), 1)
            )
        log.add(epoch, 0.0, epoch_l3 / n_batches, val_loss, time.perf_counter() - t0)
        if val_loss < log.best_val:
            log.best_val = val_loss
            log.best_epoch = epoch
            best_state = copy.deepcopy(bundle.theta.state_dict())
    if best_state is not None:
        bundle.theta.load_state_dict(best_state)
    return log


@torch.no_grad()
def predict_boundaries(bundle: ModelBundle, ds: SymDataset, batch_size: int = 64) -> np.ndarray:
    """Boundary predictions per sample: degrees, or the cyclic order."""
    if bundle.theta is None:
        raise ValueError("bundle has no trained boundary network")
    bundle.eval()
    images = dataset_tensor(ds)
    outs = []
    for start in range(0, len(images), batch_size):
        xb = images[start : start + batch_size]
        if bundle.config.family in CONTINUOUS_FAMILIES:
            outs.append(bundle.theta(xb).numpy())
        else:
            outs.append(bundle.theta.predicted_order(xb).numpy().astype(np.float32))
    return np.concatenate(outs) if outs else np.zeros(0, np.float32)
