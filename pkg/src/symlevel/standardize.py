"""Symmetry standardization, out-of-distribution symmetry detection, and the
nearest-centroid downstream comparison.

Standardizing rotates each input by the inverse of its estimated rotation,
collapsing every sample onto the orientation of its class's center of
symmetry. OOD verdicts compare the estimated rotation of an input against the
symmetry level predicted for it, and never read ground truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .angles import CYCLIC, GAUSSIAN, UNIFORM, SymmetrySpec, canonicalize_angle, cyclic_elements, geodesic_distance, inverse
from .datasets import BaseCorpus, SymDataset
from .imaging import rotate_tensor
from .nets import CONTINUOUS_FAMILIES, ModelBundle
from .persist import write_manifest
from .training import dataset_tensor

CYCLIC_OOD_TOLERANCE_DEG = 5.0
GAUSSIAN_OOD_SIGMA = 2.0


@dataclass
class StandardizedDataset:
    images: np.ndarray                  # reoriented copies
    records: list                       # original SampleRecords
    applied_inverse: np.ndarray         # -psi(x), canonicalized, degrees
    residual: np.ndarray                # canonicalize(true + applied_inverse)


@torch.no_grad()
def standardize_sample(img: np.ndarray, bundle: ModelBundle) -> np.ndarray:
    """Rotate one image by the inverse of its estimated rotation.

    A degenerate readout (maximally ambiguous orientation) warns and passes
    the image through unrotated.
    """
    bundle.eval()
    x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).view(1, 1, *img.shape)
    angle_t, vector, _ = bundle.psi(x)
    if float(torch.linalg.vector_norm(vector[0])) < 1e-8:
        warnings.warn("degenerate rotation estimate; passing the image through", stacklevel=2)
        return img.astype(np.float32).copy()
    out = rotate_tensor(x, torch.tensor([inverse(float(angle_t[0]))]), "bilinear")
    return out[0, 0].numpy()


@torch.no_grad()
def standardize_dataset(
    ds: SymDataset,
    bundle: ModelBundle | None = None,
    psi_angles: np.ndarray | None = None,
    batch_size: int = 64,
) -> StandardizedDataset:
    """Elementwise standardization of a dataset.

    Either a trained bundle or an explicit angle array ("oracle" estimates,
    e.g. the true applied rotations) supplies the per-sample rotation.
    """
    if psi_angles is None:
        if bundle is None:
            raise ValueError("need a bundle or explicit psi angles")
        bundle.eval()
        images = dataset_tensor(ds)
        parts = [bundle.psi_angles(images[s : s + batch_size]).numpy()
                 for s in range(0, len(images), batch_size)]
        psi_angles = np.concatenate(parts) if parts else np.zeros(0, np.float32)
    psi_angles = np.asarray(psi_angles, dtype=np.float64)
    if len(psi_angles) != len(ds):
        raise ValueError("one rotation estimate per sample required")
    applied_inverse = np.array([inverse(a) for a in psi_angles])
    images = dataset_tensor(ds)
    out = rotate_tensor(images, torch.from_numpy(applied_inverse.astype(np.float32)), "bilinear")
    residual = np.array([
        canonicalize_angle(r.applied_angle + inv)
        for r, inv in zip(ds.records, applied_inverse)
    ])
    return StandardizedDataset(
        images=out[:, 0].numpy(),
        records=list(ds.records),
        applied_inverse=applied_inverse,
        residual=residual,
    )


def is_ood(psi_angle: float, boundary: float, family: str) -> bool:
    """Whether an estimated rotation falls outside a predicted symmetry level.

    Uniform: |angle| beyond the predicted half-width (boundary inclusive).
    Gaussian: |angle| beyond two predicted standard deviations.
    Cyclic: more than 5 degrees from every element of C_n.
    """
    if family == UNIFORM:
        return abs(psi_angle) > boundary
    if family == GAUSSIAN:
        return abs(psi_angle) > GAUSSIAN_OOD_SIGMA * boundary
    if family == CYCLIC:
        n = max(int(round(boundary)), 1)
        return min(geodesic_distance(psi_angle, e) for e in cyclic_elements(n)) > CYCLIC_OOD_TOLERANCE_DEG
    raise ValueError(f"unknown family {family!r}")


def ground_truth_ood(angle: float, spec: SymmetrySpec) -> bool:
    """Whether a drawn rotation lies outside a class's training distribution."""
    if spec.family == UNIFORM:
        return abs(angle) > spec.param
    if spec.family == GAUSSIAN:
        return abs(angle) > GAUSSIAN_OOD_SIGMA * spec.param
    return min(geodesic_distance(angle, e) for e in cyclic_elements(spec.order)) > CYCLIC_OOD_TOLERANCE_DEG


@dataclass
class OODVerdict:
    sample_id: int
    class_id: int
    true_angle: float
    psi_angle: float
    boundary: float
    verdict: bool
    truth: bool


@dataclass
class OODReport:
    accuracy: float
    verdicts: list[OODVerdict]

    def to_csv(self, path) -> None:
        write_manifest(
            path,
            ("sample_id", "class", "true_angle", "psi_angle", "boundary", "verdict", "truth"),
            [
                (v.sample_id, v.class_id, repr(v.true_angle), repr(v.psi_angle),
                 repr(v.boundary), int(v.verdict), int(v.truth))
                for v in self.verdicts
            ],
        )


@torch.no_grad()
def ood_model_outputs(images: np.ndarray, bundle: ModelBundle, batch_size: int = 64):
    """Model-only quantities for OOD decisions: (psi angles, boundaries)."""
    if bundle.theta is None:
        raise ValueError("OOD evaluation requires a trained boundary network")
    bundle.eval()
    t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).unsqueeze(1)
    psi, bound = [], []
    for s in range(0, len(t), batch_size):
        xb = t[s : s + batch_size]
        psi.append(bundle.psi_angles(xb).numpy())
        if bundle.config.family in CONTINUOUS_FAMILIES:
            bound.append(bundle.theta(xb).numpy())
        else:
            bound.append(bundle.theta.predicted_order(xb).numpy().astype(np.float64))
    return np.concatenate(psi), np.concatenate(bound)


def evaluate_ood(
    corpus: BaseCorpus,
    specs_by_class: dict[int, SymmetrySpec],
    bundle: ModelBundle,
    seed: int,
) -> OODReport:
    """Rotate unseen upright inputs by angles drawn uniformly over the circle,
    then score the model's in/out-of-distribution verdicts against the classes'
    training specs. Verdicts are computed from model outputs alone.
    """
    rng = np.random.default_rng(seed)
    drawn = np.array([canonicalize_angle(a) for a in rng.uniform(-180.0, 180.0, len(corpus.images))])
    rotated = rotate_tensor(
        torch.from_numpy(corpus.images.astype(np.float32)).unsqueeze(1),
        torch.from_numpy(drawn.astype(np.float32)),
        "bilinear",
    )[:, 0].numpy()
    psi_angles, boundaries = ood_model_outputs(rotated, bundle)
    family = bundle.config.family
    verdicts = []
    correct = 0
    for i in range(len(corpus.images)):
        class_id = int(corpus.labels[i])
        verdict = is_ood(float(psi_angles[i]), float(boundaries[i]), family)
        truth = ground_truth_ood(float(drawn[i]), specs_by_class[class_id])
        correct += int(verdict == truth)
        verdicts.append(OODVerdict(i, class_id, float(drawn[i]), float(psi_angles[i]),
                                    float(boundaries[i]), verdict, truth))
    return OODReport(accuracy=correct / max(len(verdicts), 1), verdicts=verdicts)


def nearest_centroid_accuracy(
    train_images: np.ndarray, train_labels: np.ndarray,
    test_images: np.ndarray, test_labels: np.ndarray,
) -> float:
    """Accuracy of a per-class mean-image classifier."""
    classes = np.unique(train_labels)
    centroids = np.stack([train_images[train_labels == c].mean(axis=0) for c in classes])
    flat_test = test_images.reshape(len(test_images), -1)
    flat_cent = centroids.reshape(len(classes), -1)
    d = ((flat_test[:, None, :] - flat_cent[None, :, :]) ** 2).sum(axis=2)
    predicted = classes[np.argmin(d, axis=1)]
    return float(np.mean(predicted == test_labels))


def downstream_compare(
    raw_train: SymDataset, raw_test: SymDataset,
    std_train: StandardizedDataset, std_test: StandardizedDataset,
) -> tuple[float, float]:
    """Nearest-centroid test accuracy on raw vs symmetry-standardized data."""
    raw_acc = nearest_centroid_accuracy(
        raw_train.images, raw_train.class_ids(), raw_test.images, raw_test.class_ids())
    std_labels_train = np.array([r.class_id for r in std_train.records])
    std_labels_test = np.array([r.class_id for r in std_test.records])
    std_acc = nearest_centroid_accuracy(
        std_train.images, std_labels_train, std_test.images, std_labels_test)
    return raw_acc, std_acc
