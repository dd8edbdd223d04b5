import numpy as np
import pytest
import torch

from symlevel.angles import CYCLIC, GAUSSIAN, UNIFORM, SymmetrySpec
from symlevel.datasets import SymmetryProfile, build_dataset, render_glyph_corpus
from symlevel.imaging import interior_mask
from symlevel.nets import ModelBundle, ModelConfig
from symlevel.standardize import (
    evaluate_ood,
    ground_truth_ood,
    is_ood,
    nearest_centroid_accuracy,
    standardize_dataset,
    standardize_sample,
)

SMALL = dict(image_size=16, d_inv=8, enc_channels=(4, 6, 6, 8),
             psi_channels=(4, 4, 4, 6), theta_channels=(4, 4, 4, 6))


def toy_dataset(theta=(30.0, 90.0), per_class=10, seed=0, size=16):
    profile = SymmetryProfile(specs=tuple(SymmetrySpec(UNIFORM, t) for t in theta))
    corpus = render_glyph_corpus(len(theta), per_class, size, seed=seed)
    return corpus, build_dataset(corpus, profile, seed=seed + 50)


class TestStandardization:
    def test_zero_angles_leave_images_unchanged(self):
        _, ds = toy_dataset()
        out = standardize_dataset(ds, psi_angles=np.zeros(len(ds)))
        assert np.allclose(out.images, ds.images, atol=1e-6)

    def test_oracle_residuals_exactly_zero(self):
        _, ds = toy_dataset(seed=1)
        out = standardize_dataset(ds, psi_angles=ds.applied_angles())
        assert np.all(out.residual == 0.0)

    def test_oracle_recovers_upright_base(self):
        corpus, ds = toy_dataset(seed=2, per_class=20, size=32)
        out = standardize_dataset(ds, psi_angles=ds.applied_angles())
        mask = interior_mask(32, 32, 0.7)
        maes = [
            float(np.abs(img - base)[mask].mean())
            for img, base in zip(out.images, corpus.images)
        ]
        assert max(maes) <= 0.03

    def test_single_sample_via_bundle(self):
        torch.manual_seed(0)
        bundle = ModelBundle(ModelConfig(**SMALL), with_theta=False)
        img = render_glyph_corpus(1, 1, 16, seed=3).images[0]
        out = standardize_sample(img, bundle)
        assert out.shape == img.shape

    def test_angle_count_mismatch(self):
        _, ds = toy_dataset(seed=4)
        with pytest.raises(ValueError):
            standardize_dataset(ds, psi_angles=np.zeros(3))


class TestIsOod:
    def test_uniform_rule(self):
        assert is_ood(75.0, 60.0, UNIFORM) is True
        assert is_ood(60.0, 60.0, UNIFORM) is False  # boundary inclusive
        assert is_ood(-75.0, 60.0, UNIFORM) is True

    def test_gaussian_two_sigma_rule(self):
        assert is_ood(37.0, 18.0, GAUSSIAN) is True
        assert is_ood(35.0, 18.0, GAUSSIAN) is False

    def test_cyclic_five_degree_rule(self):
        assert is_ood(92.0, 4, CYCLIC) is False  # 2 degrees from the quarter turn
        assert is_ood(96.0, 4, CYCLIC) is True
        assert is_ood(178.0, 2, CYCLIC) is False

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            is_ood(10.0, 5.0, "vonmises")

    def test_uniform_monotone_in_boundary(self):
        rng = np.random.default_rng(0)
        angles = rng.uniform(-180.0, 180.0, 500)
        small, large = 40.0, 80.0
        for a in angles:
            if is_ood(float(a), large, UNIFORM):
                assert is_ood(float(a), small, UNIFORM)


class TestGroundTruth:
    def test_full_rotation_never_ood(self):
        spec = SymmetrySpec(UNIFORM, 180.0)
        for a in (-179.0, -90.0, 0.0, 45.0, 180.0):
            assert ground_truth_ood(a, spec) is False

    def test_uniform_and_cyclic_rules(self):
        assert ground_truth_ood(61.0, SymmetrySpec(UNIFORM, 60.0)) is True
        assert ground_truth_ood(-59.0, SymmetrySpec(UNIFORM, 60.0)) is False
        assert ground_truth_ood(92.0, SymmetrySpec(CYCLIC, 4)) is False
        assert ground_truth_ood(45.0, SymmetrySpec(CYCLIC, 4)) is True


class TestEvaluateOod:
    def _bundle(self):
        torch.manual_seed(1)
        return ModelBundle(ModelConfig(**SMALL), with_theta=True)

    def test_verdicts_never_read_ground_truth(self):
        corpus, _ = toy_dataset(per_class=12, seed=5)
        bundle = self._bundle()
        specs_a = {0: SymmetrySpec(UNIFORM, 30.0), 1: SymmetrySpec(UNIFORM, 90.0)}
        specs_b = {0: SymmetrySpec(UNIFORM, 90.0), 1: SymmetrySpec(UNIFORM, 30.0)}
        report_a = evaluate_ood(corpus, specs_a, bundle, seed=7)
        report_b = evaluate_ood(corpus, specs_b, bundle, seed=7)
        assert [v.verdict for v in report_a.verdicts] == [v.verdict for v in report_b.verdicts]
        assert [v.truth for v in report_a.verdicts] != [v.truth for v in report_b.verdicts]

    def test_report_csv(self, tmp_path):
        corpus, _ = toy_dataset(per_class=4, seed=6)
        report = evaluate_ood(
            corpus,
            {0: SymmetrySpec(UNIFORM, 30.0), 1: SymmetrySpec(UNIFORM, 90.0)},
            self._bundle(),
            seed=1,
        )
        report.to_csv(tmp_path / "verdicts.csv")
        lines = (tmp_path / "verdicts.csv").read_text().splitlines()
        assert lines[0] == "sample_id,class,true_angle,psi_angle,boundary,verdict,truth"
        assert len(lines) == len(report.verdicts) + 1

    def test_accuracy_definition(self):
        corpus, _ = toy_dataset(per_class=4, seed=8)
        specs = {0: SymmetrySpec(UNIFORM, 30.0), 1: SymmetrySpec(UNIFORM, 90.0)}
        report = evaluate_ood(corpus, specs, self._bundle(), seed=2)
        manual = np.mean([v.verdict == v.truth for v in report.verdicts])
        assert report.accuracy == pytest.approx(float(manual))


class TestNearestCentroid:
    def test_identical_inputs_identical_accuracy(self):
        corpus, ds = toy_dataset(per_class=10, seed=9)
        labels = ds.class_ids()
        a = nearest_centroid_accuracy(ds.images, labels, ds.images, labels)
        b = nearest_centroid_accuracy(ds.images, labels, ds.images, labels)
        assert a == b

    def test_separable_upright_classes(self):
        corpus = render_glyph_corpus(2, 20, 24, seed=10)
        acc = nearest_centroid_accuracy(
            corpus.images[::2], corpus.labels[::2], corpus.images[1::2], corpus.labels[1::2]
        )
        assert acc >= 0.95

    def test_oracle_standardization_beats_raw(self):
        profile = SymmetryProfile(specs=(SymmetrySpec(UNIFORM, 90.0), SymmetrySpec(UNIFORM, 90.0)))
        train_c = render_glyph_corpus(2, 40, 16, seed=11)
        test_c = render_glyph_corpus(2, 20, 16, seed=12)
        train_ds = build_dataset(train_c, profile, seed=13)
        test_ds = build_dataset(test_c, profile, seed=14)
        std_train = standardize_dataset(train_ds, psi_angles=train_ds.applied_angles())
        std_test = standardize_dataset(test_ds, psi_angles=test_ds.applied_angles())
        raw = nearest_centroid_accuracy(
            train_ds.images, train_ds.class_ids(), test_ds.images, test_ds.class_ids())
        std = nearest_centroid_accuracy(
            std_train.images, train_ds.class_ids(), std_test.images, test_ds.class_ids())
        assert std > raw


class TestOracleVerdictCoincidence:
    def test_oracle_outputs_give_perfect_accuracy(self):
        # with the true angle as the estimate and the true spec parameter as
        # the boundary, the verdict rule coincides with the ground-truth rule
        rng = np.random.default_rng(3)
        specs = [SymmetrySpec(UNIFORM, 60.0), SymmetrySpec(GAUSSIAN, 18.0), SymmetrySpec(CYCLIC, 4)]
        for spec in specs:
            boundary = float(spec.param)
            for angle in rng.uniform(-180.0, 180.0, 300):
                assert is_ood(float(angle), boundary, spec.family) == ground_truth_ood(float(angle), spec)


class TestDegeneratePassThrough:
    def test_degenerate_readout_warns_and_passes_through(self):
        import warnings as w

        torch.manual_seed(2)
        bundle = ModelBundle(ModelConfig(**SMALL), with_theta=False)
        with torch.no_grad():
            bundle.psi.score_head.weight.zero_()
            bundle.psi.score_head.bias.zero_()
        img = render_glyph_corpus(1, 1, 16, seed=30).images[0]
        with pytest.warns(UserWarning, match="degenerate"):
            out = standardize_sample(img, bundle)
        assert np.array_equal(out, img)
