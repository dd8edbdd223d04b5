"""Command-line orchestration of the full pipeline.

Stages read their predecessors' artifacts from disk and write their own, so
each is individually resumable. Every stage records a hash of its inputs and
parameters; rerunning with unchanged inputs is a no-op.

Commands: gen-data, pretrain, embed, pseudolabel, train-theta, eval,
standardize, ood, testbed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import datasets as data_mod
from . import pseudolabels as labels_mod
from . import standardize as std_mod
from . import testbed as testbed_mod
from .angles import CYCLIC, SymmetrySpec
from .config import ConfigError, apply_config, parse_flat_config
from .datasets import BaseCorpus, SymDataset, build_dataset, load_dataset, preset_profile, render_glyph_corpus, save_dataset
from .nets import ModelBundle, ModelConfig
from .persist import read_blob, read_manifest, record_stage, stage_hash, stage_is_current, write_blob, write_manifest
from .training import EmbeddingTable, TrainConfig, embed_dataset, predict_boundaries, pretrain, train_theta


def _die(message: str) -> "None":
    raise SystemExit(f"error: {message}")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        _die(f"missing artifact {path}; run {stage} first")
    return path


def _dataset_files(data_dir: Path, split: str) -> list[Path]:
    base = data_dir / split
    return [base / "images.symt", base / "records.csv"]


def _save_corpus(corpus: BaseCorpus, path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    write_blob(path / "images.symt", corpus.images.astype(np.float32))
    write_manifest(path / "labels.csv", ("index", "class_id"),
                   [(i, int(c)) for i, c in enumerate(corpus.labels)])


def _load_corpus(path: Path) -> BaseCorpus:
    images = read_blob(path / "images.symt")
    labels = np.array(
        [int(r[1]) for r in read_manifest(path / "labels.csv", ("index", "class_id"))],
        dtype=np.int64,
    )
    return BaseCorpus(images=images, labels=labels)


def _save_profile(profile, path: Path) -> None:
    rows = []
    for class_id, spec in enumerate(profile.specs):
        param = int(spec.param) if spec.family == CYCLIC else float(spec.param)
        rows.append((class_id, spec.family, repr(param)))
    write_manifest(path, ("class_id", "family", "param"), rows)


def _load_profile(path: Path) -> dict[int, SymmetrySpec]:
    specs = {}
    for row in read_manifest(path, ("class_id", "family", "param")):
        family = row[1]
        param = int(float(row[2])) if family == CYCLIC else float(row[2])
        specs[int(row[0])] = SymmetrySpec(family, param)
    return specs


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = Path(args.out)
    params = [(k, str(getattr(args, k))) for k in
              ("preset", "corpus", "classes", "per_class", "val_per_class",
               "test_per_class", "size", "seed", "idx_dir")]
    digest = stage_hash(params)
    if stage_is_current(out, digest):
        print(f"gen-data: up to date in {out}")
        return 0
    profile = preset_profile(args.preset, args.classes)
    splits = {"train": args.per_class, "val": args.val_per_class, "test": args.test_per_class}
    corpora = {}
    if args.corpus == "glyph":
        for i, (split, per_class) in enumerate(splits.items()):
            corpora[split] = render_glyph_corpus(args.classes, per_class, args.size,
                                                 seed=args.seed * 1000 + i)
    else:
        idx_dir = Path(args.idx_dir or "")
        names = {
            "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
        for split, (img_name, lbl_name) in names.items():
            img_path, lbl_path = idx_dir / img_name, idx_dir / lbl_name
            if not img_path.exists() or not lbl_path.exists():
                _die(f"idx mode requires {img_path} and {lbl_path}")
            corpora[split] = data_mod.load_idx_corpus(img_path, lbl_path, pad_to=args.size)
        # carve a validation corpus off the training one
        train = corpora["train"]
        n_val = min(len(train.images) // 6, args.val_per_class * args.classes)
        corpora["val"] = BaseCorpus(train.images[:n_val], train.labels[:n_val])
        corpora["train"] = BaseCorpus(train.images[n_val:], train.labels[n_val:])
    for i, (split, corpus) in enumerate(corpora.items()):
        ds = build_dataset(corpus, profile, seed=args.seed * 7919 + i, split=split)
        save_dataset(ds, out / split)
        if split == "test":
            _save_corpus(corpus, out / "corpus_test")
    _save_profile(profile, out / "profile.csv")
    record_stage(out, digest)
    print(f"gen-data: wrote {', '.join(corpora)} under {out}")
    return 0


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        image_size=args.image_size,
        k_group=args.k_group,
        d_inv=args.d_inv,
        enc_channels=tuple(int(c) for c in args.enc_channels.split(",")),
        psi_channels=tuple(int(c) for c in args.psi_channels.split(",")),
        theta_channels=tuple(int(c) for c in args.theta_channels.split(",")),
        family=args.family,
    )


def cmd_pretrain(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    inputs = [_require(p, "gen-data") for p in _dataset_files(data_dir, "train")]
    inputs += [p for p in _dataset_files(data_dir, "val") if p.exists()]
    params = [(k, str(getattr(args, k))) for k in
              ("epochs", "lr", "warmup", "lambda2", "batch_size", "seed", "image_size",
               "k_group", "d_inv", "enc_channels", "psi_channels", "theta_channels", "family")]
    digest = stage_hash(params, inputs)
    if stage_is_current(out, digest) and (out / "checkpoint" / "config.txt").exists():
        print(f"pretrain: up to date in {out}")
        return 0
    train_ds = load_dataset(data_dir / "train")
    val_ds = load_dataset(data_dir / "val") if (data_dir / "val").exists() else None
    model_cfg = _model_config_from_args(args)
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, warmup_epochs=args.warmup,
                      lambda2=args.lambda2, batch_size=args.batch_size, seed=args.seed)
    t0 = time.perf_counter()
    bundle, log = pretrain(train_ds, model_cfg, cfg, val_ds)
    bundle.save(out / "checkpoint")
    log.to_csv(out / "pretrain_log.csv")
    record_stage(out, digest)
    print(f"pretrain: best val loss {log.best_val:.6f} at epoch {log.best_epoch} "
          f"({time.perf_counter() - t0:.1f}s); checkpoint in {out / 'checkpoint'}")
    return 0


def cmd_embed(args) -> int:
    data_dir, model_dir, out = Path(args.data), Path(args.model), Path(args.out)
    ckpt = _require(model_dir / "checkpoint" / "config.txt", "pretrain").parent
    inputs = _dataset_files(data_dir, args.split) + sorted(ckpt.glob("*.symt"))
    digest = stage_hash([("split", args.split)], [p for p in inputs if p.exists()])
    table_dir = out / f"embed_{args.split}"
    if stage_is_current(table_dir, digest) and (table_dir / "latents.symt").exists():
        print(f"embed: up to date in {table_dir}")
        return 0
    ds = load_dataset(data_dir / args.split)
    bundle = ModelBundle.load(ckpt)
    table = embed_dataset(bundle, ds)
    table.save(table_dir)
    record_stage(table_dir, digest)
    print(f"embed: wrote {len(table.sample_ids)} rows to {table_dir}")
    return 0


def cmd_pseudolabel(args) -> int:
    emb_dir = Path(args.embeddings)
    out = Path(args.out)
    _require(emb_dir / "latents.symt", "embed")
    inputs = [emb_dir / "latents.symt", emb_dir / "angles.symt", emb_dir / "ids.csv"]
    digest = stage_hash([("family", args.family), ("k", str(args.k))], inputs)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "pseudolabels.csv"
    if stage_is_current(out, digest) and target.exists():
        print(f"pseudolabel: up to date in {target}")
        return 0
    table = EmbeddingTable.load(emb_dir)
    if args.k >= len(table.sample_ids):
        _die(f"k={args.k} must be smaller than the embedding table size {len(table.sample_ids)}")
    estimates = labels_mod.pseudolabels_for_dataset(table, args.family, args.k)
    labels_mod.save_estimates(estimates, target)
    record_stage(out, digest)
    values = np.array([e.value for e in estimates])
    print(f"pseudolabel: {len(estimates)} labels, mean value {values.mean():.2f}")
    return 0


def cmd_train_theta(args) -> int:
    data_dir, model_dir, out = Path(args.data), Path(args.model), Path(args.out)
    labels_path = Path(args.labels)
    if not labels_path.exists():
        _die(f"missing pseudo-labels {labels_path}; run pseudolabel first")
    ckpt = _require(model_dir / "checkpoint" / "config.txt", "pretrain").parent
    inputs = _dataset_files(data_dir, "train") + [labels_path] + sorted(ckpt.glob("*.symt"))
    params = [(k, str(getattr(args, k))) for k in ("epochs", "lr", "warmup", "batch_size", "seed")]
    digest = stage_hash(params, [p for p in inputs if p.exists()])
    if stage_is_current(out, digest) and (out / "checkpoint" / "config.txt").exists():
        print(f"train-theta: up to date in {out}")
        return 0
    train_ds = load_dataset(data_dir / "train")
    bundle = ModelBundle.load(ckpt)
    targets = labels_mod.load_estimates(labels_path)
    cfg = TrainConfig.theta_defaults(epochs=args.epochs, lr=args.lr, warmup_epochs=args.warmup,
                                     batch_size=args.batch_size, seed=args.seed)
    log = train_theta(bundle, train_ds, targets, cfg)
    bundle.save(out / "checkpoint")
    log.to_csv(out / "theta_log.csv")
    record_stage(out, digest)
    print(f"train-theta: best val loss {log.best_val:.6f} at epoch {log.best_epoch}")
    return 0


def _try_plot_bars(rows, path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    classes = [r[0] for r in rows]
    width = 0.4
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([c - width / 2 for c in classes], [r[1] for r in rows], width, label="true")
    ax.bar([c + width / 2 for c in classes], [r[2] for r in rows], width, label="predicted")
    ax.set_xlabel("class")
    ax.set_ylabel("symmetry level")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _try_plot_density(per_class_hist, bin_centers, path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    for class_id, hist in per_class_hist.items():
        ax.plot(bin_centers, hist, label=f"class {class_id}")
    ax.set_xlabel("estimated rotation (deg)")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def class_level_metrics(predictions: np.ndarray, class_ids: np.ndarray,
                        true_levels: dict[int, float]) -> list[tuple[int, float, float, float]]:
    """Per-class rows (class, true level, mean prediction, MAE), class-ordered."""
    rows = []
    for class_id in sorted(set(int(c) for c in class_ids)):
        mask = class_ids == class_id
        truth = float(true_levels[class_id])
        mean_pred = float(predictions[mask].mean())
        mae = float(np.abs(predictions[mask] - truth).mean())
        rows.append((class_id, truth, mean_pred, mae))
    return rows


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    data_dir, model_dir, out = Path(args.data), Path(args.model), Path(args.out)
    ckpt = _require(model_dir / "checkpoint" / "config.txt", "train-theta").parent
    test_ds = load_dataset(data_dir / "test")
    bundle = ModelBundle.load(ckpt)
    if bundle.theta is None:
        _die("checkpoint has no boundary network; run train-theta first")
    out.mkdir(parents=True, exist_ok=True)
    boundaries = predict_boundaries(bundle, test_ds)
    angles = embed_dataset(bundle, test_ds).angles
    class_ids = test_ds.class_ids()
    true_levels = {r.class_id: float(r.spec.param) for r in test_ds.records}
    rows = class_level_metrics(boundaries, class_ids, true_levels)
    write_manifest(out / "metrics.csv", ("class", "true_theta", "mean_theta", "mae"),
                   [(c, repr(t), repr(m), repr(e)) for c, t, m, e in rows])
    edges = np.linspace(-180.0, 180.0, 73)
    centers = 0.5 * (edges[:-1] + edges[1:])
    density_rows = []
    per_class_hist = {}
    for class_id in sorted(set(int(c) for c in class_ids)):
        hist, _ = np.histogram(angles[class_ids == class_id], bins=edges, density=True)
        per_class_hist[class_id] = hist
        density_rows += [(class_id, repr(float(c)), repr(float(h))) for c, h in zip(centers, hist)]
    write_manifest(out / "psi_density.csv", ("class", "bin_center", "density"), density_rows)
    _try_plot_bars(rows, out / "levels.png")
    _try_plot_density(per_class_hist, centers, out / "psi_density.png")
    print("eval: model selection by validation loss = full training objective")
    for class_id, true_level, mean_pred, mae in rows:
        print(f"  class {class_id}: true {true_level:.2f}  mean predicted {mean_pred:.2f}  MAE {mae:.2f}")
    print(f"eval: {time.perf_counter() - t0:.1f}s over {len(test_ds)} test samples")
    return 0


def cmd_standardize(args) -> int:
    data_dir, model_dir, out = Path(args.data), Path(args.model), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = {split: load_dataset(data_dir / split) for split in ("train", "test")}
    if args.oracle:
        std = {s: std_mod.standardize_dataset(ds, psi_angles=ds.applied_angles())
               for s, ds in raw.items()}
    else:
        ckpt = _require(model_dir / "checkpoint" / "config.txt", "pretrain").parent
        bundle = ModelBundle.load(ckpt)
        std = {s: std_mod.standardize_dataset(ds, bundle) for s, ds in raw.items()}
    for split, sds in std.items():
        ds_out = SymDataset(images=np.clip(sds.images, 0.0, 1.0), records=sds.records, split=split)
        save_dataset(ds_out, out / f"standardized_{split}")
        write_manifest(
            out / f"residuals_{split}.csv",
            ("sample_id", "true_angle", "applied_inverse", "residual"),
            [(r.sample_id, repr(r.applied_angle), repr(float(inv)), repr(float(res)))
             for r, inv, res in zip(sds.records, sds.applied_inverse, sds.residual)],
        )
    raw_acc, std_acc = std_mod.downstream_compare(raw["train"], raw["test"], std["train"], std["test"])
    (out / "downstream.txt").write_text(
        f"nearest_centroid_raw = {raw_acc:.4f}\nnearest_centroid_standardized = {std_acc:.4f}\n")
    res_std = float(np.std(std["test"].residual))
    raw_std = float(np.std(raw["test"].applied_angles()))
    print(f"standardize: residual std {res_std:.2f} deg (raw applied std {raw_std:.2f}); "
          f"centroid accuracy raw {raw_acc:.3f} -> standardized {std_acc:.3f}")
    return 0


def cmd_ood(args) -> int:
    data_dir, model_dir, out = Path(args.data), Path(args.model), Path(args.out)
    ckpt = _require(model_dir / "checkpoint" / "config.txt", "train-theta").parent
    corpus = _load_corpus(_require(data_dir / "corpus_test", "gen-data"))
    specs = _load_profile(_require(data_dir / "profile.csv", "gen-data"))
    bundle = ModelBundle.load(ckpt)
    if bundle.theta is None:
        _die("checkpoint has no boundary network; run train-theta first")
    report = std_mod.evaluate_ood(corpus, specs, bundle, seed=args.seed)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "ood_verdicts.csv")
    (out / "ood_accuracy.txt").write_text(f"{report.accuracy:.4f}\n")
    print(f"ood: accuracy {report.accuracy:.4f} over {len(report.verdicts)} rotated inputs")
    return 0


def cmd_testbed(args) -> int:
    t0 = time.perf_counter()
    reports = testbed_mod.default_sweep(seed=args.seed)
    print(testbed_mod.render_report(reports))
    print(f"testbed: {time.perf_counter() - t0:.2f}s")
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_model_flags(sp) -> None:
    sp.add_argument("--image-size", type=int, default=32)
    sp.add_argument("--k-group", type=int, default=16)
    sp.add_argument("--d-inv", type=int, default=64)
    sp.add_argument("--enc-channels", default="16,32,32,64")
    sp.add_argument("--psi-channels", default="8,16,16,32")
    sp.add_argument("--theta-channels", default="8,16,16,32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symlevel",
                                     description="Self-supervised rotation-symmetry level detection")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="generate train/val/test symmetry datasets")
    sp.add_argument("--config")
    sp.add_argument("--preset", default="rot60")
    sp.add_argument("--corpus", choices=("glyph", "idx"), default="glyph")
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--val-per-class", type=int, default=40)
    sp.add_argument("--test-per-class", type=int, default=40)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--idx-dir", default=os.environ.get("SYMLEVEL_IDX_DIR", ""),
                    help="directory with MNIST-format IDX files (or set SYMLEVEL_IDX_DIR)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("pretrain", help="joint pretraining of encoder/decoder/estimator")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=400)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--lambda2", type=float, default=0.03125)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--family", choices=("uniform", "gaussian", "cyclic"), default="uniform")
    _add_model_flags(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("embed", help="embed a dataset split with a trained model")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", default="train")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("pseudolabel", help="estimate per-sample symmetry levels from neighborhoods")
    sp.add_argument("--config")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--family", choices=("uniform", "gaussian", "cyclic"), default="uniform")
    sp.add_argument("--k", type=int, default=45)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pseudolabel)

    sp = sub.add_parser("train-theta", help="train the boundary network on pseudo-labels")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=150)
    sp.add_argument("--lr", type=float, default=0.001)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_theta)

    sp = sub.add_parser("eval", help="per-class symmetry level metrics and plots")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("standardize", help="reorient data to its centers of symmetry")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", default="")
    sp.add_argument("--oracle", action="store_true",
                    help="use ground-truth applied angles instead of the model")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_standardize)

    sp = sub.add_parser("ood", help="out-of-distribution symmetry detection on rotated inputs")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ood)

    sp = sub.add_parser("testbed", help="run the analytic proposition checks")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_testbed)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv if a.startswith("--")}
        allowed = {k for k in vars(args) if k not in ("command", "func", "config")}
        try:
            apply_config(args, parse_flat_config(args.config), allowed, explicit)
        except ConfigError as exc:
            _die(str(exc))
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        _die(str(exc))


if __name__ == "__main__":
    sys.exit(main())
