"""Command-line entry point wiring the full pipeline.

Subcommands: synth (write a synthetic dataset), train (pretraining plus
self-training iterations), infer (residual / filtered / overlay outputs for
the test set), eval (AUROC and AUPRO from inference outputs), grade
(per-region property and grade listing for one image).

Two profiles bundle the defaults: ``paper`` (256x256, 200 epochs, 5
iterations, filter radius 16) and ``desk`` (64x64, 50 epochs, 3 iterations,
radius 4). ``desk`` is the default profile. Machine-readable outputs are
line-delimited JSON records.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import model as model_mod
from . import pseudolabel as pl_mod
from .fuzzy import load_builtin_rules, load_knowledge_base
from .imagecore import (GrayImage, binarize, load_gray_png, load_mask_png,
                        load_residual, save_mask_png, save_residual)
from .metrics import EvalBatch, aupro, auroc
from .model import LossSpec, ModelConfig, TrainConfig, init_params
from .postfilter import GuidedFilterConfig, guided_filter
from .pseudolabel import LabelingConfig, grade_regions
from .regions import connected_components, compute_properties, standardize
from .selftrain import KistConfig, kist

log = logging.getLogger("kist")


@dataclass(frozen=True)
class Profile:
    input_size: int
    epochs: int
    contrastive_epochs: int
    iterations: int
    gf_radius: int
    learning_rate: float
    lam: float


PROFILES = {
    "paper": Profile(input_size=256, epochs=200, contrastive_epochs=200,
                     iterations=5, gf_radius=16, learning_rate=1e-3, lam=1.0),
    "desk": Profile(input_size=64, epochs=50, contrastive_epochs=20,
                    iterations=3, gf_radius=4, learning_rate=1e-3, lam=20.0),
}


def _write_records(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def _load_rules(arg: str):
    if arg in ("kole_mvtec", "mtd"):
        return load_builtin_rules(arg)
    return load_knowledge_base(arg)


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    mix = None
    if args.mix:
        mix = {}
        for part in args.mix.split(","):
            fam, _, frac = part.partition("=")
            mix[fam.strip()] = float(frac)
    kwargs = dict(size=args.size, n_normal=args.normals,
                  n_anomalous=args.anomalous, n_test=args.tests,
                  seed=args.seed)
    if mix is not None:
        kwargs["mix"] = mix
    spec = data_mod.SynthSpec(**kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = data_mod.write_synthetic(spec, out)
    print(f"wrote {len(ds.normal)} normal / {len(ds.anomalous)} anomalous / "
          f"{len(ds.test)} test images to {out}")
    return 0


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    profile = PROFILES[args.profile]
    size = args.size or profile.input_size
    epochs = args.epochs if args.epochs is not None else profile.epochs
    iters = (args.iterations if args.iterations is not None
             else profile.iterations)

    dataset = data_mod.load_dataset(args.dataset, size=size)
    kb = _load_rules(args.rules)

    lam = args.lam if args.lam is not None else profile.lam
    lr = args.lr if args.lr is not None else profile.learning_rate
    model_cfg = ModelConfig(input_size=size, seed=args.seed)
    labeling = LabelingConfig(s=args.step_factor, alpha=args.alpha)
    pretrain = TrainConfig(epochs=epochs, batch_size=args.batch_size,
                           learning_rate=lr, augment=not args.no_augment,
                           seed=args.seed)
    contrastive = TrainConfig(epochs=(args.contrastive_epochs
                                      or profile.contrastive_epochs),
                              batch_size=args.batch_size,
                              learning_rate=args.contrastive_lr or lr,
                              lam=lam, augment=False, seed=args.seed + 1)
    config = KistConfig(iterations=iters, labeling=labeling,
                        pretrain=pretrain, train=contrastive)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [{"event": "config", "profile": args.profile, "size": size,
                "epochs": epochs, "iterations": iters, "s": labeling.s,
                "alpha": labeling.alpha, "lambda": lam,
                "batch_size": args.batch_size, "lr": lr,
                "seed": args.seed, "rules": args.rules}]

    params = init_params(model_cfg)
    saved = iter(range(iters + 1))

    # called once after pretraining (iter_000, the baseline) and once per
    # self-training iteration
    def snapshot(p):
        model_mod.save_checkpoint(p, out / f"iter_{next(saved):03d}.ckpt")
        return {}

    params, pre_trace, reports = kist(dataset, kb, config, params,
                                      evaluate=snapshot)
    records.append({"event": "pretrain", "epochs": epochs,
                    "final_loss": pre_trace[-1] if pre_trace else None,
                    "loss_trace": pre_trace})
    for rep in reports:
        records.append({
            "event": "iteration", "iteration": rep.iteration,
            "residual_mu": rep.stats.mu, "residual_sigma": rep.stats.sigma,
            "thresholds": list(rep.thresholds),
            "label_pixel_counts": list(rep.label_pixel_counts),
            "final_loss": rep.loss_trace[-1] if rep.loss_trace else None,
        })
    model_mod.save_checkpoint(params, out / "model.ckpt")
    records.append({"event": "done", "checkpoint": "model.ckpt",
                    "iterations_completed": len(reports)})
    _write_records(out / "report.jsonl", records)
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# infer

def cmd_infer(args) -> int:
    profile = PROFILES[args.profile]
    params = model_mod.load_checkpoint(args.checkpoint)
    size = params.config.input_size
    dataset = data_mod.load_dataset(args.dataset, size=size)
    radius = args.gf_radius or profile.gf_radius
    gf_cfg = GuidedFilterConfig(radius=radius, epsilon=args.gf_eps)

    stats = pl_mod.residual_stats(params, dataset.normal)
    overlay_t = stats.mu + 2.0 * stats.sigma

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = [{"event": "config", "checkpoint": str(args.checkpoint),
                "gf_radius": radius, "gf_eps": args.gf_eps,
                "postprocess": not args.no_postprocess,
                "residual_mu": stats.mu, "residual_sigma": stats.sigma,
                "overlay_threshold": overlay_t}]
    for i, (img, _mask) in enumerate(dataset.test):
        e = model_mod.residual(params, img)
        save_residual(e, out / f"res_{i:04d}.png")
        if args.no_postprocess:
            final = e
        else:
            final = guided_filter(img, e, gf_cfg)
            save_residual(final, out / f"filt_{i:04d}.png")
        save_mask_png(binarize(final, overlay_t), out / f"overlay_{i:04d}.png")
        records.append({"event": "image", "index": i,
                        "residual_max": float(e.data.max()),
                        "overlay_pixels": int((final.data > overlay_t).sum())})
    _write_records(out / "infer.jsonl", records)
    print(f"inference outputs written to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    infer_dir = Path(args.infer_dir)
    cfg_rec = read_records(infer_dir / "infer.jsonl")[0]
    use_filtered = cfg_rec.get("postprocess", True) and not args.raw
    prefix = "filt" if use_filtered else "res"

    scores = [load_residual(p)
              for p in sorted(infer_dir.glob(f"{prefix}_*.png.f32"))]
    if not scores:
        print(f"error: no {prefix}_*.png.f32 files in {infer_dir}",
              file=sys.stderr)
        return 1
    dataset = data_mod.load_dataset(args.dataset, size=scores[0].height)
    truths = [mask for _img, mask in dataset.test]
    batch = EvalBatch(tuple(scores), tuple(truths))
    a = auroc(batch)
    p = aupro(batch, fpr_limit=args.fpr_limit)
    n_pix = sum(s.data.size for s in scores)
    records = [
        {"event": "metric", "name": "auroc", "value": a, "pixels": n_pix},
        {"event": "metric", "name": "aupro", "value": p,
         "fpr_limit": args.fpr_limit, "pixels": n_pix},
    ]
    out = Path(args.out) if args.out else infer_dir
    _write_records(out / "metrics.jsonl", records)
    print(f"{'metric':<10}{'value':>10}")
    print(f"{'auroc':<10}{a:>10.4f}")
    print(f"{'aupro':<10}{p:>10.4f}  (fpr_limit={args.fpr_limit})")
    return 0


# ---------------------------------------------------------------------------
# grade

def cmd_grade(args) -> int:
    kb = _load_rules(args.rules)
    img = load_gray_png(args.image)
    if args.mask:
        mask = load_mask_png(args.mask)
        regions = connected_components(mask)
        graded = []
        for reg in regions:
            props = standardize(compute_properties(reg, img), kb.gammas)
            from .fuzzy import anomaly_grade, rule_grade
            grades = [rule_grade(r, kb, props) for r in kb.rules]
            graded.append((reg, props, grades, anomaly_grade(kb, props)))
    elif args.checkpoint and args.threshold is not None:
        params = model_mod.load_checkpoint(args.checkpoint)
        if img.data.shape != (params.config.input_size,) * 2:
            img = GrayImage(data_mod._resize_bilinear(
                img.data, params.config.input_size))
        e = model_mod.residual(params, img)
        from .fuzzy import rule_grade
        graded = []
        for reg, g in grade_regions(e, img, args.threshold, kb):
            props = standardize(compute_properties(reg, img), kb.gammas)
            grades = [rule_grade(r, kb, props) for r in kb.rules]
            graded.append((reg, props, grades, g))
    else:
        print("grade: need --mask, or --checkpoint with --threshold",
              file=sys.stderr)
        return 2

    graded.sort(key=lambda item: -item[3])
    for n, (reg, props, grades, g) in enumerate(graded):
        top, left, h, w = reg.bounding_box
        print(f"region {n}: bbox=({top},{left},{h},{w}) pixels={reg.size} "
              f"grade={g:.4f}")
        for name in ("area", "gray", "shape", "unevenness", "symmetry"):
            print(f"  {name:<12} raw={props.raw[name]:.6f} "
                  f"std={props.standardized[name]:.4f}")
        for i, rg in enumerate(grades):
            print(f"  rule {i}: grade={rg:.4f}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kist",
                                description="Knowledge-informed self-training "
                                "anomaly localization pipeline")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--normals", type=int, default=60)
    sp.add_argument("--anomalous", type=int, default=3)
    sp.add_argument("--tests", type=int, default=20)
    sp.add_argument("--mix", default=None,
                    help="comma list family=fraction (fractions sum to 1)")
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="pretrain + self-training iterations")
    tp.add_argument("--dataset", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--rules", default="kole_mvtec",
                    help="builtin name (kole_mvtec, mtd) or a rule file path")
    tp.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    tp.add_argument("--size", type=int, default=None)
    tp.add_argument("--epochs", type=int, default=None)
    tp.add_argument("--contrastive-epochs", type=int, default=None)
    tp.add_argument("--iterations", type=int, default=None)
    tp.add_argument("--batch-size", type=int, default=32)
    tp.add_argument("--lr", type=float, default=None,
                    help="learning rate (default from profile)")
    tp.add_argument("--contrastive-lr", type=float, default=None)
    tp.add_argument("--lam", type=float, default=None,
                    help="suppression weight (default from profile)")
    tp.add_argument("--step-factor", type=float, default=0.3, dest="step_factor")
    tp.add_argument("--alpha", type=float, default=0.8)
    tp.add_argument("--no-augment", action="store_true")
    tp.add_argument("--seed", type=int, default=7)
    tp.set_defaults(func=cmd_train)

    ip = sub.add_parser("infer", help="residual/filtered/overlay outputs")
    ip.add_argument("--checkpoint", required=True)
    ip.add_argument("--dataset", required=True)
    ip.add_argument("--out", required=True)
    ip.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    ip.add_argument("--gf-radius", type=int, default=None)
    ip.add_argument("--gf-eps", type=float, default=1e-3)
    ip.add_argument("--no-postprocess", action="store_true")
    ip.set_defaults(func=cmd_infer)

    ep = sub.add_parser("eval", help="AUROC/AUPRO metrics report")
    ep.add_argument("--infer-dir", required=True)
    ep.add_argument("--dataset", required=True)
    ep.add_argument("--out", default=None)
    ep.add_argument("--fpr-limit", type=float, default=0.3)
    ep.add_argument("--raw", action="store_true",
                    help="evaluate raw residuals even if filtered outputs exist")
    ep.set_defaults(func=cmd_eval)

    gp = sub.add_parser("grade", help="per-region property/grade listing")
    gp.add_argument("--image", required=True)
    gp.add_argument("--rules", default="kole_mvtec")
    gp.add_argument("--mask", default=None)
    gp.add_argument("--checkpoint", default=None)
    gp.add_argument("--threshold", type=float, default=None)
    gp.set_defaults(func=cmd_grade)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
