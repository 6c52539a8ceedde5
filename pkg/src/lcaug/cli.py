"""Command-line surface: corpus generation, augmentation preview, single
transforms, splitting, training, search, evaluation and reporting.

Exit codes: 0 success, 2 validation failure, 3 data failure, 4 trainer
failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import transforms as T
from .classifier import (
    LinearSoftmaxModel,
    TrainerConfig,
    TrainerError,
    load_sample_images,
    train_reference,
)
from .dataset import (
    HAM10000,
    LabelSet,
    ManifestError,
    SynthSpec,
    UnknownLabelError,
    infer_labels,
    class_weights,
    group_kfold,
    holdout_split,
    load_manifest,
    synth_dataset,
)
from .image import PpmError, load_image, save_ppm
from .metrics import UndefinedMetricError, full_report
from .policy import (
    AppliedRecord,
    LcaPolicy,
    apply_policy,
    apply_sub_policy,
    derive_rng,
    replay_record,
)
from .search import (
    SearchError,
    SearchGrid,
    SearchJournal,
    emit_report,
    multi_crop_predict,
    run_search,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_TRAINER = 4
EXIT_IO = 5

log = logging.getLogger("lcaug")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_manifest(path: str):
    p = Path(path)
    csv_path = p / "manifest.csv" if p.is_dir() else p
    try:
        data = csv_path.read_bytes()
    except FileNotFoundError as exc:
        raise CliError(f"manifest not found: {csv_path}", EXIT_IO) from exc
    try:
        manifest = load_manifest(data)
    except UnknownLabelError:
        # Non-HAM10000 label set: infer the classes from the file itself.
        try:
            manifest = load_manifest(data, infer_labels(data))
        except ManifestError as exc:
            raise CliError(str(exc), EXIT_DATA) from exc
    except ManifestError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    if p.is_dir():
        # Resolve relative sample paths against the corpus directory.
        fixed = []
        for s in manifest.samples:
            sp = Path(s.path)
            if not sp.is_absolute():
                sp = p / sp
            fixed.append(type(s)(s.image_id, s.lesion_id, s.label, str(sp)))
        manifest = type(manifest)(tuple(fixed), manifest.labels)
    return manifest


def _check_out(path: Path, force: bool):
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite", EXIT_VALIDATION)


def _print_config(args: argparse.Namespace):
    shown = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    log.info("effective config: %s", json.dumps(shown, default=str, sort_keys=True))


def cmd_synth(args) -> int:
    if args.per_class <= 0:
        raise CliError("--per-class must be positive", EXIT_VALIDATION)
    labels = HAM10000 if args.classes == 7 else LabelSet(
        tuple(f"C{i}" for i in range(args.classes))
    )
    spec = SynthSpec(
        labels=labels,
        per_class=args.per_class,
        size=args.size,
        seed=args.seed,
        images_per_lesion=args.images_per_lesion,
    )
    manifest = synth_dataset(spec, args.out)
    counts = dict(zip(labels.names, manifest.class_counts.tolist()))
    log.info("wrote %d images to %s; class counts %s", manifest.total, args.out, counts)
    return EXIT_OK


def _load_policy(args) -> LcaPolicy:
    if args.policy:
        try:
            return LcaPolicy.from_json(Path(args.policy).read_text())
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CliError(f"bad policy file {args.policy}: {exc}", EXIT_VALIDATION) from exc
    return LcaPolicy(probability=args.probability, seed=args.seed)


def cmd_augment(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        image = load_image(Path(args.image).read_bytes())
    except FileNotFoundError as exc:
        raise CliError(f"image not found: {args.image}", EXIT_IO) from exc
    except PpmError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    policy = _load_policy(args)

    if args.replay:
        docs = json.loads(Path(args.replay).read_text())
        for i, doc in enumerate(docs):
            record = AppliedRecord.from_dict(doc)
            aug = replay_record(image, [image], policy, record)
            (out / f"aug_{i:03d}.ppm").write_bytes(save_ppm(aug))
        log.info("replayed %d records to %s", len(docs), out)
        return EXIT_OK

    records = []
    for i in range(args.count):
        rng = derive_rng(policy.seed, 2, i)
        if args.sub_policy is not None:
            if not args.force:
                raise CliError("--sub-policy requires --force", EXIT_VALIDATION)
            subs = [sp for sp in policy.sub_policies if sp.id == args.sub_policy]
            if not subs:
                raise CliError(f"no sub-policy with id {args.sub_policy}", EXIT_VALIDATION)
            aug, record = apply_sub_policy(image, [image], subs[0], rng)
        else:
            aug, record = apply_policy(image, [image], policy, rng)
        (out / f"aug_{i:03d}.ppm").write_bytes(save_ppm(aug))
        records.append(record.to_dict())
    (out / "records.json").write_text(json.dumps(records, indent=2))
    log.info("wrote %d augmented images + records.json to %s", args.count, out)
    return EXIT_OK


def cmd_op(args) -> int:
    try:
        image = load_image(Path(args.image).read_bytes())
    except FileNotFoundError as exc:
        raise CliError(f"image not found: {args.image}", EXIT_IO) from exc
    except PpmError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    rng = derive_rng(args.seed, 3)
    m = args.magnitude
    ops = {
        "color": lambda: T.enhance_color(image, m),
        "contrast": lambda: T.enhance_contrast(image, m),
        "brightness": lambda: T.enhance_brightness(image, m),
        "sharpness": lambda: T.enhance_sharpness(image, m),
        "solarize-add": lambda: T.solarize_add(image, int(m)),
        "posterize": lambda: T.posterize(image, int(m)),
        "equalize": lambda: T.equalize(image),
        "equalize-yuv": lambda: T.equalize_yuv(image),
        "autocontrast": lambda: T.autocontrast(image),
        "color-shift": lambda: T.color_shift(
            image, int(rng.integers(-20, 21)), int(rng.integers(-20, 21)), int(rng.integers(-20, 21))
        ),
        "gaussian-noise": lambda: T.gaussian_noise(image, m, rng),
        "rotate": lambda: T.rotate(image, m),
        "shear-x": lambda: T.shear_x(image, m),
        "shear-y": lambda: T.shear_y(image, m),
        "scale": lambda: T.scale(image, m),
        "flip-horizontal": lambda: T.flip(image, "horizontal"),
        "flip-vertical": lambda: T.flip(image, "vertical"),
        "cutout": lambda: T.cutout(
            image, int(m), int(rng.integers(0, image.width)), int(rng.integers(0, image.height))
        ),
    }
    if args.name not in ops:
        raise CliError(f"unknown operation {args.name!r}; one of {sorted(ops)}", EXIT_VALIDATION)
    needs_m = args.name not in {
        "equalize", "equalize-yuv", "autocontrast", "flip-horizontal",
        "flip-vertical", "color-shift",
    }
    if needs_m and m is None:
        raise CliError(f"operation {args.name} requires --magnitude", EXIT_VALIDATION)
    try:
        result = ops[args.name]()
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    Path(args.out).write_bytes(save_ppm(result))
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = _read_manifest(args.manifest)
    try:
        folds = group_kfold(manifest, args.k, args.seed)
    except ManifestError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    out = Path(args.out)
    _check_out(out, args.force)
    out.write_text(json.dumps([f.to_dict() for f in folds], indent=2))
    log.info("wrote %d folds to %s", len(folds), out)
    return EXIT_OK


def _trainer_config(args) -> TrainerConfig:
    try:
        return TrainerConfig(
            max_epochs=args.epochs,
            batch_size=args.batch_size,
            crop_size=args.crop_size,
            feature_side=args.feature_side,
            eval_start=args.eval_start,
            eval_step=args.eval_step,
            eval_end=args.eval_end,
            seed=args.seed,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc


def cmd_train(args) -> int:
    manifest = _read_manifest(args.manifest)
    config = _trainer_config(args)
    policy = _load_policy(args)
    try:
        images = load_sample_images(manifest)
        weights = class_weights(manifest)
        model, _ = train_reference(manifest, images, policy, config, weights, args.seed)
    except (TrainerError, ManifestError) as exc:
        raise CliError(str(exc), EXIT_TRAINER) from exc
    out = Path(args.out)
    _check_out(out, args.force)
    out.write_text(json.dumps(model.to_dict()))
    log.info("wrote trained model to %s", out)
    return EXIT_OK


def cmd_search(args) -> int:
    manifest = _read_manifest(args.manifest)
    config = _trainer_config(args)
    ladder = tuple(args.ladder) if args.ladder else tuple(p for p in (0.1, 0.3, 0.5, 0.7, 0.9))
    grid = SearchGrid(
        ladder=ladder,
        candidates=(("reference", config),),
        k=args.k,
        seed=args.seed,
    )
    journal = SearchJournal(args.journal)
    if journal.path.exists() and not args.resume:
        raise CliError(
            f"journal {journal.path} exists; pass --resume to continue", EXIT_VALIDATION
        )
    train_mf, test_mf = holdout_split(manifest, args.test_fraction, args.seed)
    try:
        selection = run_search(train_mf, test_mf, grid, journal, workers=args.workers)
        emit_report(journal, args.out)
    except SearchError as exc:
        raise CliError(str(exc), EXIT_TRAINER) from exc
    log.info(
        "selected %s at P=%s with test BACC %.4f",
        selection["candidate"], selection["probability"], selection["bacc"],
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = _read_manifest(args.manifest)
    try:
        model = LinearSoftmaxModel.from_dict(json.loads(Path(args.model).read_text()))
    except FileNotFoundError as exc:
        raise CliError(f"model not found: {args.model}", EXIT_IO) from exc
    try:
        images = load_sample_images(manifest)
        scores = np.array(
            [multi_crop_predict(model, img, args.crop_size) for img in images]
        )
        report = full_report(
            scores, [s.label for s in manifest.samples], manifest.labels.names
        )
    except UndefinedMetricError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    except (TrainerError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "metrics.json"
    csv_path = out / "metrics.csv"
    for p in (json_path, csv_path):
        _check_out(p, args.force)
    json_path.write_text(report.to_json())
    csv_path.write_text(report.to_csv())
    log.info("BACC %.4f; wrote %s and %s", report.bacc, json_path, csv_path)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        paths = emit_report(SearchJournal(args.journal), args.out)
    except SearchError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcaug")
    parser.add_argument("--log-level", default=os.environ.get("LCAUG_LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)

    def common_seed(p):
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--images-per-lesion", type=int, default=1)
    p.add_argument("--out", required=True)
    common_seed(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="apply the policy to one image n times")
    p.add_argument("--image", required=True)
    p.add_argument("--policy")
    p.add_argument("--probability", type=float, default=0.5)
    p.add_argument("--count", "-n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--sub-policy", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--replay", help="records.json to replay instead of drawing")
    common_seed(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("op", help="apply one named transform (golden tests)")
    p.add_argument("name")
    p.add_argument("--image", required=True)
    p.add_argument("--magnitude", "-m", type=float)
    p.add_argument("--out", required=True)
    common_seed(p)
    p.set_defaults(func=cmd_op)

    p = sub.add_parser("split", help="write lesion-grouped k-fold assignments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    common_seed(p)
    p.set_defaults(func=cmd_split)

    def trainer_flags(p):
        p.add_argument("--epochs", type=int, default=70)
        p.add_argument("--batch-size", type=int, default=64)
        p.add_argument("--crop-size", type=int, default=224)
        p.add_argument("--feature-side", type=int, default=16)
        p.add_argument("--eval-start", type=int, default=30)
        p.add_argument("--eval-step", type=int, default=5)
        p.add_argument("--eval-end", type=int, default=90)

    p = sub.add_parser("train", help="train the reference classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--policy")
    p.add_argument("--probability", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    trainer_flags(p)
    common_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="two-stage augmentation search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ladder", type=float, nargs="+")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--journal", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument(
        "--workers", type=int, default=int(os.environ.get("LCAUG_WORKERS", "1"))
    )
    trainer_flags(p)
    common_seed(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="multi-crop evaluation of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--crop-size", type=int, default=224)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    common_seed(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="emit report files from a journal")
    p.add_argument("--journal", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    _print_config(args)
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
