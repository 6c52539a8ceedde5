"""End-to-end acceptance gate.

Each test covers one numbered acceptance criterion and prints a single
pass/fail line. The desk-scale search (criterion 12) runs the full
two-stage pipeline three times (fresh, repeat, interrupted + resumed) on a
7-class synthetic corpus, so this module takes several minutes.
"""

import json
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from lcaug import transforms as T
from lcaug.classifier import (
    TrainerConfig,
    load_sample_images,
    loss_grad_logits,
    lr_schedule,
    softmax,
    train_reference,
    weighted_ce_loss,
)
from lcaug.dataset import (
    HAM10000,
    DatasetManifest,
    LabelSet,
    SampleMeta,
    SynthSpec,
    class_weights,
    group_kfold,
    holdout_split,
    synth_dataset,
)
from lcaug.image import ImageU8, bilinear_sample, save_ppm
from lcaug.metrics import (
    argmax_predictions,
    bacc,
    class_metrics,
    confusion,
    one_vs_rest_counts,
    roc_auc_ovr,
)
from lcaug.policy import (
    AppliedRecord,
    LcaPolicy,
    apply_policy,
    derive_rng,
    lca_default,
    probability_ladder,
    replay_record,
    search_space_size,
)
from lcaug.search import (
    SearchGrid,
    SearchJournal,
    _center_crop,
    emit_report,
    multi_crop_offsets,
    multi_crop_predict,
    run_search,
    stage1_search,
)

from .conftest import random_image
from .test_metrics import brute_force_counts, pairwise_auc


@contextmanager
def criterion(num, desc):
    try:
        yield
    except BaseException:
        print(f"criterion {num:2d}: FAIL - {desc}")
        raise
    print(f"criterion {num:2d}: PASS - {desc}")


def solid(rgb, w=4, h=4):
    return ImageU8(np.full((h, w, 3), rgb, dtype=np.uint8))


# --- desk-scale search shared by criteria 12 and 14 -------------------------

DESK_SEED = 21


def desk_grid():
    config = TrainerConfig(
        max_epochs=4,
        eval_start=2,
        eval_step=2,
        eval_end=4,
        batch_size=32,
        crop_size=128,
        feature_side=16,
    )
    return SearchGrid(
        ladder=tuple(probability_ladder()),
        candidates=(("reference", config),),
        k=5,
        seed=DESK_SEED,
    )


@pytest.fixture(scope="module")
def desk_search(tmp_path_factory):
    """Full two-stage search on a 7-class 100-per-class 256x256 corpus,
    run fresh, repeated with the same seed, and interrupted + resumed."""
    tmp = tmp_path_factory.mktemp("desk")
    spec = SynthSpec(labels=HAM10000, per_class=100, size=256, seed=DESK_SEED)
    manifest = synth_dataset(spec, tmp / "corpus")
    train, test = holdout_split(manifest, 0.2, seed=DESK_SEED)
    grid = desk_grid()

    t0 = time.monotonic()
    journal_a = SearchJournal(tmp / "a.jsonl")
    final_a = run_search(train, test, grid, journal_a, workers=4)
    elapsed = time.monotonic() - t0

    journal_b = SearchJournal(tmp / "b.jsonl")
    final_b = run_search(train, test, grid, journal_b, workers=4)

    # Interrupt run A after its second finished cell, then resume.
    lines = (tmp / "a.jsonl").read_text().splitlines()
    keep = [
        i for i, line in enumerate(lines)
        if json.loads(line)["type"] in ("grid", "cell_result")
    ][:3]
    (tmp / "c.jsonl").write_text("\n".join(lines[i] for i in keep) + "\n")
    journal_c = SearchJournal(tmp / "c.jsonl")
    final_c = run_search(train, test, grid, journal_c, workers=4)

    return {
        "elapsed": elapsed,
        "finals": (final_a, final_b, final_c),
        "journals": (journal_a, journal_b, journal_c),
    }


# --- criteria ---------------------------------------------------------------


def test_criterion_01_identity_suite(rng):
    with criterion(1, "all magnitude-neutral transforms are bit-exact identities in < 1 s"):
        t0 = time.monotonic()
        img = random_image(rng, 9, 7)
        partner = random_image(rng, 9, 7)
        cases = [
            T.enhance_color(img, 1.0),
            T.enhance_contrast(img, 1.0),
            T.enhance_brightness(img, 1.0),
            T.enhance_sharpness(img, 1.0),
            T.posterize(img, 8),
            T.scale(img, 1.0),
            T.rotate(img, 0.0),
            T.shear_x(img, 0.0),
            T.shear_y(img, 0.0),
            T.sample_pairing(img, partner, 0.0),
            T.gaussian_noise(img, 0.0, np.random.default_rng(0)),
            T.cutout(img, 0, 4, 3),
        ]
        for out in cases:
            assert out == img
        assert time.monotonic() - t0 < 1.0


def test_criterion_02_worked_values():
    with criterion(2, "worked transform examples match exactly"):
        assert tuple(T.enhance_color(solid((200, 0, 0)), 0.0).pixels[0, 0]) == (60, 60, 60)

        ch = np.array([[10, 10], [20, 30]], dtype=np.uint8)
        img = ImageU8(np.repeat(ch[..., None], 3, axis=2))
        assert sorted(T.equalize(img).pixels[..., 0].ravel().tolist()) == [0, 0, 128, 255]

        ch = np.array([[50, 75], [100, 100]], dtype=np.uint8)
        img = ImageU8(np.repeat(ch[..., None], 3, axis=2))
        assert T.autocontrast(img).pixels[0, 1, 0] == 128

        assert T.posterize(solid((255, 255, 255)), 4).pixels[0, 0, 0] == 240
        assert T.solarize_add(solid((100, 100, 100)), 50).pixels[0, 0, 0] == 150
        assert (T.sample_pairing(solid((0, 0, 0)), solid((255, 255, 255)), 0.4).pixels == 102).all()


def test_criterion_03_geometric_oracles(rng):
    with criterion(3, "rotate(180) is an exact index permutation; warps match the point oracle within 1"):
        for _ in range(20):
            img = random_image(rng, int(rng.integers(3, 14)), int(rng.integers(3, 14)))
            assert np.array_equal(T.rotate(img, 180.0).pixels, img.pixels[::-1, ::-1])

        img = random_image(rng, 7, 6)
        s = float(rng.uniform(0.6, 1.4))
        m = float(rng.uniform(-0.3, 0.3))
        for out, coeffs in [
            (
                T.scale(img, s),
                (1 / s, 0, (img.width - 1) / 2 * (1 - 1 / s), 0, 1 / s, (img.height - 1) / 2 * (1 - 1 / s)),
            ),
            (T.shear_x(img, m), (1, m, -m * (img.height - 1) / 2, 0, 1, 0)),
            (T.shear_y(img, m), (1, 0, 0, m, 1, -m * (img.width - 1) / 2)),
        ]:
            a, b, c, d, e, f = coeffs
            for y in range(img.height):
                for x in range(img.width):
                    want = bilinear_sample(img, a * x + b * y + c, d * x + e * y + f)
                    assert np.abs(out.pixels[y, x].astype(int) - np.array(want)).max() <= 1


def test_criterion_04_policy_statistics():
    with criterion(4, "firing statistics at P=0.5 within 3-sigma; replay bit-identical"):
        img = random_image(np.random.default_rng(0), 4, 4)
        policy = LcaPolicy(probability=0.5, seed=77)
        n = 12_000
        fired = 0
        per_sub = {sid: 0 for sid in range(1, 13)}
        for i in range(n):
            _, record = apply_policy(img, [img], policy, derive_rng(policy.seed, i))
            if record.fired:
                fired += 1
                per_sub[record.sub_policy_id] += 1
        assert abs(fired - n / 2) <= 3 * np.sqrt(n * 0.25)
        cell_p = 1 / 24
        cell_sigma = np.sqrt(n * cell_p * (1 - cell_p))
        for sid in range(1, 13):
            assert abs(per_sub[sid] - n * cell_p) <= 3 * cell_sigma

        rng = np.random.default_rng(1)
        img = random_image(rng, 16, 16)
        batch = [random_image(rng, 16, 16) for _ in range(3)]
        replay_policy = LcaPolicy(probability=1.0, seed=9)
        for i in range(25):
            out, record = apply_policy(img, batch, replay_policy, derive_rng(9, i))
            again = replay_record(img, batch, replay_policy, AppliedRecord.from_dict(record.to_dict()))
            assert out == again


def test_criterion_05_search_space_count():
    with criterion(5, "default search space counts 60 cells"):
        assert search_space_size(lca_default(), probability_ladder()) == 60


def test_criterion_06_loss_and_gradient(rng):
    with criterion(6, "unit weights reduce to plain CE; gradients match finite differences"):
        for _ in range(50):
            c = int(rng.integers(2, 8))
            probs = rng.dirichlet(np.ones(c))
            t = int(rng.integers(0, c))
            assert weighted_ce_loss(probs, t, np.ones(c)) == -float(
                np.log(max(probs[t], 1e-12))
            )

        eps = 1e-6
        for _ in range(100):
            c = int(rng.integers(2, 6))
            logits = rng.normal(scale=2.0, size=c)
            weights = rng.uniform(0.5, 5.0, c)
            t = int(rng.integers(0, c))
            analytic = loss_grad_logits(logits.copy(), t, weights)
            for j in range(c):
                plus, minus = logits.copy(), logits.copy()
                plus[j] += eps
                minus[j] -= eps
                fd = (
                    weighted_ce_loss(softmax(plus), t, weights)
                    - weighted_ce_loss(softmax(minus), t, weights)
                ) / (2 * eps)
                denom = max(abs(fd), abs(analytic[j]), 1e-8)
                assert abs(analytic[j] - fd) / denom < 1e-4


def test_criterion_07_class_weights(rng):
    with criterion(7, "class weights satisfy w_i * n_i = N for real and random counts"):
        def manifest_from_counts(counts, labels):
            samples = []
            i = 0
            for label, n in enumerate(counts):
                for _ in range(n):
                    samples.append(SampleMeta(f"I{i}", f"L{i}", label))
                    i += 1
            return DatasetManifest(tuple(samples), labels)

        ham_counts = [0] * 7
        for name, n in [("NV", 6705), ("MEL", 1113), ("BKL", 1099), ("BCC", 514),
                        ("AKIEC", 327), ("VASC", 142), ("DF", 115)]:
            ham_counts[HAM10000.index(name)] = n
        mf = manifest_from_counts(ham_counts, HAM10000)
        w = class_weights(mf)
        for i in range(7):
            assert w[i] * ham_counts[i] == pytest.approx(10015, rel=1e-12)

        for _ in range(100):
            c = int(rng.integers(2, 7))
            counts = rng.integers(1, 40, c).tolist()
            labels = LabelSet(tuple(f"K{i}" for i in range(c)))
            w = class_weights(manifest_from_counts(counts, labels))
            total = sum(counts)
            for i in range(c):
                assert w[i] * counts[i] == pytest.approx(total, rel=1e-12)


def test_criterion_08_lr_schedule():
    with criterion(8, "step-decay schedule values, monotonicity, and range guard"):
        config = TrainerConfig()
        assert lr_schedule(0, config) == 1e-3
        assert lr_schedule(20, config) == pytest.approx(1e-4, rel=1e-12)
        assert lr_schedule(65, config) == pytest.approx(1e-8, rel=1e-12)
        rates = [lr_schedule(e, config) for e in range(70)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        with pytest.raises(ValueError):
            lr_schedule(70, config)


def test_criterion_09_metrics_oracle():
    with criterion(9, "1,000 random instances match the counting and pairwise oracles"):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            c = int(rng.integers(2, 6))
            n = int(rng.integers(c, 201))
            truths = np.concatenate([np.arange(c), rng.integers(0, c, n - c)])
            scores = rng.dirichlet(np.ones(c), size=n)
            preds = argmax_predictions(scores)
            cm = confusion(truths, preds, c)
            sens = []
            for i in range(c):
                tp, fp, fn, tn = brute_force_counts(truths, preds, i)
                assert one_vs_rest_counts(cm, i) == (tp, fp, fn, tn)
                if tp + fp > 0:
                    m = class_metrics(cm, i)
                    assert m["precision"] == tp / (tp + fp)
                    assert m["sensitivity"] == tp / (tp + fn)
                    assert m["specificity"] == tn / (tn + fp)
                    assert m["accuracy"] == (tp + tn) / n
                sens.append(tp / (tp + fn))
                assert roc_auc_ovr(scores, truths, i) == pytest.approx(
                    pairwise_auc(scores, truths, i), abs=1e-12
                )
            assert bacc(cm) == pytest.approx(float(np.mean(sens)), abs=1e-15)


def test_criterion_10_multi_crop():
    with criterion(10, "600x450 crop offsets and uniform-image crop equivalence"):
        offsets = multi_crop_offsets(600, 450, 224)
        assert sorted({x for x, _ in offsets}) == [0, 125, 251, 376]
        assert sorted({y for _, y in offsets}) == [0, 75, 151, 226]

        class Probe:
            def predict(self, image):
                mean = image.pixels.mean() / 255.0
                return softmax(np.array([mean, 1 - mean, 0.25]))

        img = ImageU8(np.full((300, 400, 3), 77, dtype=np.uint8))
        model = Probe()
        merged = multi_crop_predict(model, img, 224)
        single = model.predict(_center_crop(img, 224))
        assert np.array_equal(merged, single)


def test_criterion_11_fold_splitter():
    with criterion(11, "1,000 random manifests split lesion-disjoint, complete, balanced"):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n_groups = int(rng.integers(5, 26))
            labels = LabelSet(("x", "y"))
            samples = []
            idx = 0
            for g in range(n_groups):
                for _ in range(int(rng.integers(1, 4))):
                    samples.append(SampleMeta(f"I{idx}", f"G{g}", int(rng.integers(0, 2))))
                    idx += 1
            mf = DatasetManifest(tuple(samples), labels)
            folds = group_kfold(mf, 5, seed=int(rng.integers(0, 10**6)))
            union = set()
            lo, hi = n_groups // 5, -(-n_groups // 5)
            for f in folds:
                assert not (union & f.val_ids)
                union |= f.val_ids
                groups = {}
                for s in mf.samples:
                    side = "val" if s.image_id in f.val_ids else "train"
                    groups.setdefault(s.lesion_id, set()).add(side)
                assert all(len(v) == 1 for v in groups.values())
                val_groups = {s.lesion_id for s in mf.samples if s.image_id in f.val_ids}
                assert lo <= len(val_groups) <= hi
            assert union == {s.image_id for s in mf.samples}


def test_criterion_12_desk_scale_search(desk_search):
    with criterion(12, "two-stage desk search: < 30 min, BACC >= 0.90, repeatable, resumable"):
        assert desk_search["elapsed"] < 1800
        final_a, final_b, final_c = desk_search["finals"]
        assert final_a["bacc"] >= 0.90

        journal_a, journal_b, journal_c = desk_search["journals"]
        assert journal_a.records() == journal_b.records()
        assert final_a == final_b

        assert final_c == final_a
        cells = lambda j: sorted(
            (
                (r["candidate"], r["probability"], tuple(r["fold_baccs"]))
                for r in j.records()
                if r["type"] == "cell_result"
            )
        )
        assert cells(journal_c) == cells(journal_a)


def test_criterion_13_augmentation_benefit(tmp_path):
    with criterion(13, "mean test BACC over 5 seeds: policy-trained >= unaugmented"):
        labels = LabelSet(("a", "b", "c", "d", "e"))
        spec = SynthSpec(labels=labels, per_class=30, size=64, seed=5)
        manifest = synth_dataset(spec, tmp_path / "corpus")

        # Bake acquisition-style variation (pose, mirroring, exposure, noise)
        # into every stored image so the splits share one distribution.
        prng = derive_rng(99, 1)
        for s in manifest.samples:
            img = load_sample_images(DatasetManifest((s,), labels))[0]
            img = T.rotate(img, float(prng.uniform(-150, 150)))
            if prng.random() < 0.5:
                img = T.flip(img, "horizontal")
            if prng.random() < 0.5:
                img = T.flip(img, "vertical")
            img = T.enhance_brightness(img, float(prng.uniform(0.35, 1.65)))
            img = T.gaussian_noise(img, 0.08, prng)
            Path(s.path).write_bytes(save_ppm(img))

        train, test = holdout_split(manifest, 0.3, seed=5)
        train_imgs = load_sample_images(train)
        test_imgs = load_sample_images(test)
        weights = class_weights(train)
        truths = [s.label for s in test.samples]
        config = TrainerConfig(
            max_epochs=4, eval_start=2, eval_step=2, eval_end=4,
            batch_size=16, crop_size=48, feature_side=8,
        )

        grid = SearchGrid(
            ladder=tuple(probability_ladder()),
            candidates=(("ref", config),),
            k=5,
            seed=5,
        )
        (_, win_p), _ = stage1_search(train, grid, SearchJournal(tmp_path / "j.jsonl"))

        def mean_bacc(p):
            scores = []
            for seed in range(5):
                policy = LcaPolicy(probability=p, seed=seed)
                model, _ = train_reference(train, train_imgs, policy, config, weights, run_seed=seed)
                preds = [
                    int(np.argmax(model.predict(_center_crop(im, 48)))) for im in test_imgs
                ]
                scores.append(bacc(confusion(truths, preds, 5)))
            return float(np.mean(scores))

        assert mean_bacc(win_p) >= mean_bacc(0.0)


def test_criterion_14_report_shapes(desk_search, tmp_path):
    with criterion(
        14,
        "full-scale published results need external trainers and are not targets; "
        "report tables have the comparable shapes",
    ):
        journal_a = desk_search["journals"][0]
        paths = emit_report(journal_a, tmp_path / "report")

        matrix = paths["stage1_matrix"].read_text().splitlines()
        assert matrix[0] == "candidate," + ",".join(f"P={p}" for p in probability_ladder())
        assert len(matrix) == 2  # one candidate row
        assert matrix[1].count("±") == 5

        per_class = paths["stage2_per_class"].read_text().splitlines()
        header = per_class[0].split(",")
        assert header[:2] == ["metric", "mean"]
        assert sorted(header[2:]) == sorted(HAM10000.names)
        assert [r.split(",")[0] for r in per_class[1:]] == [
            "auc", "precision", "accuracy", "sensitivity", "specificity",
        ]

        summary = paths["summary"].read_text()
        assert "search space (sub-policies x ladder): 60" in summary
