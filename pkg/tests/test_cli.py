import json

import numpy as np
import pytest

from lcaug.cli import (
    EXIT_DATA,
    EXIT_IO,
    EXIT_OK,
    EXIT_TRAINER,
    EXIT_VALIDATION,
    main,
)
from lcaug.image import load_ppm, save_ppm

from .conftest import random_image


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    code = main(
        [
            "synth", "--classes", "3", "--per-class", "40", "--size", "64",
            "--out", str(out), "--seed", "3",
        ]
    )
    assert code == EXIT_OK
    return out


@pytest.fixture()
def sample_ppm(tmp_path):
    img = random_image(np.random.default_rng(5), 32, 32)
    path = tmp_path / "in.ppm"
    path.write_bytes(save_ppm(img))
    return path


TRAIN_FLAGS = [
    "--epochs", "3", "--batch-size", "8", "--crop-size", "48",
    "--feature-side", "4", "--eval-start", "1", "--eval-step", "2",
    "--eval-end", "3",
]


class TestSynth:
    def test_writes_manifest_and_images(self, cli_corpus):
        assert (cli_corpus / "manifest.csv").exists()
        ppms = list((cli_corpus / "images").glob("*.ppm"))
        assert len(ppms) == 120

    def test_rejects_bad_count(self, tmp_path):
        code = main(["synth", "--per-class", "0", "--out", str(tmp_path / "x")])
        assert code == EXIT_VALIDATION


class TestAugment:
    def test_writes_outputs(self, sample_ppm, tmp_path):
        out = tmp_path / "aug"
        code = main(
            [
                "augment", "--image", str(sample_ppm), "--probability", "1.0",
                "--count", "5", "--out", str(out), "--seed", "4",
            ]
        )
        assert code == EXIT_OK
        assert len(list(out.glob("aug_*.ppm"))) == 5
        records = json.loads((out / "records.json").read_text())
        assert len(records) == 5
        assert all(r["fired"] for r in records)

    def test_deterministic(self, sample_ppm, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(
                [
                    "augment", "--image", str(sample_ppm), "--probability", "0.9",
                    "--count", "3", "--out", str(out), "--seed", "8",
                ]
            )
            outs.append([p.read_bytes() for p in sorted(out.glob("aug_*.ppm"))])
        assert outs[0] == outs[1]

    def test_replay_bit_identical(self, sample_ppm, tmp_path):
        first = tmp_path / "first"
        main(
            [
                "augment", "--image", str(sample_ppm), "--probability", "1.0",
                "--count", "4", "--out", str(first), "--seed", "6",
            ]
        )
        second = tmp_path / "second"
        code = main(
            [
                "augment", "--image", str(sample_ppm), "--probability", "1.0",
                "--out", str(second), "--seed", "999",
                "--replay", str(first / "records.json"),
            ]
        )
        assert code == EXIT_OK
        a = [p.read_bytes() for p in sorted(first.glob("aug_*.ppm"))]
        b = [p.read_bytes() for p in sorted(second.glob("aug_*.ppm"))]
        assert a == b

    def test_sub_policy_needs_force(self, sample_ppm, tmp_path):
        args = [
            "augment", "--image", str(sample_ppm), "--sub-policy", "3",
            "--out", str(tmp_path / "x"),
        ]
        assert main(args) == EXIT_VALIDATION
        assert main(args + ["--force"]) == EXIT_OK

    def test_missing_image(self, tmp_path):
        code = main(
            ["augment", "--image", str(tmp_path / "nope.ppm"), "--out", str(tmp_path / "x")]
        )
        assert code == EXIT_IO


class TestOp:
    def test_named_transform(self, sample_ppm, tmp_path):
        out = tmp_path / "out.ppm"
        code = main(
            ["op", "brightness", "--image", str(sample_ppm), "-m", "1.0", "--out", str(out)]
        )
        assert code == EXIT_OK
        assert load_ppm(out.read_bytes()) == load_ppm(sample_ppm.read_bytes())

    def test_parameterless_transform(self, sample_ppm, tmp_path):
        out = tmp_path / "out.ppm"
        assert main(
            ["op", "flip-horizontal", "--image", str(sample_ppm), "--out", str(out)]
        ) == EXIT_OK
        got = load_ppm(out.read_bytes()).pixels
        want = load_ppm(sample_ppm.read_bytes()).pixels[:, ::-1]
        assert np.array_equal(got, want)

    def test_unknown_name(self, sample_ppm, tmp_path):
        code = main(
            ["op", "warpspeed", "--image", str(sample_ppm), "--out", str(tmp_path / "o.ppm")]
        )
        assert code == EXIT_VALIDATION

    def test_missing_magnitude(self, sample_ppm, tmp_path):
        code = main(
            ["op", "rotate", "--image", str(sample_ppm), "--out", str(tmp_path / "o.ppm")]
        )
        assert code == EXIT_VALIDATION

    def test_corrupt_image(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n2 2\n255\nxx")
        code = main(
            ["op", "equalize", "--image", str(bad), "--out", str(tmp_path / "o.ppm")]
        )
        assert code == EXIT_DATA


class TestSplit:
    def test_writes_folds(self, cli_corpus, tmp_path):
        out = tmp_path / "folds.json"
        code = main(
            ["split", "--manifest", str(cli_corpus), "--k", "5", "--out", str(out)]
        )
        assert code == EXIT_OK
        folds = json.loads(out.read_text())
        assert len(folds) == 5
        assert {len(f["val_ids"]) for f in folds} == {24}

    def test_overwrite_guard(self, cli_corpus, tmp_path):
        out = tmp_path / "folds.json"
        args = ["split", "--manifest", str(cli_corpus), "--out", str(out)]
        assert main(args) == EXIT_OK
        assert main(args) == EXIT_VALIDATION
        assert main(args + ["--force"]) == EXIT_OK

    def test_missing_manifest(self, tmp_path):
        code = main(
            ["split", "--manifest", str(tmp_path / "nope"), "--out", str(tmp_path / "f.json")]
        )
        assert code == EXIT_IO

    def test_malformed_manifest(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("image_id,dx\nI1,nv\n")
        code = main(
            ["split", "--manifest", str(bad), "--out", str(tmp_path / "f.json")]
        )
        assert code == EXIT_DATA


class TestTrain:
    def test_trains_model(self, cli_corpus, tmp_path):
        out = tmp_path / "model.json"
        code = main(
            ["train", "--manifest", str(cli_corpus), "--out", str(out), *TRAIN_FLAGS]
        )
        assert code == EXIT_OK
        doc = json.loads(out.read_text())
        assert np.asarray(doc["W"]).shape == (3, 3 * 4 * 4)

    def test_absent_class_fails(self, tmp_path, sample_ppm):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        (corpus / "manifest.csv").write_text(
            "lesion_id,image_id,dx,path\n" + f"L1,I1,nv,{sample_ppm}\n"
        )
        code = main(
            ["train", "--manifest", str(corpus), "--out", str(tmp_path / "m.json"),
             "--epochs", "2", "--crop-size", "16", "--feature-side", "2",
             "--batch-size", "2", "--eval-start", "1", "--eval-step", "1",
             "--eval-end", "2"]
        )
        assert code == EXIT_TRAINER


class TestSearchAndReport:
    def _search_args(self, cli_corpus, journal, out):
        return [
            "search", "--manifest", str(cli_corpus), "--ladder", "0.1", "0.9",
            "--test-fraction", "0.25", "--journal", str(journal),
            "--out", str(out), "--seed", "11", *TRAIN_FLAGS,
        ]

    def test_full_search_resume_and_report(self, cli_corpus, tmp_path):
        journal = tmp_path / "j.jsonl"
        out = tmp_path / "report"
        args = self._search_args(cli_corpus, journal, out)
        assert main(args) == EXIT_OK
        for name in ("stage1_matrix.csv", "stage2_per_class.csv", "report.json", "summary.txt"):
            assert (out / name).exists()

        # Existing journal refuses to run without --resume.
        assert main(args) == EXIT_VALIDATION
        before = journal.read_text()
        assert main(args + ["--resume"]) == EXIT_OK
        assert journal.read_text() == before

        # The standalone report command reproduces the artifacts.
        out2 = tmp_path / "report2"
        assert main(["report", "--journal", str(journal), "--out", str(out2)]) == EXIT_OK
        assert (out2 / "stage1_matrix.csv").read_text() == (
            out / "stage1_matrix.csv"
        ).read_text()

    def test_report_without_cells(self, tmp_path):
        journal = tmp_path / "empty.jsonl"
        journal.write_text(json.dumps({"type": "grid", "digest": "d", "grid": {}}) + "\n")
        code = main(["report", "--journal", str(journal), "--out", str(tmp_path / "o")])
        assert code == EXIT_DATA


class TestEvaluate:
    def test_metrics_files(self, cli_corpus, tmp_path):
        model = tmp_path / "model.json"
        assert main(
            ["train", "--manifest", str(cli_corpus), "--out", str(model), *TRAIN_FLAGS]
        ) == EXIT_OK
        out = tmp_path / "eval"
        args = [
            "evaluate", "--model", str(model), "--manifest", str(cli_corpus),
            "--crop-size", "48", "--out", str(out),
        ]
        assert main(args) == EXIT_OK
        doc = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= doc["bacc"] <= 1.0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("metric,mean,")

        # Overwrite guard applies to the metrics files.
        assert main(args) == EXIT_VALIDATION
        assert main(args + ["--force"]) == EXIT_OK

    def test_missing_model(self, cli_corpus, tmp_path):
        code = main(
            [
                "evaluate", "--model", str(tmp_path / "nope.json"),
                "--manifest", str(cli_corpus), "--out", str(tmp_path / "o"),
            ]
        )
        assert code == EXIT_IO
