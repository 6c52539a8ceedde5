"""Two-stage augmentation search: grid over the probability ladder scored by
mean best validation balanced accuracy across 5 lesion-disjoint folds, then
full-training-set refinement with multi-crop test evaluation.

Progress is journaled to an append-only JSON-lines file so interrupted runs
resume to the same result as an uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import (
    TrainerConfig,
    TrainerError,
    load_sample_images,
    train_reference,
)
from .dataset import DatasetManifest, class_weights, group_kfold
from .image import ImageU8
from .metrics import UndefinedMetricError, bacc, confusion, full_report
from .policy import LcaPolicy, lca_default, probability_ladder, search_space_size


class SearchError(RuntimeError):
    """Search cannot proceed (bad journal, all cells failed, ...)."""


@dataclass(frozen=True)
class SearchGrid:
    """Stage-1 grid: ladder of gate probabilities x named trainer configs."""

    ladder: tuple[float, ...] = field(default_factory=lambda: tuple(probability_ladder()))
    candidates: tuple[tuple[str, TrainerConfig], ...] = ()
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.ladder or not self.candidates:
            raise ValueError("ladder and candidates must be non-empty")

    def to_dict(self) -> dict:
        return {
            "ladder": list(self.ladder),
            "candidates": [[name, cfg.to_dict()] for name, cfg in self.candidates],
            "k": self.k,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "SearchGrid":
        return SearchGrid(
            ladder=tuple(doc["ladder"]),
            candidates=tuple(
                (name, TrainerConfig.from_dict(cfg)) for name, cfg in doc["candidates"]
            ),
            k=int(doc["k"]),
            seed=int(doc["seed"]),
        )

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


@dataclass(frozen=True)
class CellResult:
    candidate: str
    probability: float
    fold_baccs: tuple[float, ...]
    best_epochs: tuple[int, ...]

    @property
    def score(self) -> float:
        return float(np.mean(self.fold_baccs))


class SearchJournal:
    """Append-only JSONL record stream keyed to a (grid, seed) identity."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out


def multi_crop_offsets(width: int, height: int, side: int = 224) -> list[tuple[int, int]]:
    """4x4 grid of crop origins from upper-left to lower-right corner."""
    if width < side or height < side:
        raise ValueError(f"image {width}x{height} smaller than crop side {side}")
    xs = [int(np.floor(i * (width - side) / 3.0 + 0.5)) for i in range(4)]
    ys = [int(np.floor(j * (height - side) / 3.0 + 0.5)) for j in range(4)]
    return [(x, y) for y in ys for x in xs]


def multi_crop_predict(model, image: ImageU8, side: int) -> np.ndarray:
    """Mean prediction over the 16 equidistant crops."""
    probs = []
    for x, y in multi_crop_offsets(image.width, image.height, side):
        crop = ImageU8(image.pixels[y : y + side, x : x + side])
        probs.append(model.predict(crop))
    # Pairwise tree sum over the 16 crops: exact when all crops agree.
    acc = np.stack(probs)
    while acc.shape[0] > 1:
        acc = acc[0::2] + acc[1::2]
    return acc[0] / len(probs)


def _center_crop(image: ImageU8, side: int) -> ImageU8:
    ox = (image.width - side) // 2
    oy = (image.height - side) // 2
    return ImageU8(image.pixels[oy : oy + side, ox : ox + side])


def _eval_bacc(model, manifest: DatasetManifest, images, side: int, multi_crop: bool) -> float:
    truths = [s.label for s in manifest.samples]
    preds = []
    for img in images:
        p = (
            multi_crop_predict(model, img, side)
            if multi_crop
            else model.predict(_center_crop(img, side))
        )
        preds.append(int(np.argmax(p)))
    return bacc(confusion(truths, preds, manifest.labels.num_classes))


def _run_fold(args: dict) -> dict:
    """One (cell, fold) training run; executes in a worker process."""
    train_mf: DatasetManifest = args["train"]
    val_mf: DatasetManifest = args["val"]
    config: TrainerConfig = args["config"]
    policy = LcaPolicy.from_json(args["policy_json"])
    try:
        train_images = load_sample_images(train_mf)
        val_images = load_sample_images(val_mf)
        weights = class_weights(train_mf)
        _, checkpoints = train_reference(
            train_mf, train_images, policy, config, weights, run_seed=args["run_seed"]
        )
        best_bacc, best_epoch = -1.0, -1
        for epoch, model in sorted(checkpoints.items()):
            b = _eval_bacc(model, val_mf, val_images, config.crop_size, multi_crop=False)
            if b > best_bacc:
                best_bacc, best_epoch = b, epoch
        return {"ok": True, "best_bacc": best_bacc, "best_epoch": best_epoch}
    except (TrainerError, UndefinedMetricError, ValueError, OSError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _run_stage2_candidate(args: dict) -> dict:
    """Full-train-set refinement of one candidate, multi-crop test scoring."""
    train_mf: DatasetManifest = args["train"]
    test_mf: DatasetManifest = args["test"]
    config: TrainerConfig = args["config"]
    policy = LcaPolicy.from_json(args["policy_json"])
    try:
        train_images = load_sample_images(train_mf)
        test_images = load_sample_images(test_mf)
        weights = class_weights(train_mf)
        _, checkpoints = train_reference(
            train_mf, train_images, policy, config, weights, run_seed=args["run_seed"]
        )
        evals = []
        best = (-1.0, -1, None)
        for epoch, model in sorted(checkpoints.items()):
            scores = np.array(
                [multi_crop_predict(model, img, config.crop_size) for img in test_images]
            )
            truths = [s.label for s in test_mf.samples]
            report = full_report(scores, truths, test_mf.labels.names)
            evals.append({"epoch": epoch, "bacc": report.bacc})
            if report.bacc > best[0]:
                best = (report.bacc, epoch, json.loads(report.to_json()))
        return {
            "ok": True,
            "evals": evals,
            "best_bacc": best[0],
            "best_epoch": best[1],
            "report": best[2],
        }
    except (TrainerError, UndefinedMetricError, ValueError, OSError) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _cell_seed(grid: SearchGrid, ci: int, pi: int, fold: int) -> int:
    return (grid.seed * 1_000_003 + ci * 10_007 + pi * 101 + fold) & 0x7FFFFFFF


def _finished_cells(records: list[dict]) -> dict[tuple[str, float], dict]:
    done = {}
    for r in records:
        if r.get("type") in ("cell_result", "cell_failed"):
            done[(r["candidate"], r["probability"])] = r
    return done


def stage1_search(
    train_manifest: DatasetManifest,
    grid: SearchGrid,
    journal: SearchJournal,
    policy_set=None,
    workers: int = 1,
) -> tuple[tuple[str, float], list[CellResult]]:
    """Grid search over (candidate, P) cells with k-fold cross-validation.

    Returns the winning (candidate name, probability) and all successful
    cell results. Failed cells are journaled and skipped; a search where
    every cell failed raises SearchError.
    """
    sub_policies = tuple(policy_set) if policy_set is not None else tuple(lca_default())
    records = journal.records()
    existing = [r for r in records if r.get("type") == "grid"]
    if existing:
        if existing[0]["digest"] != grid.digest():
            raise SearchError("journal grid/seed mismatch; refusing to resume")
    else:
        journal.append(
            {
                "type": "grid",
                "digest": grid.digest(),
                "grid": grid.to_dict(),
                "search_space_size": search_space_size(sub_policies, grid.ladder),
                "grid_cells": len(grid.candidates) * len(grid.ladder),
            }
        )
    done = _finished_cells(records)
    folds = group_kfold(train_manifest, grid.k, grid.seed)

    # Build the task list for cells not yet journaled as finished.
    pending = []
    for ci, (name, config) in enumerate(grid.candidates):
        for pi, p in enumerate(grid.ladder):
            if (name, p) in done:
                continue
            for fold in folds:
                policy = LcaPolicy(
                    probability=p,
                    seed=_cell_seed(grid, ci, pi, fold.fold_id),
                    sub_policies=sub_policies,
                )
                pending.append(
                    {
                        "candidate": name,
                        "probability": p,
                        "fold": fold.fold_id,
                        "train": train_manifest.subset(fold.train_ids),
                        "val": train_manifest.subset(fold.val_ids),
                        "config": config,
                        "policy_json": policy.to_json(),
                        "run_seed": _cell_seed(grid, ci, pi, fold.fold_id),
                    }
                )

    results: dict[tuple[str, float, int], dict] = {}
    if workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for task, res in zip(pending, pool.map(_run_fold, pending)):
                results[(task["candidate"], task["probability"], task["fold"])] = res
    else:
        for task in pending:
            results[(task["candidate"], task["probability"], task["fold"])] = _run_fold(task)

    # Assemble cells in deterministic grid order.
    cell_results: list[CellResult] = []
    for ci, (name, config) in enumerate(grid.candidates):
        for pi, p in enumerate(grid.ladder):
            prior = done.get((name, p))
            if prior is not None:
                if prior["type"] == "cell_result":
                    cell_results.append(
                        CellResult(name, p, tuple(prior["fold_baccs"]), tuple(prior["best_epochs"]))
                    )
                continue
            fold_res = [results[(name, p, f.fold_id)] for f in folds]
            failed = [r for r in fold_res if not r["ok"]]
            if failed:
                journal.append(
                    {
                        "type": "cell_failed",
                        "candidate": name,
                        "probability": p,
                        "error": failed[0]["error"],
                    }
                )
                continue
            cell = CellResult(
                name,
                p,
                tuple(r["best_bacc"] for r in fold_res),
                tuple(r["best_epoch"] for r in fold_res),
            )
            journal.append(
                {
                    "type": "cell_result",
                    "candidate": name,
                    "probability": p,
                    "fold_baccs": list(cell.fold_baccs),
                    "best_epochs": list(cell.best_epochs),
                    "score": cell.score,
                }
            )
            cell_results.append(cell)

    if not cell_results:
        raise SearchError("all stage-1 cells failed")
    # Winner: highest score; ties break to smaller P, then candidate order.
    cand_order = {name: i for i, (name, _) in enumerate(grid.candidates)}
    winner = min(
        cell_results, key=lambda c: (-c.score, c.probability, cand_order[c.candidate])
    )
    journal.append(
        {
            "type": "stage1_winner",
            "candidate": winner.candidate,
            "probability": winner.probability,
            "score": winner.score,
        }
    )
    return (winner.candidate, winner.probability), cell_results


def stage2_refine(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    winning_probability: float,
    grid: SearchGrid,
    journal: SearchJournal,
    policy_set=None,
    workers: int = 1,
) -> dict:
    """Train every candidate on the full training set at the winning P and
    pick the candidate with the best multi-crop test balanced accuracy."""
    sub_policies = tuple(policy_set) if policy_set is not None else tuple(lca_default())
    records = journal.records()
    done = {
        r["candidate"]: r for r in records if r.get("type") == "stage2_result"
    }
    tasks = []
    for ci, (name, config) in enumerate(grid.candidates):
        if name in done:
            continue
        policy = LcaPolicy(
            probability=winning_probability,
            seed=_cell_seed(grid, ci, 9999, 0),
            sub_policies=sub_policies,
        )
        tasks.append(
            {
                "candidate": name,
                "train": train_manifest,
                "test": test_manifest,
                "config": config,
                "policy_json": policy.to_json(),
                "run_seed": _cell_seed(grid, ci, 9999, 1),
            }
        )
    outcomes: dict[str, dict] = {}
    if workers > 1 and tasks:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for task, res in zip(tasks, pool.map(_run_stage2_candidate, tasks)):
                outcomes[task["candidate"]] = res
    else:
        for task in tasks:
            outcomes[task["candidate"]] = _run_stage2_candidate(task)

    finals = []
    for name, _ in grid.candidates:
        prior = done.get(name)
        if prior is not None:
            finals.append(prior)
            continue
        res = outcomes[name]
        if not res["ok"]:
            journal.append({"type": "stage2_failed", "candidate": name, "error": res["error"]})
            continue
        for ev in res["evals"]:
            journal.append(
                {
                    "type": "stage2_checkpoint",
                    "candidate": name,
                    "epoch": ev["epoch"],
                    "bacc": ev["bacc"],
                }
            )
        record = {
            "type": "stage2_result",
            "candidate": name,
            "best_epoch": res["best_epoch"],
            "best_bacc": res["best_bacc"],
            "report": res["report"],
        }
        journal.append(record)
        finals.append(record)

    if not finals:
        raise SearchError("all stage-2 candidates failed")
    cand_order = {name: i for i, (name, _) in enumerate(grid.candidates)}
    best = min(finals, key=lambda r: (-r["best_bacc"], cand_order[r["candidate"]]))
    selection = {
        "type": "final_selection",
        "candidate": best["candidate"],
        "probability": winning_probability,
        "bacc": best["best_bacc"],
        "epoch": best["best_epoch"],
    }
    if not any(r.get("type") == "final_selection" for r in records):
        journal.append(selection)
    return selection


def run_search(
    train_manifest: DatasetManifest,
    test_manifest: DatasetManifest,
    grid: SearchGrid,
    journal: SearchJournal,
    policy_set=None,
    workers: int = 1,
) -> dict:
    """Stage 1 then stage 2; resumable through the shared journal."""
    records = journal.records()
    prior_final = [r for r in records if r.get("type") == "final_selection"]
    if prior_final:
        if [r for r in records if r.get("type") == "grid"][0]["digest"] != grid.digest():
            raise SearchError("journal grid/seed mismatch; refusing to resume")
        return prior_final[0]
    (_, win_p), _ = stage1_search(train_manifest, grid, journal, policy_set, workers)
    return stage2_refine(
        train_manifest, test_manifest, win_p, grid, journal, policy_set, workers
    )


def emit_report(journal: SearchJournal, out_dir: str | Path) -> dict[str, Path]:
    """Write the stage-1 matrix CSV, stage-2 per-class CSV, JSON bundle and
    a plain-text summary from a journal with at least one finished cell."""
    records = journal.records()
    cells = [r for r in records if r.get("type") == "cell_result"]
    if not cells:
        raise SearchError("journal holds no finished cells")
    grid_rec = [r for r in records if r.get("type") == "grid"][0]
    grid = SearchGrid.from_dict(grid_rec["grid"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    by_cell = {(r["candidate"], r["probability"]): r for r in cells}
    lines = ["candidate," + ",".join(f"P={p}" for p in grid.ladder)]
    for name, _ in grid.candidates:
        row = [name]
        for p in grid.ladder:
            r = by_cell.get((name, p))
            if r is None:
                row.append("failed")
            else:
                fb = np.array(r["fold_baccs"])
                # Population std over the fold values.
                row.append(f"{fb.mean():.4f}±{fb.std():.4f}")
        lines.append(",".join(row))
    stage1_csv = out / "stage1_matrix.csv"
    stage1_csv.write_text("\n".join(lines) + "\n")

    paths = {"stage1_matrix": stage1_csv}
    final = next((r for r in records if r.get("type") == "final_selection"), None)
    stage2 = {r["candidate"]: r for r in records if r.get("type") == "stage2_result"}
    if final and final["candidate"] in stage2:
        report = stage2[final["candidate"]]["report"]
        names = list(report["classes"])
        rows = ["metric,mean," + ",".join(names)]
        for metric, mean_key in [
            ("auc", "avg_auc"),
            ("precision", "avg_precision"),
            ("accuracy", "avg_accuracy"),
            ("sensitivity", None),
            ("specificity", "avg_specificity"),
        ]:
            mean = report["bacc"] if metric == "sensitivity" else report["macro"][mean_key]
            rows.append(
                f"{metric},{mean:.6f},"
                + ",".join(f"{report['classes'][n][metric]:.6f}" for n in names)
            )
        stage2_csv = out / "stage2_per_class.csv"
        stage2_csv.write_text("\n".join(rows) + "\n")
        paths["stage2_per_class"] = stage2_csv

    bundle = out / "report.json"
    bundle.write_text(json.dumps({"records": records}, indent=2, sort_keys=True))
    paths["bundle"] = bundle

    summary = [
        f"grid cells (candidates x ladder): {grid_rec['grid_cells']}",
        f"policy search space (sub-policies x ladder): {grid_rec['search_space_size']}",
        f"finished cells: {len(cells)}",
    ]
    if final:
        summary.append(
            f"selected: {final['candidate']} at P={final['probability']}, "
            f"test BACC {final['bacc']:.4f} at epoch {final['epoch']}"
        )
    summary_path = out / "summary.txt"
    summary_path.write_text("\n".join(summary) + "\n")
    paths["summary"] = summary_path
    return paths
