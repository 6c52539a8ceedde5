"""Training side of the pipeline: weighted cross-entropy, the step-decay
learning-rate schedule, Adam, a reference multinomial-logistic classifier
over downsampled RGB features, and the external-trainer adapter protocol.
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import DatasetManifest, random_crop
from .image import ImageU8, load_image
from .policy import LcaPolicy, apply_policy, derive_rng

LOG_FLOOR = 1e-12


class TrainerError(RuntimeError):
    """Training failed or an external trainer misbehaved."""


@dataclass(frozen=True)
class TrainerConfig:
    lr0: float = 0.001
    decay_factor: float = 0.1
    first_decay_epoch: int = 20
    decay_period: int = 10
    max_epochs: int = 70
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    crop_size: int = 224
    feature_side: int = 16
    eval_start: int = 30
    eval_step: int = 5
    eval_end: int = 90
    seed: int = 0

    def __post_init__(self):
        for name in ("lr0", "decay_factor", "decay_period", "max_epochs", "batch_size",
                     "crop_size", "feature_side", "eval_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size & (self.batch_size - 1):
            raise ValueError(f"batch_size must be a power of two, got {self.batch_size}")

    def checkpoint_epochs(self) -> list[int]:
        """Evaluation epochs, clamped to the trained range."""
        end = min(self.eval_end, self.max_epochs)
        epochs = list(range(self.eval_start, end + 1, self.eval_step))
        if not epochs:
            epochs = [self.max_epochs]
        return epochs

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @staticmethod
    def from_dict(doc: dict) -> "TrainerConfig":
        return TrainerConfig(**doc)


def lr_schedule(epoch: int, config: TrainerConfig) -> float:
    """Step decay: lr0 until first_decay_epoch, then one decade every
    decay_period epochs. Training stops at max_epochs."""
    if epoch < 0 or epoch >= config.max_epochs:
        raise ValueError(f"epoch {epoch} outside trained range [0, {config.max_epochs})")
    if epoch < config.first_decay_epoch:
        return config.lr0
    steps = 1 + (epoch - config.first_decay_epoch) // config.decay_period
    return config.lr0 * config.decay_factor**steps


def _area_weights(n: int, s: int) -> np.ndarray:
    """(s, n) matrix of exact pixel-interval overlaps for area averaging."""
    w = np.zeros((s, n))
    scale = n / s
    for j in range(s):
        lo = j * scale
        hi = (j + 1) * scale
        for i in range(int(np.floor(lo)), min(n, int(np.ceil(hi)))):
            w[j, i] = min(hi, i + 1) - max(lo, i)
    return w / scale


def featurize(image: ImageU8, side: int) -> np.ndarray:
    """Area-average downsample to side x side, scaled to [0,1], flattened."""
    if image.width < side or image.height < side:
        raise ValueError(f"image {image.width}x{image.height} smaller than {side}")
    p = image.pixels.astype(np.float64)
    h, w = p.shape[:2]
    if h % side == 0 and w % side == 0:
        by, bx = h // side, w // side
        down = p.reshape(side, by, side, bx, 3).mean(axis=(1, 3))
    else:
        wy = _area_weights(h, side)
        wx = _area_weights(w, side)
        down = np.tensordot(np.tensordot(wy, p, axes=(1, 0)), wx.T, axes=(1, 0))
        down = np.moveaxis(down, 1, 2)
    return (down / 255.0).ravel()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_ce_loss(probs: np.ndarray, target: int, weights: np.ndarray) -> float:
    """-w_t * log(p_t); reduces to plain cross-entropy under unit weights."""
    p = max(float(probs[target]), LOG_FLOOR)
    return -float(weights[target]) * float(np.log(p))


def loss_grad_logits(logits: np.ndarray, target: int, weights: np.ndarray) -> np.ndarray:
    """Analytic gradient of the weighted CE w.r.t. the logits."""
    g = softmax(logits)
    g[target] -= 1.0
    return float(weights[target]) * g


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def init(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict[str, np.ndarray]:
    """Standard bias-corrected Adam update; mutates state, returns params."""
    state.t += 1
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {k}: {g.shape} vs {p.shape}")
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = state.m[k] / (1 - beta1**state.t)
        v_hat = state.v[k] / (1 - beta2**state.t)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


@dataclass(frozen=True)
class LinearSoftmaxModel:
    """Multinomial logistic regression over downsampled RGB features."""

    W: np.ndarray
    b: np.ndarray
    feature_side: int

    @staticmethod
    def zeros(num_classes: int, feature_side: int) -> "LinearSoftmaxModel":
        d = 3 * feature_side * feature_side
        return LinearSoftmaxModel(
            np.zeros((num_classes, d)), np.zeros(num_classes), feature_side
        )

    def predict_features(self, x: np.ndarray) -> np.ndarray:
        return softmax(x @ self.W.T + self.b)

    def predict(self, image: ImageU8) -> np.ndarray:
        return self.predict_features(featurize(image, self.feature_side))

    def to_dict(self) -> dict:
        return {
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "feature_side": self.feature_side,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LinearSoftmaxModel":
        return LinearSoftmaxModel(
            np.asarray(doc["W"], dtype=np.float64),
            np.asarray(doc["b"], dtype=np.float64),
            int(doc["feature_side"]),
        )


def load_sample_images(manifest: DatasetManifest) -> list[ImageU8]:
    """Load every sample's image from its manifest path."""
    images = []
    for s in manifest.samples:
        if not s.path:
            raise TrainerError(f"sample {s.image_id} has no image path")
        images.append(load_image(open(s.path, "rb").read()))
    return images


def train_reference(
    manifest: DatasetManifest,
    images: Sequence[ImageU8],
    policy: LcaPolicy,
    config: TrainerConfig,
    weights: np.ndarray,
    run_seed: int = 0,
) -> tuple[LinearSoftmaxModel, dict[int, LinearSoftmaxModel]]:
    """Minibatch Adam on weighted CE with per-epoch stochastic augmentation.

    Returns the final model and snapshots at the configured checkpoint
    epochs (keyed by 1-based completed-epoch count). Deterministic for a
    fixed (run_seed, policy seed, config, manifest order).
    """
    n = len(manifest.samples)
    if n == 0:
        raise TrainerError("empty training set")
    targets = np.array([s.label for s in manifest.samples])
    present = np.unique(targets)
    if len(present) < manifest.labels.num_classes:
        missing = [
            manifest.labels.names[i]
            for i in range(manifest.labels.num_classes)
            if i not in present
        ]
        raise TrainerError(f"classes absent from training set: {missing}")

    model = LinearSoftmaxModel.zeros(manifest.labels.num_classes, config.feature_side)
    params = {"W": model.W.copy(), "b": model.b.copy()}
    state = AdamState.init(params)
    checkpoints: dict[int, LinearSoftmaxModel] = {}
    wanted = set(config.checkpoint_epochs())

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config)
        order = derive_rng(run_seed, 1, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch_images = [images[i] for i in batch_idx]
            feats = np.empty((len(batch_idx), params["W"].shape[1]))
            for row, i in enumerate(batch_idx):
                rng = derive_rng(policy.seed, run_seed, epoch, int(i))
                aug, _ = apply_policy(images[i], batch_images, policy, rng)
                crop = random_crop(aug, config.crop_size, rng)
                feats[row] = featurize(crop, config.feature_side)
            logits = feats @ params["W"].T + params["b"]
            probs = softmax(logits)
            g = probs
            g[np.arange(len(batch_idx)), targets[batch_idx]] -= 1.0
            g *= weights[targets[batch_idx]][:, None]
            g /= len(batch_idx)
            grads = {"W": g.T @ feats, "b": g.sum(axis=0)}
            params = adam_step(
                params, grads, state, lr, config.beta1, config.beta2, config.eps
            )
        if (epoch + 1) in wanted:
            checkpoints[epoch + 1] = LinearSoftmaxModel(
                params["W"].copy(), params["b"].copy(), config.feature_side
            )
    final = LinearSoftmaxModel(params["W"], params["b"], config.feature_side)
    return final, checkpoints


class ExternalClassifier:
    """Adapter for a child-process trainer speaking line-delimited JSON.

    Requests: {"cmd": "fit", "run_id", "classes", "weights", "policy",
    "config", "manifest_path"} and {"cmd": "predict", "run_id",
    "image_path"}; replies {"ok": true, ...} or {"ok": false, "error": ...},
    one per line, in order.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._replies: queue.Queue[str] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._replies.put(line)

    def _call(self, request: dict) -> dict:
        if self.proc.poll() is not None:
            raise TrainerError(
                f"external trainer exited with code {self.proc.returncode} "
                f"(request {request.get('cmd')}, run {request.get('run_id')})"
            )
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(json.dumps(request) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TrainerError(
                f"external trainer pipe closed during {request.get('cmd')} "
                f"for run {request.get('run_id')}"
            ) from exc
        try:
            line = self._replies.get(timeout=self.timeout)
        except queue.Empty:
            raise TrainerError(
                f"external trainer timed out after {self.timeout}s on "
                f"{request.get('cmd')} for run {request.get('run_id')}"
            ) from None
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TrainerError(f"malformed reply line: {line!r}") from exc
        if not isinstance(reply, dict) or "ok" not in reply:
            raise TrainerError(f"protocol violation, reply missing 'ok': {reply!r}")
        if not reply["ok"]:
            raise TrainerError(f"external trainer error: {reply.get('error')}")
        return reply

    def fit(
        self,
        run_id: str,
        manifest_path: str,
        classes: Sequence[str],
        weights: Sequence[float],
        policy: LcaPolicy,
        config: TrainerConfig,
    ) -> None:
        self._call(
            {
                "cmd": "fit",
                "run_id": run_id,
                "classes": list(classes),
                "weights": list(map(float, weights)),
                "policy": json.loads(policy.to_json()),
                "config": config.to_dict(),
                "manifest_path": manifest_path,
            }
        )

    def predict(self, run_id: str, image_path: str, num_classes: int) -> np.ndarray:
        reply = self._call({"cmd": "predict", "run_id": run_id, "image_path": image_path})
        probs = reply.get("probs")
        if not isinstance(probs, list) or len(probs) != num_classes:
            raise TrainerError(
                f"reply probs must be a length-{num_classes} list, got {probs!r}"
            )
        arr = np.asarray(probs, dtype=np.float64)
        if abs(float(arr.sum()) - 1.0) > 1e-4:
            raise TrainerError(f"probs sum to {arr.sum()}, expected 1 +- 1e-4")
        return arr

    def close(self):
        if self.proc.poll() is None:
            if self.proc.stdin is not None:
                self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
