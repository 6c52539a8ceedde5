"""Stochastic sub-policy engine: the 12 color/geometry pairs, per-sample
Bernoulli gating at probability P, the searched probability ladder, and the
weak flip+jitter baseline.

Every random draw is recorded in an AppliedRecord so any augmented output
can be replayed bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import transforms as T
from .image import ImageU8
from .transforms import OPERATION_SPECS, OperationKind


@dataclass(frozen=True)
class SubPolicy:
    """One (color operation, geometric operation) pair."""

    id: int
    color_op: OperationKind
    geom_op: OperationKind


_DEFAULT_TABLE = [
    (OperationKind.SAMPLE_PAIRING, OperationKind.ROTATE),
    (OperationKind.GAUSSIAN_NOISE, OperationKind.FLIP),
    (OperationKind.SOLARIZE_ADD, OperationKind.CUTOUT),
    (OperationKind.COLOR, OperationKind.SHEAR_X),
    (OperationKind.CONTRAST, OperationKind.SHEAR_Y),
    (OperationKind.BRIGHTNESS, OperationKind.SCALE),
    (OperationKind.SHARPNESS, OperationKind.ROTATE),
    (OperationKind.COLOR_SHIFT, OperationKind.SCALE),
    (OperationKind.EQUALIZE_YUV, OperationKind.SHEAR_X),
    (OperationKind.POSTERIZE, OperationKind.SHEAR_Y),
    (OperationKind.AUTOCONTRAST, OperationKind.FLIP),
    (OperationKind.EQUALIZE, OperationKind.CUTOUT),
]


def lca_default() -> list[SubPolicy]:
    """The built-in 12-entry sub-policy table."""
    return [SubPolicy(i + 1, c, g) for i, (c, g) in enumerate(_DEFAULT_TABLE)]


def probability_ladder() -> list[float]:
    """The five searched gate probabilities."""
    return [0.1, 0.3, 0.5, 0.7, 0.9]


def search_space_size(policy_set: Sequence[SubPolicy], ladder: Sequence[float]) -> int:
    """Number of searchable cells: sub-policies times ladder rungs."""
    return len(policy_set) * len(ladder)


@dataclass(frozen=True)
class LcaPolicy:
    """Runtime policy: sub-policy set, gate probability and base seed."""

    probability: float
    seed: int = 0
    sub_policies: tuple[SubPolicy, ...] = field(
        default_factory=lambda: tuple(lca_default())
    )

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if not self.sub_policies:
            raise ValueError("sub_policies must be non-empty")

    def to_json(self) -> str:
        return json.dumps(
            {
                "probability": self.probability,
                "seed": self.seed,
                "sub_policies": [
                    {"color_op": sp.color_op.value, "geom_op": sp.geom_op.value}
                    for sp in self.sub_policies
                ],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "LcaPolicy":
        doc = json.loads(text)
        subs = doc.get("sub_policies")
        if subs is None:
            sub_policies = tuple(lca_default())
        else:
            sub_policies = tuple(
                SubPolicy(i + 1, OperationKind(sp["color_op"]), OperationKind(sp["geom_op"]))
                for i, sp in enumerate(subs)
            )
        return LcaPolicy(
            probability=float(doc["probability"]),
            seed=int(doc.get("seed", 0)),
            sub_policies=sub_policies,
        )


@dataclass(frozen=True)
class AppliedRecord:
    """Audit trail of one policy application, sufficient for exact replay."""

    fired: bool
    sub_policy_id: int | None = None
    color_params: dict[str, Any] | None = None
    geom_params: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"fired": self.fired}
        if self.fired:
            out.update(
                sub_policy_id=self.sub_policy_id,
                color_params=self.color_params,
                geom_params=self.geom_params,
            )
        return out

    @staticmethod
    def from_dict(doc: dict[str, Any]) -> "AppliedRecord":
        if not doc["fired"]:
            return AppliedRecord(fired=False)
        return AppliedRecord(
            fired=True,
            sub_policy_id=doc["sub_policy_id"],
            color_params=doc["color_params"],
            geom_params=doc["geom_params"],
        )


def derive_rng(seed: int, *indices: int) -> np.random.Generator:
    """Independent stream for (seed, purpose indices); order-insensitive use."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *indices])))


def _draw_magnitude(kind: OperationKind, rng: np.random.Generator):
    spec = OPERATION_SPECS[kind]
    lo, hi = spec.magnitude_range
    if spec.integer:
        return int(rng.integers(int(lo), int(hi) + 1))
    return float(lo + (hi - lo) * rng.random())


def _draw_color_params(
    kind: OperationKind, batch: Sequence[ImageU8], rng: np.random.Generator
) -> dict[str, Any]:
    if kind is OperationKind.COLOR_SHIFT:
        return {
            "dr": int(rng.integers(-20, 21)),
            "dg": int(rng.integers(-20, 21)),
            "db": int(rng.integers(-20, 21)),
        }
    if kind is OperationKind.GAUSSIAN_NOISE:
        return {
            "magnitude": _draw_magnitude(kind, rng),
            "noise_seed": int(rng.integers(0, 2**63)),
        }
    if kind is OperationKind.SAMPLE_PAIRING:
        params: dict[str, Any] = {"magnitude": _draw_magnitude(kind, rng)}
        if batch:
            params["partner_index"] = int(rng.integers(0, len(batch)))
        else:
            params["partner_index"] = None
        return params
    if OPERATION_SPECS[kind].magnitude_range is None:
        return {}
    return {"magnitude": _draw_magnitude(kind, rng)}


def _draw_geom_params(
    kind: OperationKind, image: ImageU8, rng: np.random.Generator
) -> dict[str, Any]:
    if kind is OperationKind.FLIP:
        return {"axis": "horizontal" if rng.integers(0, 2) == 0 else "vertical"}
    if kind is OperationKind.CUTOUT:
        return {
            "side": _draw_magnitude(kind, rng),
            "cx": int(rng.integers(0, image.width)),
            "cy": int(rng.integers(0, image.height)),
        }
    return {"magnitude": _draw_magnitude(kind, rng)}


def _apply_color(
    image: ImageU8, kind: OperationKind, params: dict[str, Any], batch: Sequence[ImageU8]
) -> ImageU8:
    if kind is OperationKind.SAMPLE_PAIRING:
        idx = params["partner_index"]
        if idx is None:
            return image
        return T.sample_pairing(image, batch[idx], params["magnitude"])
    if kind is OperationKind.GAUSSIAN_NOISE:
        rng = np.random.Generator(np.random.PCG64(params["noise_seed"]))
        return T.gaussian_noise(image, params["magnitude"], rng)
    if kind is OperationKind.SOLARIZE_ADD:
        return T.solarize_add(image, params["magnitude"])
    if kind is OperationKind.COLOR:
        return T.enhance_color(image, params["magnitude"])
    if kind is OperationKind.CONTRAST:
        return T.enhance_contrast(image, params["magnitude"])
    if kind is OperationKind.BRIGHTNESS:
        return T.enhance_brightness(image, params["magnitude"])
    if kind is OperationKind.SHARPNESS:
        return T.enhance_sharpness(image, params["magnitude"])
    if kind is OperationKind.COLOR_SHIFT:
        return T.color_shift(image, params["dr"], params["dg"], params["db"])
    if kind is OperationKind.EQUALIZE_YUV:
        return T.equalize_yuv(image)
    if kind is OperationKind.EQUALIZE:
        return T.equalize(image)
    if kind is OperationKind.POSTERIZE:
        return T.posterize(image, params["magnitude"])
    if kind is OperationKind.AUTOCONTRAST:
        return T.autocontrast(image)
    raise ValueError(f"{kind} is not a color operation")


def _apply_geom(image: ImageU8, kind: OperationKind, params: dict[str, Any]) -> ImageU8:
    if kind is OperationKind.ROTATE:
        return T.rotate(image, params["magnitude"])
    if kind is OperationKind.FLIP:
        return T.flip(image, params["axis"])
    if kind is OperationKind.CUTOUT:
        return T.cutout(image, params["side"], params["cx"], params["cy"])
    if kind is OperationKind.SHEAR_X:
        return T.shear_x(image, params["magnitude"])
    if kind is OperationKind.SHEAR_Y:
        return T.shear_y(image, params["magnitude"])
    if kind is OperationKind.SCALE:
        return T.scale(image, params["magnitude"])
    raise ValueError(f"{kind} is not a geometric operation")


def apply_policy(
    image: ImageU8,
    batch_context: Sequence[ImageU8],
    policy: LcaPolicy,
    rng: np.random.Generator,
) -> tuple[ImageU8, AppliedRecord]:
    """One Bernoulli(P)-gated application of a uniformly chosen sub-policy.

    When the gate fires, the color operation runs first, then the geometric
    one, with magnitudes drawn uniformly from their configured ranges.
    """
    if rng.random() >= policy.probability:
        return image, AppliedRecord(fired=False)
    sub = policy.sub_policies[int(rng.integers(0, len(policy.sub_policies)))]
    color_params = _draw_color_params(sub.color_op, batch_context, rng)
    geom_params = _draw_geom_params(sub.geom_op, image, rng)
    out = _apply_color(image, sub.color_op, color_params, batch_context)
    out = _apply_geom(out, sub.geom_op, geom_params)
    record = AppliedRecord(
        fired=True,
        sub_policy_id=sub.id,
        color_params=color_params,
        geom_params=geom_params,
    )
    return out, record


def replay_record(
    image: ImageU8,
    batch_context: Sequence[ImageU8],
    policy: LcaPolicy,
    record: AppliedRecord,
) -> ImageU8:
    """Re-apply a recorded policy application; bit-identical to the original."""
    if not record.fired:
        return image
    sub = next(sp for sp in policy.sub_policies if sp.id == record.sub_policy_id)
    out = _apply_color(image, sub.color_op, record.color_params, batch_context)
    return _apply_geom(out, sub.geom_op, record.geom_params)


def apply_sub_policy(
    image: ImageU8,
    batch_context: Sequence[ImageU8],
    sub: SubPolicy,
    rng: np.random.Generator,
) -> tuple[ImageU8, AppliedRecord]:
    """Apply one sub-policy unconditionally (preview/inspection path)."""
    color_params = _draw_color_params(sub.color_op, batch_context, rng)
    geom_params = _draw_geom_params(sub.geom_op, image, rng)
    out = _apply_color(image, sub.color_op, color_params, batch_context)
    out = _apply_geom(out, sub.geom_op, geom_params)
    return out, AppliedRecord(True, sub.id, color_params, geom_params)


def general_augmentation(image: ImageU8, rng: np.random.Generator) -> ImageU8:
    """Weak baseline: 50% random-axis flip, then brightness/contrast/color
    jitter with independent factors uniform in [0.8, 1.2]."""
    out = image
    if rng.random() < 0.5:
        out = T.flip(out, "horizontal" if rng.integers(0, 2) == 0 else "vertical")
    for op in (T.enhance_brightness, T.enhance_contrast, T.enhance_color):
        out = op(out, 0.8 + 0.4 * rng.random())
    return out
