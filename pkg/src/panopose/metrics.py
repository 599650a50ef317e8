"""Set-based evaluation metrics.

Object keypoint similarity (OKS), exact minimum-cost assignment with a
brute-force enumeration oracle, the optimal-subpattern set metric over
(1 - IoU) box distances, ranked average precision at an OKS threshold, and
the dataset-level report that aggregates them.

OKS between a predicted and a labeled pose is the mean over labeled
keypoints i of exp(-d_i^2 / (2 * s^2 * k_i^2)), with d_i the Euclidean pixel
distance, k_i the per-keypoint falloff constant, and s^2 the ground-truth
box area.

The set metric between prediction and ground-truth sets of sizes m <= n
(swap otherwise) with cutoff c and order p is
((c^p * (n - m) + min-cost assignment of capped distances^p) / n)^(1/p);
both sets empty gives 0, exactly one empty set gives c.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataio import Dataset, FrameAnnotations, Pose
from .errors import ValidationError
from .geometry import BoundingBox, iou, person_box
from .schema import SchemaMapping, default_mapping

__all__ = [
    "COCO_SIGMAS",
    "OksParams",
    "MatchResult",
    "EvalConfig",
    "FrameStats",
    "EvalReport",
    "coco_oks_params",
    "transferred_oks_params",
    "default_oks_params",
    "oks",
    "min_cost_assignment",
    "brute_force_assignment",
    "ospa",
    "ospa_iou_frame",
    "match_frame_oks",
    "ap_at_oks",
    "evaluate",
    "save_report",
    "save_frame_table",
]

# Published COCO per-keypoint falloff constants, in coco17 name order.
COCO_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035,
    0.079, 0.079, 0.072, 0.072, 0.062,
    0.062, 0.107, 0.107, 0.087, 0.087,
    0.089, 0.089,
)

_ORACLE_MAX_DIM = 8
_ORACLE_MAX_ASSIGNMENTS = 2_000_000


@dataclass(frozen=True)
class OksParams:
    """Per-keypoint falloff constants and the object-scale rule."""

    sigmas: tuple[float, ...]
    scale_source: str = "gt_box_area"

    def __post_init__(self) -> None:
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas:
            raise ValueError("sigmas must be non-empty")
        if any(not (math.isfinite(s) and s > 0) for s in sigmas):
            raise ValueError("all sigmas must be positive and finite")
        if self.scale_source != "gt_box_area":
            raise ValueError(
                f"unsupported scale source {self.scale_source!r}; only 'gt_box_area'"
            )
        object.__setattr__(self, "sigmas", sigmas)


def coco_oks_params() -> OksParams:
    return OksParams(COCO_SIGMAS)


def transferred_oks_params(
    mapping: SchemaMapping, source_sigmas: Sequence[float] = COCO_SIGMAS
) -> OksParams:
    """Move falloff constants into a target schema; merged targets take the
    mean of their counterpart constants."""
    sigmas = []
    for t, entry in enumerate(mapping.entries):
        if not entry:
            raise ValidationError(f"empty counterpart list for target index {t}")
        for s in entry:
            if s < 0 or s >= len(source_sigmas):
                raise ValidationError(
                    f"counterpart index {s} out of range for {len(source_sigmas)} sigmas"
                )
        sigmas.append(sum(source_sigmas[s] for s in entry) / len(entry))
    return OksParams(tuple(sigmas))


def default_oks_params(schema_id: str) -> OksParams:
    if schema_id == "coco17":
        return coco_oks_params()
    if schema_id == "jrdb17":
        return transferred_oks_params(default_mapping())
    raise ValidationError(
        f"no default falloff constants for schema {schema_id!r}; supply OksParams"
    )


def oks(pred: Pose, gt: Pose, params: OksParams, gt_box: BoundingBox) -> float:
    """Object keypoint similarity in [0, 1]; labeled keypoints are those with
    ground-truth visibility > 0."""
    if len(pred.keypoints) != len(gt.keypoints):
        raise ValidationError(
            f"pose length mismatch: {len(pred.keypoints)} vs {len(gt.keypoints)}"
        )
    if len(params.sigmas) != len(gt.keypoints):
        raise ValidationError(
            f"{len(params.sigmas)} sigmas for a pose of {len(gt.keypoints)} keypoints"
        )
    s2 = gt_box.area
    terms = []
    for kp_p, kp_g, k in zip(pred.keypoints, gt.keypoints, params.sigmas):
        if kp_g.visibility <= 0:
            continue
        d2 = (kp_p.x - kp_g.x) ** 2 + (kp_p.y - kp_g.y) ** 2
        terms.append(math.exp(-d2 / (2.0 * s2 * k * k)))
    if not terms:
        raise ValidationError("ground-truth pose has no labeled keypoints")
    return sum(terms) / len(terms)


# -- assignment ----------------------------------------------------------------


def _as_cost_matrix(cost) -> np.ndarray:
    arr = np.asarray(cost, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"cost must be a 2-D matrix, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("cost entries must be finite")
    return arr


def _optimal_cost(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(matrix)
    return float(matrix[rows, cols].sum())


def min_cost_assignment(cost) -> tuple[dict[int, int], float]:
    """Exact minimum-cost injective assignment of the smaller dimension.

    Returns ``(assignment, total_cost)``; the assignment maps row indices to
    column indices when rows <= cols, and column indices to row indices
    otherwise. Among all optimal assignments the lexicographically smallest
    one (the vector of assigned indices for the smaller dimension, in order)
    is returned, found by fixing, for each index in turn, the smallest
    partner that still admits an optimal completion.
    """
    arr = _as_cost_matrix(cost)
    if arr.size == 0:
        return {}, 0.0
    mat = arr.T if arr.shape[0] > arr.shape[1] else arr
    m, n = mat.shape
    remaining = list(range(n))
    chosen: list[int] = []
    for i in range(m):
        best_j = remaining[0]
        best_total = math.inf
        for pos, j in enumerate(remaining):
            rest = remaining[:pos] + remaining[pos + 1 :]
            total = float(mat[i, j]) + _optimal_cost(mat[i + 1 :, rest])
            if total < best_total:
                best_total = total
                best_j = j
        chosen.append(best_j)
        remaining.remove(best_j)
    total_cost = float(sum(float(mat[i, chosen[i]]) for i in range(m)))
    return {i: chosen[i] for i in range(m)}, total_cost


def brute_force_assignment(cost) -> tuple[dict[int, int], float]:
    """Enumeration oracle with the same contract as :func:`min_cost_assignment`.

    Candidate assignments are enumerated in lexicographic order with strict
    improvement, so ties resolve to the lexicographically smallest optimum.
    """
    arr = _as_cost_matrix(cost)
    if arr.size == 0:
        return {}, 0.0
    mat = arr.T if arr.shape[0] > arr.shape[1] else arr
    m, n = mat.shape
    if m > _ORACLE_MAX_DIM or math.perm(n, m) > _ORACLE_MAX_ASSIGNMENTS:
        raise ValueError(
            f"dimension above oracle limit: {m}x{n} "
            f"(smaller dim <= {_ORACLE_MAX_DIM} and enumerable assignments required)"
        )
    perms = np.fromiter(
        itertools.chain.from_iterable(itertools.permutations(range(n), m)),
        dtype=np.intp,
    ).reshape(-1, m)
    totals = mat[np.arange(m), perms].sum(axis=1)
    best = perms[int(np.argmin(totals))]  # first minimum = lexicographically smallest
    total_cost = float(sum(float(mat[i, best[i]]) for i in range(m)))
    return {i: int(best[i]) for i in range(m)}, total_cost


# -- set metric ------------------------------------------------------------------


def ospa(
    preds: Sequence,
    gts: Sequence,
    base_distance: Callable[[object, object], float],
    *,
    cutoff: float = 1.0,
    order: float = 1.0,
) -> float:
    """Optimal-subpattern distance between two finite sets.

    ``base_distance`` is evaluated as ``base_distance(pred, gt)`` and capped
    at ``cutoff``. With cutoff 1 and order 1 (the defaults) the value is
    (min-cost assignment + (n - m)) / n, bounded in [0, 1].
    """
    if not cutoff > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    preds = list(preds)
    gts = list(gts)
    m, n = len(preds), len(gts)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)
    dist = np.empty((m, n), dtype=np.float64)
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            d = float(base_distance(p, g))
            if not (math.isfinite(d) and d >= 0):
                raise ValueError(f"base distance must be finite and >= 0, got {d}")
            dist[i, j] = min(d, cutoff)
    powed = dist ** order
    if m > n:
        powed = powed.T
        m, n = n, m
    loc = _optimal_cost(powed)
    return float(((cutoff ** order) * (n - m) + loc) / n) ** (1.0 / order)


def ospa_iou_frame(
    pred_frame: FrameAnnotations,
    gt_frame: FrameAnnotations,
    *,
    cutoff: float = 1.0,
    order: float = 1.0,
) -> float:
    """Set distance between two frames under the (1 - IoU) box base distance.

    Persons without a stored box use the tight enclosing box of their pose.
    """
    pred_boxes = [person_box(p) for p in pred_frame.persons]
    gt_boxes = [person_box(g) for g in gt_frame.persons]
    return ospa(
        pred_boxes,
        gt_boxes,
        lambda a, b: 1.0 - iou(a, b),
        cutoff=cutoff,
        order=order,
    )


# -- ranked matching and AP --------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    """Greedy OKS matching of one frame: (pred index, gt index, oks) pairs
    plus the leftover indices on both sides."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_predictions: tuple[int, ...]
    unmatched_ground_truths: tuple[int, ...]


def _frame_oks(pred, gt, params) -> float | None:
    """OKS between two persons, or None when undefined (missing pose or no
    labeled ground-truth keypoint)."""
    if pred.pose is None or gt.pose is None:
        return None
    if all(kp.visibility <= 0 for kp in gt.pose.keypoints):
        return None
    return oks(pred.pose, gt.pose, params, person_box(gt))


def match_frame_oks(
    pred_frame: FrameAnnotations,
    gt_frame: FrameAnnotations,
    params: OksParams,
    threshold: float,
) -> MatchResult:
    """Match predictions (score-descending) to the unmatched ground truth with
    the highest OKS, accepting the pair when that OKS >= threshold."""
    preds = pred_frame.persons
    gts = gt_frame.persons
    order = sorted(
        range(len(preds)),
        key=lambda i: (-(preds[i].score if preds[i].score is not None else 0.0), i),
    )
    taken: set[int] = set()
    pairs = []
    for pi in order:
        best_oks = -1.0
        best_gi = -1
        for gi in range(len(gts)):
            if gi in taken:
                continue
            value = _frame_oks(preds[pi], gts[gi], params)
            if value is not None and value > best_oks:
                best_oks = value
                best_gi = gi
        if best_gi >= 0 and best_oks >= threshold:
            taken.add(best_gi)
            pairs.append((pi, best_gi, best_oks))
    matched_preds = {pi for pi, _, _ in pairs}
    return MatchResult(
        pairs=tuple(sorted(pairs)),
        unmatched_predictions=tuple(i for i in range(len(preds)) if i not in matched_preds),
        unmatched_ground_truths=tuple(i for i in range(len(gts)) if i not in taken),
    )


def _check_pair(preds: Dataset, gts: Dataset) -> None:
    if preds.schema_id != gts.schema_id:
        raise ValidationError(
            f"schema mismatch: predictions {preds.schema_id!r} vs "
            f"ground truth {gts.schema_id!r}"
        )
    if preds.pano != gts.pano:
        raise ValidationError("panorama mismatch between predictions and ground truth")
    gt_ids = {f.frame_id for f in gts.frames}
    extra = sorted(f.frame_id for f in preds.frames if f.frame_id not in gt_ids)
    if extra:
        raise ValidationError(f"prediction frames missing from ground truth: {extra}")
    for frame in preds.frames:
        for i, person in enumerate(frame.persons):
            if person.score is None:
                raise ValidationError(
                    f"prediction without score (frame {frame.frame_id!r}, person {i})"
                )


def _ranked_matches(
    preds: Dataset, gts: Dataset, params: OksParams, threshold: float
) -> tuple[list[tuple[float, str, int, bool]], dict[str, MatchResult]]:
    pred_frames = {f.frame_id: f for f in preds.frames}
    ranked = []
    matches: dict[str, MatchResult] = {}
    for gt_frame in gts.frames:
        pred_frame = pred_frames.get(gt_frame.frame_id) or FrameAnnotations(
            gt_frame.frame_id, ()
        )
        result = match_frame_oks(pred_frame, gt_frame, params, threshold)
        matches[gt_frame.frame_id] = result
        matched = {pi for pi, _, _ in result.pairs}
        for i, person in enumerate(pred_frame.persons):
            ranked.append((float(person.score), gt_frame.frame_id, i, i in matched))
    ranked.sort(key=lambda r: (-r[0], r[1], r[2]))
    return ranked, matches


def _ap_101(tp_flags: Sequence[bool], num_gt: int) -> float:
    if num_gt == 0:
        return 1.0 if not tp_flags else 0.0
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    ranks = np.arange(1, len(tp_flags) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / num_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        idx = int(np.searchsorted(recall, r, side="left"))
        if idx < len(recall):
            total += float(envelope[idx])
    return total / 101.0


def ap_at_oks(
    preds: Dataset, gts: Dataset, params: OksParams, threshold: float = 0.5
) -> float:
    """Average precision over the dataset-global score ranking, 101-point
    interpolated, with a prediction counting as true positive when it greedily
    matches a same-frame ground truth at OKS >= threshold."""
    _check_pair(preds, gts)
    ranked, _ = _ranked_matches(preds, gts, params, threshold)
    num_gt = sum(len(f.persons) for f in gts.frames)
    return _ap_101([tp for _, _, _, tp in ranked], num_gt)


# -- dataset evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    oks_threshold: float = 0.5
    oks_params: OksParams | None = None
    ospa_cutoff: float = 1.0
    ospa_order: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.oks_threshold <= 1.0:
            raise ValueError(f"oks threshold {self.oks_threshold} outside [0, 1]")


@dataclass(frozen=True)
class FrameStats:
    ospa_iou: float
    num_predictions: int
    num_ground_truths: int
    num_matched: int


@dataclass(frozen=True)
class EvalReport:
    """Dataset aggregates plus the per-frame breakdown and a config echo
    sufficient to re-run the exact evaluation."""

    ospa_iou: float
    ap_05: float
    per_frame: dict[str, FrameStats] = field(repr=False)
    config: dict = field(repr=False)

    def to_json_dict(self) -> dict:
        return {
            "ospa_iou": self.ospa_iou,
            "ap_05": self.ap_05,
            "config": self.config,
            "per_frame": {
                fid: {
                    "ospa_iou": s.ospa_iou,
                    "num_predictions": s.num_predictions,
                    "num_ground_truths": s.num_ground_truths,
                    "num_matched": s.num_matched,
                }
                for fid, s in sorted(self.per_frame.items())
            },
        }


def evaluate(preds: Dataset, gts: Dataset, config: EvalConfig | None = None) -> EvalReport:
    """Dataset-mean set distance and AP at the configured OKS threshold.

    Ground-truth frames with no prediction frame count as empty prediction
    sets. Deterministic and independent of frame iteration order: frames are
    aggregated in sorted frame-id order.
    """
    config = config or EvalConfig()
    _check_pair(preds, gts)
    params = config.oks_params or default_oks_params(gts.schema_id)

    pred_frames = {f.frame_id: f for f in preds.frames}
    ranked, matches = _ranked_matches(preds, gts, params, config.oks_threshold)

    per_frame: dict[str, FrameStats] = {}
    for gt_frame in gts.frames:  # Dataset keeps frames in sorted-id order
        fid = gt_frame.frame_id
        pred_frame = pred_frames.get(fid) or FrameAnnotations(fid, ())
        frame_ospa = ospa_iou_frame(
            pred_frame, gt_frame, cutoff=config.ospa_cutoff, order=config.ospa_order
        )
        per_frame[fid] = FrameStats(
            ospa_iou=frame_ospa,
            num_predictions=len(pred_frame.persons),
            num_ground_truths=len(gt_frame.persons),
            num_matched=len(matches[fid].pairs),
        )

    num_frames = len(per_frame)
    mean_ospa = (
        sum(per_frame[fid].ospa_iou for fid in sorted(per_frame)) / num_frames
        if num_frames
        else 0.0
    )
    num_gt = sum(len(f.persons) for f in gts.frames)
    ap = _ap_101([tp for _, _, _, tp in ranked], num_gt)

    echo = {
        "schema": gts.schema_id,
        "oks_threshold": config.oks_threshold,
        "oks_sigmas": list(params.sigmas),
        "scale_source": params.scale_source,
        "ospa_cutoff": config.ospa_cutoff,
        "ospa_order": config.ospa_order,
    }
    return EvalReport(ospa_iou=mean_ospa, ap_05=ap, per_frame=per_frame, config=echo)


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def save_frame_table(report: EvalReport, path: str | Path) -> None:
    """One row per frame: frame_id, ospa_iou, num_predictions,
    num_ground_truths, num_matched."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame_id", "ospa_iou", "num_predictions", "num_ground_truths", "num_matched"]
        )
        for fid in sorted(report.per_frame):
            s = report.per_frame[fid]
            writer.writerow(
                [fid, repr(s.ospa_iou), s.num_predictions, s.num_ground_truths, s.num_matched]
            )
