"""Merging completed sessions into importance maps and comparing maps.

A patch's score is the fraction of workers whose session marked it important
at the finest level every session reached; verdicts made at coarser levels
(regions ruled out early) count as "not important" for all their
descendants. Scores near 0 or 1 are consensus; mid-range scores flag
controversial or subjective areas.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

from scipy import stats

from .grid import GridLevel, PatchId, PixelRect, level_grid, patch_ids, patch_rect
from .session import Response, Session, SessionStatus


@dataclass(frozen=True)
class ImportanceMap:
    """Per-patch importance scores in [0,1] over one grid level."""

    grid: GridLevel
    score: Dict[PatchId, float]
    n_workers: int


@dataclass(frozen=True)
class AgreementReport:
    """Partition of patches into consensus and controversial sets at τ."""

    consensus_important: FrozenSet[PatchId]
    consensus_unimportant: FrozenSet[PatchId]
    controversial: FrozenSet[PatchId]
    tau: float


@dataclass(frozen=True)
class BoxAnnotation:
    """Free-form rectangle annotation from one worker (baseline method)."""

    worker_id: str
    boxes: Tuple[PixelRect, ...]


@dataclass(frozen=True)
class ComparisonMetrics:
    iou_at_half: float
    precision: float
    recall: float
    pearson: Optional[float]  # None when either score vector is constant
    spearman: Optional[float]


def merge_sessions(sessions: Sequence[Session]) -> ImportanceMap:
    """Merge completed sessions into one map at their finest common level.

    score(p) = fraction of sessions that marked p important at that level.
    All sessions must be DONE and share image, question and base patch side.
    """
    if not sessions:
        raise ValueError("need at least one session to merge")
    first = sessions[0]
    for s in sessions:
        if s.status is not SessionStatus.DONE:
            raise ValueError(f"session {s.id} is not finished")
        if (
            (s.image.id, s.image.width, s.image.height) != (first.image.id, first.image.width, first.image.height)
            or s.question != first.question
            or s.base_patch_side != first.base_patch_side
        ):
            raise ValueError(f"session {s.id} has a mismatched configuration")
    target_level = min(s.current_level for s in sessions)
    grid = level_grid(first.image.width, first.image.height, first.base_patch_side, target_level)
    marks = [s.level_important[target_level] for s in sessions]
    n = len(sessions)
    score = {
        pid: sum(pid in m for m in marks) / n for pid in patch_ids(grid)
    }
    return ImportanceMap(grid=grid, score=score, n_workers=n)


def agreement(imap: ImportanceMap, tau: float) -> AgreementReport:
    """Split patches into consensus-important (score >= τ),
    consensus-unimportant (score <= 1-τ) and controversial (in between)."""
    if not 0.5 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0.5, 1], got {tau}")
    important, unimportant, contested = set(), set(), set()
    for pid, s in imap.score.items():
        if s >= tau:
            important.add(pid)
        elif 1.0 - s >= tau:  # s <= 1-tau, phrased to keep k/n boundaries exact
            unimportant.add(pid)
        else:
            contested.add(pid)
    return AgreementReport(
        consensus_important=frozenset(important),
        consensus_unimportant=frozenset(unimportant),
        controversial=frozenset(contested),
        tau=tau,
    )


def majority_vote(answers: Sequence[Response]) -> Response:
    """Strict-majority response over an odd number of answers."""
    if len(answers) % 2 == 0 or not answers:
        raise ValueError(f"majority vote needs an odd count, got {len(answers)}")
    cannot = sum(1 for a in answers if a is Response.CANNOT)
    return Response.CANNOT if cannot * 2 > len(answers) else Response.CAN


def _intersection_area(a: PixelRect, b: PixelRect) -> int:
    w = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    h = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(0, w) * max(0, h)


def rasterize_boxes(
    annotations: Sequence[BoxAnnotation],
    grid: GridLevel,
    overlap_frac: float = 0.5,
) -> ImportanceMap:
    """Project box annotations onto the grid.

    A worker marks a patch when any single box covers at least overlap_frac
    of the patch's (clipped) area; scores are the marked fraction across
    workers.
    """
    if not annotations:
        raise ValueError("need at least one box annotation")
    if not 0.0 < overlap_frac <= 1.0:
        raise ValueError(f"overlap_frac must lie in (0, 1], got {overlap_frac}")
    for ann in annotations:
        for box in ann.boxes:
            if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 \
                    or box.x + box.w > grid.width or box.y + box.h > grid.height:
                raise ValueError(f"box {box} outside {grid.width}x{grid.height} image")
    n = len(annotations)
    score: Dict[PatchId, float] = {}
    for pid in patch_ids(grid):
        rect = patch_rect(grid, pid)
        needed = overlap_frac * rect.w * rect.h
        marked = sum(
            1
            for ann in annotations
            if any(_intersection_area(box, rect) >= needed for box in ann.boxes)
        )
        score[pid] = marked / n
    return ImportanceMap(grid=grid, score=score, n_workers=n)


def _binarize(scores: Mapping[PatchId, float]) -> Set[PatchId]:
    # strict majority: a 50/50 split does not count as important
    return {pid for pid, s in scores.items() if s > 0.5}


def set_metrics(pred: Set[PatchId], ref: Set[PatchId]) -> Tuple[float, float, float]:
    """(IoU, precision, recall) of two patch sets.

    Degenerate conventions keep everything in [0,1]: two empty sets compare
    as identical (all three metrics 1), an empty prediction against a
    non-empty reference scores precision 0.
    """
    tp = len(pred & ref)
    union = len(pred | ref)
    iou = tp / union if union else 1.0
    precision = tp / len(pred) if pred else (1.0 if not ref else 0.0)
    recall = tp / len(ref) if ref else (1.0 if not pred else 0.0)
    return iou, precision, recall


def compare_scores(
    a: Mapping[PatchId, float], b: Mapping[PatchId, float]
) -> ComparisonMetrics:
    """Set metrics on the >0.5 binarizations (a = prediction, b = reference)
    plus rank and linear correlations of the raw score vectors.

    Correlations are None for constant vectors, where they are undefined.
    """
    keys = sorted(set(a) | set(b))
    iou, precision, recall = set_metrics(_binarize(a), _binarize(b))
    va = [float(a.get(k, 0.0)) for k in keys]
    vb = [float(b.get(k, 0.0)) for k in keys]
    pearson = spearman = None
    if len(keys) >= 2 and len(set(va)) > 1 and len(set(vb)) > 1:
        pearson = float(stats.pearsonr(va, vb)[0])
        spearman = float(stats.spearmanr(va, vb)[0])
    return ComparisonMetrics(
        iou_at_half=iou,
        precision=precision,
        recall=recall,
        pearson=pearson,
        spearman=spearman,
    )


def compare(a: ImportanceMap, b: ImportanceMap) -> ComparisonMetrics:
    if a.grid != b.grid:
        raise ValueError("maps must share a grid to be compared")
    return compare_scores(a.score, b.score)


# ---------------------------------------------------------------------------
# Box annotation CSV: rows of `worker_id,x,y,w,h`.
# ---------------------------------------------------------------------------


def read_boxes_csv(path) -> List[BoxAnnotation]:
    by_worker: Dict[str, List[PixelRect]] = {}
    order: List[str] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "worker_id":
                continue
            worker, x, y, w, h = row
            if worker not in by_worker:
                by_worker[worker] = []
                order.append(worker)
            by_worker[worker].append(PixelRect(int(x), int(y), int(w), int(h)))
    return [BoxAnnotation(worker_id=w, boxes=tuple(by_worker[w])) for w in order]


def write_boxes_csv(annotations: Sequence[BoxAnnotation], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "x", "y", "w", "h"])
        for ann in annotations:
            for box in ann.boxes:
                writer.writerow([ann.worker_id, box.x, box.y, box.w, box.h])
