"""Synthetic annotators and the desk-scale experiment harness.

The threshold oracle stands in for a human: it answers "can" exactly when at
most a `tolerance` fraction of the ground-truth-important area is hidden,
then flips that answer with probability `flip_prob`. tolerance=0,
flip_prob=0 is the strict noiseless reader under which the protocol provably
recovers the coarsened ground truth in any punch order; looser settings
drive the order-effect and noise-robustness studies.

Everything is a pure function of the config seeds: reports are bit-identical
across runs, platforms and (de)serialization.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .aggregate import ImportanceMap, merge_sessions, set_metrics
from .grid import (
    GridLevel,
    GroundTruthMask,
    ImageRef,
    PatchId,
    PixelRect,
    coarsen_mask,
    level_grid,
    rasterize_patches,
    save_raster_png,
)
from .rng import SplitMix64, derive_seed
from .session import (
    Answer,
    Policy,
    PatchState,
    Response,
    Sequential,
    Session,
    SessionStatus,
    Shuffled,
    create_session,
)

SECONDS_PER_QUESTION = 1.32  # measured mean per punch-hole answer


@dataclass(frozen=True)
class AnnotatorModel:
    """Threshold oracle over a ground-truth mask.

    tolerance: max fraction of important area that may be hidden while still
    answering "can" (0 = strict). flip_prob: chance of flipping the truthful
    answer, drawn from the model's own deterministic stream.
    """

    mask: GroundTruthMask
    tolerance: float = 0.0
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tolerance < 1.0:
            raise ValueError(f"tolerance must lie in [0, 1), got {self.tolerance}")
        if not 0.0 <= self.flip_prob <= 0.5:
            raise ValueError(f"flip_prob must lie in [0, 0.5], got {self.flip_prob}")


def oracle_answer(
    model: AnnotatorModel, hidden: Iterable[PixelRect], rng: SplitMix64
) -> Response:
    """Answer for a stimulus whose hidden rects are given.

    Truthful answer is "can" iff the hidden fraction of important area is at
    most the tolerance; an all-unimportant mask always truthfully answers
    "can" (hidden fraction defined as 0). One uniform draw per call decides
    the flip, so answer streams reproduce bit-exactly for a fixed seed.
    """
    total = model.mask.total
    hidden_area = sum(model.mask.count_in(rect) for rect in hidden)
    truthful = total == 0 or hidden_area / total <= model.tolerance
    if rng.next_float() < model.flip_prob:
        truthful = not truthful
    return Response.CAN if truthful else Response.CANNOT


def run_session(
    model: AnnotatorModel,
    question: str,
    base_patch_side: int,
    max_level: int,
    policy: Policy,
    *,
    multi_pass: bool = False,
    worker_id: str = "sim",
    session_id: Optional[str] = None,
    image_id: str = "sim-image",
    use_rect_oracle: bool = False,
) -> Session:
    """Drive a session with the synthetic annotator until DONE.

    The default path tracks hidden important area incrementally from
    per-patch pixel counts, which is exactly the rect sum the oracle would
    compute but O(group) per question; use_rect_oracle=True answers from the
    stimulus rect list instead (the two are cross-checked in tests).
    """
    image = ImageRef(id=image_id, width=model.mask.width, height=model.mask.height)
    session = create_session(
        image,
        question,
        base_patch_side,
        max_level,
        policy,
        multi_pass=multi_pass,
        session_id=session_id,
    )
    rng = SplitMix64(model.seed)
    total = model.mask.total
    counts = model.mask.patch_counts(session.grid).tolist()
    resolved_hidden = 0  # important pixels inside unimportant/excluded patches
    while session.status is not SessionStatus.DONE:
        if session.status is SessionStatus.LEVEL_COMPLETE:
            session.advance_level()
            if session.status is SessionStatus.DONE:
                break
            counts = model.mask.patch_counts(session.grid).tolist()
            resolved_hidden = sum(
                counts[pid.row][pid.col]
                for pid, st in session.states.items()
                if st is PatchState.EXCLUDED
            )
            continue
        group = session.punch_next()
        assert group is not None
        pending_area = sum(counts[pid.row][pid.col] for pid in group)
        if use_rect_oracle:
            stimulus = session.next_stimulus()
            assert stimulus is not None
            response = oracle_answer(model, stimulus.hidden, rng)
        else:
            truthful = (
                total == 0 or (resolved_hidden + pending_area) / total <= model.tolerance
            )
            if rng.next_float() < model.flip_prob:
                truthful = not truthful
            response = Response.CAN if truthful else Response.CANNOT
        if response is Response.CAN:
            resolved_hidden += pending_area
        session.submit_answer(
            Answer(worker_id=worker_id, punched=frozenset(group), response=response)
        )
    return session


def estimate_time(n_questions: int, seconds_per_question: float = SECONDS_PER_QUESTION) -> float:
    """Projected annotation wall time: questions x seconds per question.

    Rounded at 10 decimals so decimal-valued rates multiply out to
    decimal-exact totals (23 x 1.32 is 30.36, not 30.360000000000003).
    """
    if n_questions < 0:
        raise ValueError(f"question count must be >= 0, got {n_questions}")
    return round(n_questions * seconds_per_question, 10)


def analytic_majority_error(flip_prob: float, m: int) -> float:
    """Probability that a majority of m i.i.d. flip-noisy answers is wrong:
    the binomial tail sum_{j>m/2} C(m,j) p^j (1-p)^(m-j)."""
    if m < 1 or m % 2 == 0:
        raise ValueError(f"m must be a positive odd count, got {m}")
    if not 0.0 <= flip_prob <= 0.5:
        raise ValueError(f"flip_prob must lie in [0, 0.5], got {flip_prob}")
    return sum(
        math.comb(m, j) * flip_prob**j * (1.0 - flip_prob) ** (m - j)
        for j in range((m + 1) // 2, m + 1)
    )


def empirical_majority_error(
    flip_prob: float, m: int, trials: int, seed: int = 0
) -> float:
    """Monte Carlo estimate of the majority-vote error rate.

    Each trial samples m flip-noisy answers to one question whose truthful
    answer is "can" and runs them through the real majority_vote.
    """
    from .aggregate import majority_vote

    if m < 1 or m % 2 == 0:
        raise ValueError(f"m must be a positive odd count, got {m}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = SplitMix64(seed)
    wrong = 0
    for _ in range(trials):
        votes = [
            Response.CANNOT if rng.next_float() < flip_prob else Response.CAN
            for _ in range(m)
        ]
        if majority_vote(votes) is not Response.CAN:
            wrong += 1
    return wrong / trials


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    base_patch_side: int
    max_level: int
    policies: Tuple[Policy, ...]
    annotators: Tuple[AnnotatorModel, ...]
    orders: int = 0  # shuffled-order seeds for the order-effect study
    workers: int = 1  # sessions merged per majority map; must be odd
    trials: int = 1
    seconds_per_question: float = SECONDS_PER_QUESTION
    noise_trials: int = 10_000  # samples behind the majority-error estimate
    question: str = "simulated question"

    def __post_init__(self):
        if self.workers < 1 or self.workers % 2 == 0:
            raise ValueError(f"workers must be a positive odd count, got {self.workers}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.seconds_per_question <= 0:
            raise ValueError("seconds_per_question must be positive")
        if not self.annotators:
            raise ValueError("need at least one annotator model")


@dataclass(frozen=True)
class RunRecord:
    """Stats for one worker session within the experiment."""

    policy: str
    seed: int
    annotator: int
    trial: int
    worker: int
    questions_by_level: Dict[int, int]
    metrics_by_level: Dict[int, Tuple[float, float, float]]  # iou, precision, recall
    est_seconds: float


@dataclass(frozen=True)
class ExperimentReport:
    runs: Tuple[RunRecord, ...]
    majority_maps: Dict[str, ImportanceMap]
    disagreement_grid: Optional[GridLevel]
    disagreement: Optional[np.ndarray]  # pairwise order-disagreement per patch
    majority_error: Dict[Tuple[float, int], Tuple[float, float]]  # (eps,m) -> (emp, analytic)
    total_est_seconds: float


def _policy_label(policy: Policy) -> str:
    if isinstance(policy, Sequential):
        return "sequential"
    if isinstance(policy, Shuffled):
        return "shuffled"
    return f"group{policy.max_group}"


def _reseed(policy: Policy, seed: int) -> Policy:
    if isinstance(policy, Sequential):
        return policy
    return replace(policy, seed=seed)


def _truth_metrics(
    session: Session, mask: GroundTruthMask
) -> Dict[int, Tuple[float, float, float]]:
    out: Dict[int, Tuple[float, float, float]] = {}
    for lvl, important in session.level_important.items():
        grid = level_grid(mask.width, mask.height, session.base_patch_side, lvl)
        out[lvl] = set_metrics(set(important), coarsen_mask(mask, grid))
    return out


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run every (policy, annotator, trial, worker) session plus the
    order-effect and noise-calibration studies. Deterministic in the config.
    """
    runs: List[RunRecord] = []
    majority_maps: Dict[str, ImportanceMap] = {}
    total_questions = 0

    for pi, policy in enumerate(config.policies):
        label = _policy_label(policy)
        base_seed = getattr(policy, "seed", 0)
        for ai, annotator in enumerate(config.annotators):
            for trial in range(config.trials):
                sessions = []
                for worker in range(config.workers):
                    run_seed = derive_seed(base_seed, pi, ai, trial, worker)
                    model = replace(
                        annotator, seed=derive_seed(annotator.seed, pi, ai, trial, worker)
                    )
                    session = run_session(
                        model,
                        config.question,
                        config.base_patch_side,
                        config.max_level,
                        _reseed(policy, run_seed),
                        worker_id=f"w{worker}",
                    )
                    sessions.append(session)
                    total_questions += session.question_count
                    runs.append(
                        RunRecord(
                            policy=label,
                            seed=run_seed if not isinstance(policy, Sequential) else 0,
                            annotator=ai,
                            trial=trial,
                            worker=worker,
                            questions_by_level=session.questions_by_level(),
                            metrics_by_level=_truth_metrics(session, annotator.mask),
                            est_seconds=estimate_time(
                                session.question_count, config.seconds_per_question
                            ),
                        )
                    )
                if trial == 0:
                    majority_maps[f"{label}_a{ai}"] = merge_sessions(sessions)

    disagreement_grid, disagreement = _order_study(config)
    majority_error = {
        (model.flip_prob, config.workers): (
            empirical_majority_error(
                model.flip_prob,
                config.workers,
                config.noise_trials,
                seed=derive_seed(model.seed, 0xE44),
            ),
            analytic_majority_error(model.flip_prob, config.workers),
        )
        for model in config.annotators
    }
    return ExperimentReport(
        runs=tuple(runs),
        majority_maps=majority_maps,
        disagreement_grid=disagreement_grid,
        disagreement=disagreement,
        majority_error=majority_error,
        total_est_seconds=estimate_time(total_questions, config.seconds_per_question),
    )


def _order_study(
    config: ExperimentConfig,
) -> Tuple[Optional[GridLevel], Optional[np.ndarray]]:
    """Per-patch frequency of order pairs whose final verdicts differ.

    Runs the first annotator through `orders` different shuffled punch
    orders and, at the finest level all runs reached, counts for each patch
    the fraction of run pairs that disagree on its importance.
    """
    k = config.orders
    if k < 2:
        return None, None
    annotator = config.annotators[0]
    sessions = [
        run_session(
            annotator,
            config.question,
            config.base_patch_side,
            config.max_level,
            Shuffled(seed=derive_seed(annotator.seed, 101, i)),
            worker_id=f"order{i}",
        )
        for i in range(k)
    ]
    level = min(s.current_level for s in sessions)
    grid = level_grid(
        annotator.mask.width, annotator.mask.height, config.base_patch_side, level
    )
    marks = np.zeros((grid.rows, grid.cols), dtype=np.int64)
    for s in sessions:
        for pid in s.level_important[level]:
            marks[pid.row, pid.col] += 1
    pairs = k * (k - 1) // 2
    return grid, (marks * (k - marks)) / pairs


def write_report(report: ExperimentReport, out_dir, seconds_per_question: float) -> None:
    """Write report.csv, disagreement.png and map_*.png under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["policy", "seed", "level", "questions", "iou", "precision", "recall", "est_seconds"]
        )
        for run in report.runs:
            for lvl in sorted(run.questions_by_level):
                iou, precision, recall = run.metrics_by_level.get(lvl, (0.0, 0.0, 0.0))
                questions = run.questions_by_level[lvl]
                writer.writerow(
                    [
                        run.policy,
                        run.seed,
                        lvl,
                        questions,
                        f"{iou:.6f}",
                        f"{precision:.6f}",
                        f"{recall:.6f}",
                        f"{questions * seconds_per_question:.2f}",
                    ]
                )
    if report.disagreement is not None and report.disagreement_grid is not None:
        grid = report.disagreement_grid
        scores = {
            PatchId(grid.level, r, c): float(report.disagreement[r, c])
            for r in range(grid.rows)
            for c in range(grid.cols)
        }
        save_raster_png(
            rasterize_patches(scores, grid), os.path.join(out_dir, "disagreement.png")
        )
    for name, imap in report.majority_maps.items():
        save_raster_png(
            rasterize_patches(imap.score, imap.grid),
            os.path.join(out_dir, f"map_{name}.png"),
        )
