"""The punch-hole session state machine.

A session walks one image/question pair through grid levels. At each level
every unresolved patch group is hidden ("punched") exactly once and a binary
answer is collected: "can answer" resolves the punched patches as
unimportant (they stay hidden from then on), "cannot answer" marks a single
patch important (restored, never re-asked this level) or splits a larger
group in half for re-testing. When a level is exhausted, important patches
are refined and the process repeats until the configured depth, no patch
survives, or single-pixel patches are reached.

State is a pure function of (config, answer log): no wall clock, no global
RNG. Shuffling uses the in-repo SplitMix64 Fisher-Yates (see rng module) so
a persisted log replays bit-identically on any platform or version.

Mutations (next_stimulus / submit_answer / advance_level) must be serialized
externally per session; distinct sessions are independent.
"""

from __future__ import annotations

import json
import uuid
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Deque, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from .grid import (
    GridLevel,
    ImageRef,
    PatchId,
    PixelRect,
    RefinementExhausted,
    children,
    partition,
    patch_ids,
    patch_rect,
    refine,
)
from .rng import SplitMix64, derive_seed


class SessionFinished(Exception):
    """Raised when a finished session is asked for another stimulus."""


class ProtocolViolation(Exception):
    """Raised when an answer does not match the pending punched group."""


class ReplayError(Exception):
    """Raised by replay() at the first log entry that cannot be applied."""

    def __init__(self, index: int, message: str):
        super().__init__(f"log entry {index}: {message}")
        self.index = index


class PatchState(Enum):
    UNVISITED = "unvisited"
    PUNCHED = "punched"  # currently hidden, awaiting the pending answer
    UNIMPORTANT = "unimportant"  # answered "can"; hidden for good
    IMPORTANT = "important"  # answered "cannot" as a singleton; stays visible
    EXCLUDED = "excluded"  # descendant of an unimportant ancestor


class SessionStatus(Enum):
    ACTIVE = "active"
    LEVEL_COMPLETE = "level_complete"
    DONE = "done"


class Response(Enum):
    CAN = "can"
    CANNOT = "cannot"


@dataclass(frozen=True)
class Sequential:
    """Punch singletons in row-major order."""


@dataclass(frozen=True)
class Shuffled:
    """Punch singletons in a seed-determined permutation."""

    seed: int


@dataclass(frozen=True)
class GroupTesting:
    """Adaptive binary splitting: punch shuffled groups, halve on "cannot".

    The initial queue splits the permuted unresolved patches into groups of
    min(max_group, ceil(n/2)); a group answered "cannot" is split in half
    (first half gets the odd element) and both halves are re-enqueued at the
    back, down to singletons. Sparse importance resolves in far fewer
    questions than one-per-patch punching.
    """

    seed: int
    max_group: int

    def __post_init__(self):
        if self.max_group < 1:
            raise ValueError(f"max_group must be >= 1, got {self.max_group}")


Policy = Union[Sequential, Shuffled, GroupTesting]

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Answer:
    """One binary response to one punched group."""

    worker_id: str
    punched: FrozenSet[PatchId]
    response: Response
    latency_s: float = 0.0
    at: datetime = _EPOCH

    def __post_init__(self):
        if self.latency_s < 0:
            raise ValueError(f"latency must be >= 0, got {self.latency_s}")
        object.__setattr__(self, "punched", frozenset(self.punched))


@dataclass(frozen=True)
class Stimulus:
    """What the annotator sees: the image with hidden rects blacked out."""

    image: ImageRef
    question: str
    hidden: Tuple[PixelRect, ...]
    answered: int
    projected_total: Optional[int]

    @property
    def punch_seq(self) -> int:
        """Sequence number of the question being asked (= answers so far)."""
        return self.answered


class Session:
    """Single-writer punch-hole state machine for one worker on one image."""

    def __init__(
        self,
        image: ImageRef,
        question: str,
        base_patch_side: int,
        max_level: int,
        policy: Policy,
        *,
        multi_pass: bool = False,
        session_id: Optional[str] = None,
    ):
        if max_level < 0:
            raise ValueError(f"max_level must be >= 0, got {max_level}")
        self.id = session_id or uuid.uuid4().hex
        self.image = image
        self.question = question
        self.base_patch_side = base_patch_side
        self.max_level = max_level
        self.policy = policy
        self.multi_pass = multi_pass

        self.grid: GridLevel = partition(image.width, image.height, base_patch_side)
        self.current_level = 0
        self.states: Dict[PatchId, PatchState] = {
            pid: PatchState.UNVISITED for pid in patch_ids(self.grid)
        }
        self.pending: Optional[Tuple[PatchId, ...]] = None
        self.log: List[Answer] = []
        self.status = SessionStatus.ACTIVE
        self.level_important: Dict[int, FrozenSet[PatchId]] = {}
        self._pass_index = 0
        self._pass_unimportant = 0  # new unimportant verdicts in the current pass
        self._queue: Deque[Tuple[PatchId, ...]] = deque()
        self._build_queue()

    # -- scheduling ---------------------------------------------------------

    def _policy_seed(self) -> int:
        seed = getattr(self.policy, "seed", 0)
        return derive_seed(seed, self.current_level, self._pass_index)

    def _build_queue(self) -> None:
        unvisited = [
            pid for pid in patch_ids(self.grid) if self.states[pid] is PatchState.UNVISITED
        ]
        if isinstance(self.policy, (Shuffled, GroupTesting)):
            SplitMix64(self._policy_seed()).shuffle(unvisited)
        if isinstance(self.policy, GroupTesting):
            size = max(1, min(self.policy.max_group, (len(unvisited) + 1) // 2))
            groups = [
                tuple(unvisited[i : i + size]) for i in range(0, len(unvisited), size)
            ]
        else:
            groups = [(pid,) for pid in unvisited]
        self._queue = deque(groups)
        if not self._queue:
            self._finish_pass()

    def _finish_pass(self) -> None:
        """Queue exhausted: start another pass, move on, or finish."""
        important = frozenset(
            pid for pid, st in self.states.items() if st is PatchState.IMPORTANT
        )
        if self.multi_pass and self._pass_unimportant > 0 and important:
            # Re-verify surviving patches under the accumulated hiding until
            # a pass flips nothing. Flips only ever go important->unimportant,
            # so at most n passes can occur.
            self._pass_index += 1
            self._pass_unimportant = 0
            for pid in important:
                self.states[pid] = PatchState.UNVISITED
            self._build_queue()
            return
        self.level_important[self.current_level] = important
        if important and self.current_level < self.max_level and self.grid.patch_side >= 2:
            self.status = SessionStatus.LEVEL_COMPLETE
        else:
            self.status = SessionStatus.DONE

    # -- the operation surface ----------------------------------------------

    def punch_next(self) -> Optional[Tuple[PatchId, ...]]:
        """Pop and punch the next group per policy, without rendering.

        Returns the pending group (the existing one if a punch is already
        outstanding), or None once the session is LEVEL_COMPLETE or DONE.
        Raises SessionFinished if called on a session that was already DONE.
        Simulations drive this directly; interactive callers want
        next_stimulus, which also renders the hidden-rect view.
        """
        if self.status is SessionStatus.DONE:
            raise SessionFinished(f"session {self.id} is done")
        if self.pending is not None:
            return self.pending
        if self.status is SessionStatus.LEVEL_COMPLETE:
            return None
        group = self._queue.popleft()
        for pid in group:
            self.states[pid] = PatchState.PUNCHED
        self.pending = group
        return group

    def next_stimulus(self) -> Optional[Stimulus]:
        """Punch the next group per policy and return the stimulus.

        Returns the already-pending stimulus unchanged if one exists
        (idempotent). Returns None once the session is LEVEL_COMPLETE
        (advance_level next) or DONE; raises SessionFinished if called on a
        session that was already DONE.
        """
        if self.punch_next() is None:
            return None
        return self._stimulus()

    def submit_answer(self, answer: Answer) -> None:
        """Apply a binary answer to the pending punched group.

        "can" resolves every punched patch as unimportant. "cannot" marks a
        singleton important; a larger group is split in half, both halves
        re-enqueued, its patches back to unvisited. The answer is appended
        to the log and the pending group cleared. When the queue empties the
        status advances (LEVEL_COMPLETE or DONE) immediately.
        """
        if self.pending is None:
            raise ProtocolViolation("no pending punched group")
        if answer.punched != frozenset(self.pending):
            raise ProtocolViolation(
                f"answer covers {sorted(answer.punched)}, pending is {sorted(self.pending)}"
            )
        group = self.pending
        if answer.response is Response.CAN:
            for pid in group:
                self.states[pid] = PatchState.UNIMPORTANT
            self._pass_unimportant += len(group)
        elif len(group) == 1:
            self.states[group[0]] = PatchState.IMPORTANT
        else:
            mid = (len(group) + 1) // 2
            self._queue.append(group[:mid])
            self._queue.append(group[mid:])
            for pid in group:
                self.states[pid] = PatchState.UNVISITED
        self.log.append(answer)
        self.pending = None
        if not self._queue:
            self._finish_pass()

    def advance_level(self) -> None:
        """Refine important patches into the next level's unvisited set.

        Children of important patches become unvisited; every other child is
        excluded (its ancestors were ruled out). If the patch side is already
        1 pixel the session becomes DONE instead.
        """
        if self.status is not SessionStatus.LEVEL_COMPLETE:
            raise ProtocolViolation(f"cannot advance a session in status {self.status.value}")
        try:
            child_grid = refine(self.grid)
        except RefinementExhausted:
            self.status = SessionStatus.DONE
            return
        keep: set = set()
        for pid, st in self.states.items():
            if st is PatchState.IMPORTANT:
                keep |= children(pid, self.grid, child_grid)
        self.states = {
            pid: (PatchState.UNVISITED if pid in keep else PatchState.EXCLUDED)
            for pid in patch_ids(child_grid)
        }
        self.grid = child_grid
        self.current_level += 1
        self._pass_index = 0
        self._pass_unimportant = 0
        self.status = SessionStatus.ACTIVE
        self._build_queue()

    # -- views ----------------------------------------------------------------

    def _stimulus(self) -> Stimulus:
        hidden = sorted(
            pid
            for pid, st in self.states.items()
            if st in (PatchState.UNIMPORTANT, PatchState.EXCLUDED, PatchState.PUNCHED)
        )
        projected: Optional[int] = None
        if isinstance(self.policy, (Sequential, Shuffled)) and not self.multi_pass:
            remaining = sum(
                1 for st in self.states.values() if st is PatchState.UNVISITED
            ) + (1 if self.pending is not None else 0)
            projected = len(self.log) + remaining
        return Stimulus(
            image=self.image,
            question=self.question,
            hidden=tuple(patch_rect(self.grid, pid) for pid in hidden),
            answered=len(self.log),
            projected_total=projected,
        )

    @property
    def question_count(self) -> int:
        return len(self.log)

    def questions_by_level(self) -> Dict[int, int]:
        counts: Dict[int, int] = {}
        for answer in self.log:
            level = next(iter(answer.punched)).level
            counts[level] = counts.get(level, 0) + 1
        return counts

    def important_patches(self) -> FrozenSet[PatchId]:
        return frozenset(
            pid for pid, st in self.states.items() if st is PatchState.IMPORTANT
        )

    def snapshot(self) -> dict:
        """Full observable state, for replay-equivalence comparisons."""
        return {
            "id": self.id,
            "level": self.current_level,
            "status": self.status.value,
            "pass": self._pass_index,
            "states": {str(tuple(pid)): st.value for pid, st in sorted(self.states.items())},
            "pending": sorted(self.pending) if self.pending is not None else None,
            "queue": [list(g) for g in self._queue],
            "log": [
                (a.worker_id, sorted(a.punched), a.response.value, a.latency_s, a.at.isoformat())
                for a in self.log
            ],
            "level_important": {
                lvl: sorted(s) for lvl, s in self.level_important.items()
            },
        }


def create_session(
    image: ImageRef,
    question: str,
    base_patch_side: int,
    max_level: int,
    policy: Policy,
    *,
    multi_pass: bool = False,
    session_id: Optional[str] = None,
) -> Session:
    """Start a session: level-0 grid, every patch unvisited, nothing pending."""
    return Session(
        image,
        question,
        base_patch_side,
        max_level,
        policy,
        multi_pass=multi_pass,
        session_id=session_id,
    )


def predicted_questions(grid: GridLevel, important_per_level: Sequence[int]) -> int:
    """Planning estimate of total questions for singleton policies.

    Level 0 costs one question per patch; each later level costs one per
    child of the previous level's important patches (4 per parent, capped by
    the level's grid size; clipped borders can make the true count smaller).
    """
    total = grid.n_patches
    for count in important_per_level:
        if count < 0:
            raise ValueError("important counts must be >= 0")
        grid = refine(grid)
        total += min(4 * count, grid.n_patches)
    return total


def replay(
    image: ImageRef,
    question: str,
    base_patch_side: int,
    max_level: int,
    policy: Policy,
    log: Sequence[Answer],
    *,
    multi_pass: bool = False,
    session_id: Optional[str] = None,
) -> Session:
    """Rebuild a session by applying a recorded answer log.

    Levels auto-advance between entries exactly as a live run would. The
    first entry that does not match the deterministically scheduled pending
    group raises ReplayError with its index. An empty log yields a fresh
    session.
    """
    session = create_session(
        image,
        question,
        base_patch_side,
        max_level,
        policy,
        multi_pass=multi_pass,
        session_id=session_id,
    )
    for i, answer in enumerate(log):
        while session.status is SessionStatus.LEVEL_COMPLETE:
            session.advance_level()
        if session.status is SessionStatus.DONE:
            raise ReplayError(i, "session already finished")
        session.next_stimulus()
        assert session.pending is not None
        if answer.punched != frozenset(session.pending):
            raise ReplayError(
                i,
                f"punched {sorted(answer.punched)} does not match pending {sorted(session.pending)}",
            )
        session.submit_answer(answer)
    return session


# ---------------------------------------------------------------------------
# JSON-lines event log: one header record, then one record per answer.
# ---------------------------------------------------------------------------


def policy_to_json(policy: Policy) -> dict:
    if isinstance(policy, Sequential):
        return {"kind": "sequential"}
    if isinstance(policy, Shuffled):
        return {"kind": "shuffled", "seed": policy.seed}
    return {"kind": "group", "seed": policy.seed, "max_group": policy.max_group}


def policy_from_json(data: dict) -> Policy:
    kind = data.get("kind")
    if kind == "sequential":
        return Sequential()
    if kind == "shuffled":
        return Shuffled(seed=int(data["seed"]))
    if kind == "group":
        return GroupTesting(seed=int(data["seed"]), max_group=int(data["max_group"]))
    raise ValueError(f"unknown policy kind {kind!r}")


def header_record(session: Session, **extra) -> dict:
    record = {
        "type": "header",
        "session_id": session.id,
        "image": {
            "id": session.image.id,
            "width": session.image.width,
            "height": session.image.height,
            "source": session.image.source,
        },
        "question": session.question,
        "base_patch_side": session.base_patch_side,
        "max_level": session.max_level,
        "policy": policy_to_json(session.policy),
        "multi_pass": session.multi_pass,
    }
    record.update(extra)
    return record


def answer_record(answer: Answer) -> dict:
    levels = {pid.level for pid in answer.punched}
    if len(levels) != 1:
        raise ValueError("a punched group must live on a single level")
    return {
        "worker_id": answer.worker_id,
        "level": levels.pop(),
        "punched": [[pid.row, pid.col] for pid in sorted(answer.punched)],
        "response": answer.response.value,
        "latency_s": answer.latency_s,
        "at": answer.at.isoformat(),
    }


def answer_from_record(record: dict) -> Answer:
    level = int(record["level"])
    return Answer(
        worker_id=record["worker_id"],
        punched=frozenset(PatchId(level, int(r), int(c)) for r, c in record["punched"]),
        response=Response(record["response"]),
        latency_s=float(record["latency_s"]),
        at=datetime.fromisoformat(str(record["at"]).replace("Z", "+00:00")),
    )


def write_log(path, session: Session, **header_extra) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header_record(session, **header_extra)) + "\n")
        for answer in session.log:
            fh.write(json.dumps(answer_record(answer)) + "\n")


def read_log(path) -> Tuple[dict, List[Answer]]:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"empty session log {path}")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"session log {path} does not start with a header record")
    return header, [answer_from_record(json.loads(line)) for line in lines[1:]]


def replay_log(path) -> Session:
    """Replay a JSON-lines session log file from disk."""
    header, answers = read_log(path)
    img = header["image"]
    return replay(
        ImageRef(id=img["id"], width=img["width"], height=img["height"], source=img.get("source", "")),
        header["question"],
        header["base_patch_side"],
        header["max_level"],
        policy_from_json(header["policy"]),
        answers,
        multi_pass=header.get("multi_pass", False),
        session_id=header["session_id"],
    )
