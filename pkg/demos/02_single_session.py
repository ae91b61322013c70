"""
One punch-hole session, step by step
====================================

Watch a simulated annotator answer the binary question stream. Patches
turn '#' (hidden for good), '?' (currently punched) or '!' (essential).
"""

import numpy as np

from punchhole import (
    AnnotatorModel,
    Answer,
    GroundTruthMask,
    ImageRef,
    PatchState,
    Response,
    Sequential,
    SessionStatus,
    create_session,
    oracle_answer,
)
from punchhole.rng import SplitMix64

GLYPH = {
    PatchState.UNVISITED: ".",
    PatchState.PUNCHED: "?",
    PatchState.UNIMPORTANT: "#",
    PatchState.IMPORTANT: "!",
    PatchState.EXCLUDED: "#",
}


def board(session):
    rows = []
    for r in range(session.grid.rows):
        rows.append(
            "".join(GLYPH[session.states[(session.current_level, r, c)]] for c in range(session.grid.cols))
        )
    return "\n".join(rows)


pixels = np.zeros((64, 64), dtype=bool)
pixels[18:30, 18:30] = True
pixels[50:62, 34:46] = True
mask = GroundTruthMask(pixels)
model = AnnotatorModel(mask=mask)  # strict, noiseless reader
rng = SplitMix64(model.seed)

session = create_session(ImageRef("demo", 64, 64), "Which regions changed?", 16, 1, Sequential())
print(f"{session.grid.rows}x{session.grid.cols} grid, question: {session.question!r}\n")

while session.status is not SessionStatus.DONE:
    if session.status is SessionStatus.LEVEL_COMPLETE:
        session.advance_level()
        print(f"--- refined to level {session.current_level} "
              f"({session.grid.rows}x{session.grid.cols}, side {session.grid.patch_side}) ---\n")
        continue
    stimulus = session.next_stimulus()
    response = oracle_answer(model, stimulus.hidden, rng)
    session.submit_answer(
        Answer(worker_id="demo", punched=frozenset(session.pending), response=response)
    )
    if session.current_level == 0:  # print the coarse pass only, it fits
        answer = "can answer" if response is Response.CAN else "CANNOT answer"
        print(f"punch {session.question_count:>2}: {answer}")
        print(board(session), "\n")

print(f"done after {session.question_count} questions")
for lvl, important in sorted(session.level_important.items()):
    print(f"  level {lvl}: {len(important)} essential patches")
