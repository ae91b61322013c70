"""
Many noisy workers, one map
===========================

Flip-noisy annotators disagree; merging their sessions yields per-patch
scores, an agreement threshold separates consensus from controversy, and
odd-sized majorities suppress noise at the binomial-tail rate.
"""

import numpy as np

from punchhole import (
    AnnotatorModel,
    GroundTruthMask,
    Sequential,
    agreement,
    analytic_majority_error,
    empirical_majority_error,
    merge_sessions,
    run_session,
)

pixels = np.zeros((64, 64), dtype=bool)
pixels[16:32, 16:48] = True
mask = GroundTruthMask(pixels)

EPS = 0.15
M = 5
sessions = [
    run_session(
        AnnotatorModel(mask=mask, flip_prob=EPS, seed=worker),
        "q", 16, 0, Sequential(), worker_id=f"w{worker}",
    )
    for worker in range(M)
]
imap = merge_sessions(sessions)
print(f"{M} workers with flip probability {EPS}:")
for row in range(imap.grid.rows):
    print("  " + " ".join(f"{imap.score[(0, row, col)]:.2f}" for col in range(imap.grid.cols)))

for tau in (0.8, 0.9):
    report = agreement(imap, tau=tau)
    print(f"\nagreement at tau={tau}: {len(report.consensus_important)} important, "
          f"{len(report.consensus_unimportant)} unimportant, "
          f"{len(report.controversial)} controversial")
print("(raising tau reclassifies near-threshold patches as controversial)")

print("\nmajority-vote error, analytic binomial tail vs 100k-sample estimate:")
for m in (1, 3, 5, 7):
    ana = analytic_majority_error(EPS, m)
    emp = empirical_majority_error(EPS, m, 100_000, seed=m)
    print(f"  m={m}: analytic {ana:.5f}  empirical {emp:.5f}")
