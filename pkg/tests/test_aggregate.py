import numpy as np
import pytest

from _helpers import drive, important_oracle
from punchhole.aggregate import (
    BoxAnnotation,
    agreement,
    compare,
    compare_scores,
    majority_vote,
    merge_sessions,
    rasterize_boxes,
    read_boxes_csv,
    set_metrics,
    write_boxes_csv,
)
from punchhole.grid import ImageRef, PatchId, PixelRect, partition, patch_ids, patch_rect
from punchhole.session import Response, Sequential, create_session

IMG = ImageRef("img", 64, 64)
GRID = partition(64, 64, 16)


def finished_session(important, *, max_level=0, policy=None, worker="w"):
    s = create_session(IMG, "q", 16, max_level, policy or Sequential())
    return drive(s, important_oracle(important), worker=worker)


def test_merge_single_session_is_indicator():
    marked = {PatchId(0, 1, 1), PatchId(0, 2, 3)}
    imap = merge_sessions([finished_session(marked)])
    assert imap.n_workers == 1
    assert set(imap.score) == set(patch_ids(GRID))
    assert {pid for pid, v in imap.score.items() if v == 1.0} == marked
    assert all(v in (0.0, 1.0) for v in imap.score.values())


def test_merge_identical_sessions_is_idempotent():
    marked = {PatchId(0, 0, 0)}
    one = merge_sessions([finished_session(marked)])
    two = merge_sessions([finished_session(marked), finished_session(marked)])
    assert one.score == two.score
    assert two.n_workers == 2


def test_merge_disagreement_scores_half():
    a = finished_session({PatchId(0, 1, 1)})
    b = finished_session({PatchId(0, 1, 1), PatchId(0, 2, 2)})
    imap = merge_sessions([a, b])
    assert imap.score[PatchId(0, 2, 2)] == 0.5
    assert imap.score[PatchId(0, 1, 1)] == 1.0
    assert all(
        v in (0.0, 0.5, 1.0) for v in imap.score.values()
    )


def test_merge_scores_unchanged_by_duplicating_the_worker_set():
    sessions = [
        finished_session({PatchId(0, 0, 1)}, worker="a"),
        finished_session({PatchId(0, 1, 0), PatchId(0, 0, 1)}, worker="b"),
        finished_session(set(), worker="c"),
    ]
    once = merge_sessions(sessions)
    twice = merge_sessions(sessions + sessions)
    assert once.score == twice.score
    assert twice.n_workers == 2 * once.n_workers


def test_merge_is_permutation_invariant():
    sessions = [
        finished_session({PatchId(0, 0, 1)}),
        finished_session({PatchId(0, 1, 0), PatchId(0, 0, 1)}),
        finished_session(set()),
    ]
    forward = merge_sessions(sessions)
    backward = merge_sessions(sessions[::-1])
    assert forward.score == backward.score


def test_merge_projects_to_finest_common_level():
    coarse = finished_session({PatchId(0, 1, 1)}, max_level=0)
    deep_important = {PatchId(0, 1, 1), PatchId(1, 2, 2)}  # one surviving child
    deep = finished_session(deep_important, max_level=1)
    assert deep.current_level == 1
    imap = merge_sessions([coarse, deep])
    # finest common level is 0: read both verdicts there
    assert imap.grid.level == 0
    assert imap.score[PatchId(0, 1, 1)] == 1.0
    assert sum(imap.score.values()) == 1.0


def test_merge_validates_inputs():
    with pytest.raises(ValueError):
        merge_sessions([])
    unfinished = create_session(IMG, "q", 16, 0, Sequential())
    with pytest.raises(ValueError):
        merge_sessions([unfinished])
    other = create_session(ImageRef("other", 64, 64), "q", 16, 0, Sequential())
    with pytest.raises(ValueError):
        merge_sessions([finished_session(set()), drive(other, important_oracle(set()))])


def test_agreement_unanimous_has_no_controversy():
    imap = merge_sessions([finished_session({PatchId(0, 3, 3)})])
    for tau in (0.6, 0.8, 1.0):
        report = agreement(imap, tau)
        assert report.controversial == frozenset()
        assert report.consensus_important == {PatchId(0, 3, 3)}


def test_agreement_half_score_is_controversial():
    a = finished_session({PatchId(0, 1, 1)})
    b = finished_session(set())
    report = agreement(merge_sessions([a, b]), 0.8)
    assert PatchId(0, 1, 1) in report.controversial


def test_agreement_boundary_is_inclusive():
    # 4 of 5 workers mark the patch: 0.8 >= tau=0.8 counts as consensus
    sessions = [finished_session({PatchId(0, 0, 0)}, worker=f"w{i}") for i in range(4)]
    sessions.append(finished_session(set(), worker="w4"))
    report = agreement(merge_sessions(sessions), 0.8)
    assert PatchId(0, 0, 0) in report.consensus_important
    # and the mirror case: 1 of 5 is consensus-unimportant at the same tau,
    # despite 1-0.8 not being representable exactly in binary
    mirror = [finished_session({PatchId(0, 0, 0)}, worker="w0")] + [
        finished_session(set(), worker=f"w{i}") for i in range(1, 5)
    ]
    report = agreement(merge_sessions(mirror), 0.8)
    assert PatchId(0, 0, 0) in report.consensus_unimportant


def test_agreement_partitions_every_patch():
    rng = np.random.default_rng(2)
    sessions = [
        finished_session(
            {PatchId(0, int(r), int(c)) for r, c in rng.integers(0, 4, size=(3, 2))},
            worker=f"w{i}",
        )
        for i in range(5)
    ]
    imap = merge_sessions(sessions)
    for tau in (0.51, 0.6, 0.75, 0.9, 1.0):
        report = agreement(imap, tau)
        union = report.consensus_important | report.consensus_unimportant | report.controversial
        assert union == set(patch_ids(GRID))
        total = (
            len(report.consensus_important)
            + len(report.consensus_unimportant)
            + len(report.controversial)
        )
        assert total == GRID.n_patches


@pytest.mark.parametrize("tau", [0.5, 0.49, 1.01, 0.0])
def test_agreement_rejects_bad_tau(tau):
    imap = merge_sessions([finished_session(set())])
    with pytest.raises(ValueError):
        agreement(imap, tau)


def test_majority_vote_examples():
    can, cannot = Response.CAN, Response.CANNOT
    assert majority_vote([cannot, cannot, can]) is cannot
    assert majority_vote([can]) is can
    assert majority_vote([can, can, can, cannot, cannot]) is can


def test_majority_vote_rejects_even_counts():
    with pytest.raises(ValueError):
        majority_vote([Response.CAN, Response.CANNOT])
    with pytest.raises(ValueError):
        majority_vote([])


def test_boxes_exact_patch_cover():
    ann = BoxAnnotation(worker_id="w", boxes=(PixelRect(16, 16, 16, 16),))
    imap = rasterize_boxes([ann], GRID)
    assert imap.score[PatchId(0, 1, 1)] == 1.0
    assert sum(imap.score.values()) == 1.0


def test_boxes_quarter_overlap_not_marked():
    ann = BoxAnnotation(worker_id="w", boxes=(PixelRect(16, 16, 8, 8),))  # 25% of the patch
    imap = rasterize_boxes([ann], GRID)
    assert imap.score[PatchId(0, 1, 1)] == 0.0
    half = BoxAnnotation(worker_id="w", boxes=(PixelRect(16, 16, 16, 8),))  # exactly 50%
    assert rasterize_boxes([half], GRID).score[PatchId(0, 1, 1)] == 1.0


def test_boxes_two_workers_match_pixel_oracle():
    a = BoxAnnotation(worker_id="a", boxes=(PixelRect(0, 0, 32, 16),))
    b = BoxAnnotation(worker_id="b", boxes=(PixelRect(16, 0, 32, 16),))
    imap = rasterize_boxes([a, b], GRID, overlap_frac=0.5)

    # oracle: paint each worker's boxes on a pixel canvas, then threshold
    # per-patch coverage at half the patch area
    def pixel_marks(ann):
        canvas = np.zeros((64, 64), dtype=bool)
        for box in ann.boxes:
            canvas[box.y : box.y + box.h, box.x : box.x + box.w] = True
        marked = set()
        for pid in patch_ids(GRID):
            x, y, w, h = patch_rect(GRID, pid)
            if canvas[y : y + h, x : x + w].sum() >= 0.5 * w * h:
                marked.add(pid)
        return marked

    expected = {}
    marks = [pixel_marks(a), pixel_marks(b)]
    for pid in patch_ids(GRID):
        expected[pid] = sum(pid in m for m in marks) / 2
    assert imap.score == expected
    assert imap.score[PatchId(0, 0, 1)] == 1.0  # overlapped patch
    assert imap.score[PatchId(0, 0, 0)] == 0.5  # only worker a
    assert imap.score[PatchId(0, 0, 2)] == 0.5  # only worker b


def test_boxes_multibox_worker_uses_any_box():
    ann = BoxAnnotation(
        worker_id="w", boxes=(PixelRect(0, 0, 8, 8), PixelRect(4, 4, 12, 12))
    )
    # neither box alone covers half of patch (0,0): 64 and 144 of 256 needed=128
    imap = rasterize_boxes([ann], GRID)
    assert imap.score[PatchId(0, 0, 0)] == 1.0  # 144 >= 128 from the second box


def test_boxes_validation():
    with pytest.raises(ValueError):
        rasterize_boxes([], GRID)
    with pytest.raises(ValueError):
        rasterize_boxes(
            [BoxAnnotation(worker_id="w", boxes=(PixelRect(60, 60, 10, 10),))], GRID
        )
    # an empty box list is a legal worker submission
    imap = rasterize_boxes([BoxAnnotation(worker_id="w", boxes=())], GRID)
    assert all(v == 0.0 for v in imap.score.values())


def test_compare_identical_maps():
    imap = merge_sessions([finished_session({PatchId(0, 2, 2), PatchId(0, 1, 3)})])
    metrics = compare(imap, imap)
    assert (metrics.iou_at_half, metrics.precision, metrics.recall) == (1.0, 1.0, 1.0)
    assert metrics.pearson == pytest.approx(1.0)
    assert metrics.spearman == pytest.approx(1.0)


def test_compare_disjoint_maps():
    a = merge_sessions([finished_session({PatchId(0, 0, 0)})])
    b = merge_sessions([finished_session({PatchId(0, 3, 3)})])
    assert compare(a, b).iou_at_half == 0.0


def test_compare_subset_maps():
    small = {PatchId(0, 1, 1), PatchId(0, 1, 2)}
    big = small | {PatchId(0, 2, 1), PatchId(0, 2, 2)}
    a = merge_sessions([finished_session(small)])
    b = merge_sessions([finished_session(big)])
    metrics = compare(a, b)
    assert metrics.recall == 0.5
    assert metrics.precision == 1.0
    assert metrics.iou_at_half == 0.5


def test_compare_constant_maps_have_undefined_correlations():
    a = merge_sessions([finished_session(set())])
    b = merge_sessions([finished_session({PatchId(0, 0, 0)})])
    metrics = compare(a, b)
    assert metrics.pearson is None and metrics.spearman is None
    assert metrics.iou_at_half == 0.0  # set metrics still computed


def test_compare_requires_same_grid():
    a = merge_sessions([finished_session(set())])
    other = create_session(ImageRef("o", 32, 32), "q", 16, 0, Sequential())
    b = merge_sessions([drive(other, important_oracle(set()))])
    with pytest.raises(ValueError):
        compare(a, b)


def test_compare_is_direction_sensitive():
    small = {PatchId(0, 1, 1)}
    big = small | {PatchId(0, 2, 2)}
    a = merge_sessions([finished_session(small)])
    b = merge_sessions([finished_session(big)])
    ab = compare(a, b)
    ba = compare(b, a)
    assert ab.iou_at_half == ba.iou_at_half == 0.5
    assert (ab.precision, ab.recall) == (1.0, 0.5)
    assert (ba.precision, ba.recall) == (0.5, 1.0)


def test_set_metrics_degenerate_conventions():
    assert set_metrics(set(), set()) == (1.0, 1.0, 1.0)
    assert set_metrics(set(), {PatchId(0, 0, 0)}) == (0.0, 0.0, 0.0)
    assert set_metrics({PatchId(0, 0, 0)}, set()) == (0.0, 0.0, 0.0)


def test_compare_scores_binarizes_strictly_above_half():
    key = PatchId(0, 0, 0)
    assert compare_scores({key: 0.5}, {key: 1.0}).recall == 0.0  # 0.5 is not a majority
    assert compare_scores({key: 0.51}, {key: 1.0}).recall == 1.0


def test_boxes_csv_roundtrip(tmp_path):
    annotations = [
        BoxAnnotation(worker_id="a", boxes=(PixelRect(0, 0, 8, 8), PixelRect(4, 4, 6, 6))),
        BoxAnnotation(worker_id="b", boxes=(PixelRect(10, 12, 20, 8),)),
    ]
    path = tmp_path / "boxes.csv"
    write_boxes_csv(annotations, path)
    assert read_boxes_csv(path) == annotations
    assert path.read_text().splitlines()[0] == "worker_id,x,y,w,h"
