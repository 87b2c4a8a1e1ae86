import math

import numpy as np
import pytest

from geoseg.metrics import (
    Confusion,
    aggregate,
    boundary_f,
    boundary_pixels,
    compute_report,
    confusion,
    default_theta,
    format_metrics_table,
    pixel_metrics,
)


def M(rows):
    return np.array(rows, dtype=np.uint8)


def brute_force_tally(pred, gt):
    """Independent per-pixel loop; no numpy on the counting path."""
    tp = fp = fn = tn = 0
    for i in range(len(pred)):
        for j in range(len(pred[0])):
            p, g = pred[i][j], gt[i][j]
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif g:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def brute_force_metrics(tp, fp, fn, tn):
    total = tp + fp + fn + tn
    union = tp + fp + fn
    iou = tp / union if union else 1.0
    dice = 2 * tp / (2 * tp + fp + fn) if union else 1.0
    acc = (tp + tn) / total
    if tp + fp:
        prec = tp / (tp + fp)
    else:
        prec = 1.0 if tp + fn == 0 else 0.0
    rec = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return {
        "iou": iou, "dice": dice, "accuracy": acc,
        "precision": prec, "recall": rec, "specificity": spec,
    }


class TestConfusion:
    def test_perfect(self):
        c = confusion(np.ones((2, 2), dtype=np.uint8), np.ones((2, 2), dtype=np.uint8))
        assert (c.tp, c.fp, c.fn, c.tn) == (4, 0, 0, 0)

    def test_all_missed(self):
        c = confusion(np.zeros((2, 2), dtype=np.uint8), np.ones((2, 2), dtype=np.uint8))
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 4, 0)

    def test_mixed(self):
        c = confusion(M([[1, 1], [0, 0]]), M([[1, 0], [0, 0]]))
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 0, 2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion(np.zeros((2, 2), dtype=np.uint8), np.zeros((3, 3), dtype=np.uint8))


class TestPixelMetrics:
    def test_worked_example(self):
        m = pixel_metrics(Confusion(tp=1, fp=1, fn=0, tn=2))
        assert m["iou"] == 0.5
        assert m["dice"] == pytest.approx(2 / 3)
        assert m["accuracy"] == 0.75
        assert m["precision"] == 0.5
        assert m["recall"] == 1.0
        assert m["specificity"] == pytest.approx(2 / 3)

    def test_perfect_prediction(self):
        m = pixel_metrics(Confusion(tp=5, fp=0, fn=0, tn=3))
        assert m["iou"] == m["dice"] == m["precision"] == m["recall"] == 1.0

    def test_empty_pred_nonempty_gt(self):
        m = pixel_metrics(Confusion(tp=0, fp=0, fn=4, tn=4))
        assert m["iou"] == 0.0
        assert m["precision"] == 0.0
        assert m["specificity"] == 1.0

    def test_both_empty_conventions(self):
        m = pixel_metrics(Confusion(tp=0, fp=0, fn=0, tn=9))
        assert m["iou"] == m["dice"] == m["precision"] == m["recall"] == 1.0


def test_oracle_equivalence_random():
    rng = np.random.default_rng(123)
    for _ in range(400):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        pred = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        gt = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        got = pixel_metrics(confusion(pred, gt))
        expected = brute_force_metrics(*brute_force_tally(pred.tolist(), gt.tolist()))
        for key, val in expected.items():
            assert abs(got[key] - val) <= 1e-12, key
        # dice-iou identity
        assert abs(got["dice"] - 2 * got["iou"] / (1 + got["iou"])) <= 1e-12


def test_tp_monotonicity():
    rng = np.random.default_rng(8)
    for _ in range(200):
        tp, fp, tn = (int(v) for v in rng.integers(0, 50, size=3))
        fn = int(rng.integers(1, 50))
        before = pixel_metrics(Confusion(tp=tp, fp=fp, fn=fn, tn=tn))
        after = pixel_metrics(Confusion(tp=tp + 1, fp=fp, fn=fn - 1, tn=tn))
        for key in ("iou", "dice", "recall", "accuracy"):
            assert after[key] >= before[key] - 1e-15, key


class TestBoundaryF:
    def test_identical_masks(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[2:6, 3:7] = 1
        for theta in (0.0, 1.0, 5.0):
            assert boundary_f(m, m, theta) == 1.0

    def test_far_apart_at_zero_tolerance(self):
        pred = np.zeros((5, 5), dtype=np.uint8)
        gt = np.zeros((5, 5), dtype=np.uint8)
        pred[0, 0] = 1
        gt[4, 4] = 1
        assert boundary_f(pred, gt, 0.0) == 0.0

    def test_one_sided_empty(self):
        gt = np.ones((4, 4), dtype=np.uint8)
        assert boundary_f(np.zeros((4, 4), dtype=np.uint8), gt, 2.0) == 0.0

    def test_both_empty(self):
        z = np.zeros((4, 4), dtype=np.uint8)
        assert boundary_f(z, z, 2.0) == 1.0

    def test_within_tolerance(self):
        # single pixels at distance exactly sqrt(2)
        pred = np.zeros((5, 5), dtype=np.uint8)
        gt = np.zeros((5, 5), dtype=np.uint8)
        pred[1, 1] = 1
        gt[2, 2] = 1
        assert boundary_f(pred, gt, math.sqrt(2)) == 1.0
        assert boundary_f(pred, gt, 1.0) == 0.0

    def test_identity_on_random_nonempty(self):
        rng = np.random.default_rng(44)
        for _ in range(100):
            h, w = int(rng.integers(2, 24)), int(rng.integers(2, 24))
            m = (rng.random((h, w)) < 0.4).astype(np.uint8)
            if m.sum() == 0:
                m[0, 0] = 1
            assert boundary_f(m, m, float(rng.uniform(0, 3))) == 1.0


def test_boundary_pixels_definition():
    m = np.zeros((5, 7), dtype=np.uint8)
    m[1:4, 1:6] = 1
    b = boundary_pixels(m)
    inner = np.zeros_like(m)
    inner[2, 2:5] = 1
    assert ((m == 1) & (b == 0) & (inner == 0)).sum() == 0  # fg is boundary or inner
    assert (b & inner).sum() == 0
    # full-canvas mask: every border pixel is boundary
    full = np.ones((4, 4), dtype=np.uint8)
    bf = boundary_pixels(full)
    assert bf[0].all() and bf[-1].all() and bf[:, 0].all() and bf[:, -1].all()
    assert not bf[1:3, 1:3].any()


def test_default_theta():
    assert default_theta(810, 810) == float(round(0.0075 * math.hypot(810, 810)))
    assert default_theta(100, 100) == 1.0


class TestAggregate:
    def make_report(self, sid, iou, scenario=None, level=None):
        dice = 2 * iou / (1 + iou)
        return compute_report(
            sid,
            pred=np.ones((2, 2), dtype=np.uint8),
            gt=np.ones((2, 2), dtype=np.uint8),
            scenario=scenario,
            level=level,
        ).__class__(
            sample_id=sid, iou=iou, dice=dice, accuracy=iou, precision=iou, recall=iou,
            specificity=iou, boundary_f=iou, theta=1.0, scenario=scenario, level=level,
        )

    def test_single_report(self):
        r = self.make_report("a", 0.5)
        summary = aggregate([r])
        assert summary["overall"]["iou"] == 0.5
        assert summary["overall"]["count"] == 1

    def test_mean_of_two(self):
        summary = aggregate([self.make_report("a", 0.4), self.make_report("b", 0.6)])
        assert summary["overall"]["iou"] == pytest.approx(0.5)

    def test_group_by_tags(self):
        reports = [
            self.make_report("a", 0.2, scenario="urban", level=1),
            self.make_report("b", 0.4, scenario="urban", level=2),
            self.make_report("c", 0.9, scenario="rural", level=1),
        ]
        summary = aggregate(reports)
        assert summary["by_scenario"]["urban"]["iou"] == pytest.approx(0.3)
        assert summary["by_scenario"]["urban"]["count"] == 2
        assert summary["by_scenario"]["rural"]["iou"] == pytest.approx(0.9)
        assert summary["by_level"]["1"]["count"] == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_micro_averaging(self):
        reports = [self.make_report("a", 0.0), self.make_report("b", 1.0)]
        confusions = [Confusion(tp=0, fp=0, fn=10, tn=90), Confusion(tp=90, fp=0, fn=0, tn=10)]
        summary = aggregate(reports, averaging="micro", confusions=confusions)
        assert summary["overall"]["iou"] == pytest.approx(0.9)  # 90/(90+10)

    def test_table_rendering(self):
        summary = aggregate([self.make_report("a", 0.5, scenario="urban", level=1)])
        table = format_metrics_table(summary)
        assert "IoU" in table and "BF" in table
        assert "50.0" in table
        assert "scenario:urban" in table


def test_compute_report_consistency():
    rng = np.random.default_rng(2)
    pred = (rng.random((16, 16)) < 0.5).astype(np.uint8)
    gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
    r = compute_report("x", pred, gt, theta=2.0, scenario="urban", level=3)
    assert abs(r.dice - 2 * r.iou / (1 + r.iou)) <= 1e-12
    assert r.theta == 2.0
    js = r.to_json()
    assert js["sample_id"] == "x" and js["scenario"] == "urban" and js["level"] == 3
