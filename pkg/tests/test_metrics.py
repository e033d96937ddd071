"""DSC / mIoU against a brute-force pixel-counting oracle, plus report
invariants."""

import json

import numpy as np
import pytest

from affseg.errors import ShapeError
from affseg.metrics import (MetricsReport, dsc, iou, logits_to_mask, miou,
                            report_from_masks)

rng = np.random.default_rng(29)


def oracle_counts(pred, gt, cid):
    inter = npred = ngt = 0
    for i in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            p = pred[i, j] == cid
            g = gt[i, j] == cid
            inter += p and g
            npred += p
            ngt += g
    return inter, npred, ngt


def oracle_dsc(pred, gt, cid):
    inter, npred, ngt = oracle_counts(pred, gt, cid)
    return 1.0 if npred + ngt == 0 else 2.0 * inter / (npred + ngt)


def oracle_iou(pred, gt, cid):
    inter, npred, ngt = oracle_counts(pred, gt, cid)
    union = npred + ngt - inter
    return 1.0 if union == 0 else inter / union


def test_identical_masks():
    m = rng.integers(0, 3, (8, 8))
    assert dsc(m, m, 1) == 1.0
    assert miou(m, m, [0, 1, 2]) == 1.0


def test_disjoint_masks():
    gt = np.zeros((4, 4), dtype=int)
    gt[:2] = 1
    pred = np.zeros((4, 4), dtype=int)
    pred[2:] = 1
    assert dsc(pred, gt, 1) == 0.0
    assert iou(pred, gt, 1) == 0.0


def test_2x2_hand_counted_example():
    gt = np.array([[1, 1], [0, 0]])     # top row
    pred = np.array([[1, 0], [1, 0]])   # left column
    assert dsc(pred, gt, 1) == pytest.approx(0.5)
    assert iou(pred, gt, 1) == pytest.approx(1.0 / 3.0)
    assert iou(pred, gt, 0) == pytest.approx(1.0 / 3.0)
    assert miou(pred, gt, [1, 0]) == pytest.approx(1.0 / 3.0)


def test_empty_empty_convention():
    z = np.zeros((4, 4), dtype=int)
    assert dsc(z, z, 5) == 1.0
    assert iou(z, z, 5) == 1.0


def test_all_background_prediction():
    gt = np.zeros((4, 4), dtype=int)
    gt[1, 1] = 1
    pred = np.zeros((4, 4), dtype=int)
    assert iou(pred, gt, 1) == 0.0


def test_matches_oracle_on_random_masks():
    for _ in range(100):
        pred = rng.integers(0, 3, (16, 16))
        gt = rng.integers(0, 3, (16, 16))
        for cid in range(3):
            assert dsc(pred, gt, cid) == oracle_dsc(pred, gt, cid)
            assert iou(pred, gt, cid) == oracle_iou(pred, gt, cid)


def test_symmetry_and_dsc_geq_iou():
    for _ in range(200):
        pred = rng.integers(0, 2, (12, 12))
        gt = rng.integers(0, 2, (12, 12))
        assert dsc(pred, gt, 1) == dsc(gt, pred, 1)
        assert iou(pred, gt, 1) == iou(gt, pred, 1)
        assert dsc(pred, gt, 1) >= iou(pred, gt, 1)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        dsc(np.zeros((2, 2), dtype=int), np.zeros((3, 3), dtype=int), 0)


def test_report_means_and_serialization(tmp_path):
    preds = [rng.integers(0, 3, (8, 8)) for _ in range(5)]
    gts = [rng.integers(0, 3, (8, 8)) for _ in range(5)]
    report = report_from_masks(preds, gts, num_classes=3)
    assert report.class_names == ["class_1", "class_2"]
    assert report.mean_dsc == pytest.approx(np.mean(report.per_class_dsc))
    assert report.mean_iou == pytest.approx(np.mean(report.per_class_iou))
    path = tmp_path / "report.json"
    report.save(path)
    raw = json.loads(path.read_text())
    assert raw["format_version"] == 1
    # raw [0,1] values, not pre-multiplied percentages
    assert all(0.0 <= v <= 1.0 for v in raw["per_class_dsc"])
    assert "DSC(%)" in report.table()


def test_logits_to_mask_paths():
    z = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_array_equal(logits_to_mask(z), z.argmax(axis=1))
    zb = rng.standard_normal((2, 1, 4, 4))
    np.testing.assert_array_equal(logits_to_mask(zb), (zb[:, 0] > 0).astype(int))
