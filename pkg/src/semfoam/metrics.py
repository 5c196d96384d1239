"""Segmentation and reconstruction metrics."""

from __future__ import annotations

import numpy as np

from .errors import SemfoamError
from .imageio import quantize


class EmptyMatrix(SemfoamError):
    """Confusion matrix counts no pixels."""


def confusion_matrix(
    gt: np.ndarray, pred: np.ndarray, n_classes: int, ignore: int = 255
) -> np.ndarray:
    """K x K counts, rows ground truth, cols prediction; ignore pixels and
    out-of-range ground-truth values are excluded."""
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    live = (gt != ignore) & (gt >= 0) & (gt < n_classes)
    gt = gt[live]
    pred = np.clip(pred[live], 0, n_classes - 1)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (gt, pred), 1)
    return conf


def miou_macc(conf: np.ndarray) -> tuple[float, float]:
    """mIoU over classes present in GT or prediction; mAcc over classes
    present in GT.  Zero-denominator classes are excluded from their mean."""
    conf = np.asarray(conf, dtype=np.float64)
    if conf.sum() == 0:
        raise EmptyMatrix("confusion matrix is empty")
    tp = np.diag(conf)
    gt_tot = conf.sum(axis=1)
    pred_tot = conf.sum(axis=0)
    union = gt_tot + pred_tot - tp
    iou_live = union > 0
    acc_live = gt_tot > 0
    miou = float((tp[iou_live] / union[iou_live]).mean())
    macc = float((tp[acc_live] / gt_tot[acc_live]).mean())
    return miou, macc


def psnr(render: np.ndarray, gt: np.ndarray) -> float:
    """PSNR in dB between 8-bit-quantized renders and ground truth."""
    a = quantize(render).astype(np.float64) / 255.0
    b = quantize(gt).astype(np.float64) / 255.0
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)
