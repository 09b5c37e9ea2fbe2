"""
Point-cloud reconstruction metrics.

With the ground-truth cloud P and the predicted cloud Q:

    accuracy      mean over p in P of min over q in Q of ‖p - q‖
    completeness  mean over q in Q of min over p in P of ‖p - q‖
    chamfer_l1    0.5 (accuracy + completeness)
    precision     fraction of p in P with nearest distance below τ
    recall        fraction of q in Q with nearest distance below τ
    f_score       2 PR / (P + R), 0 when both are 0

Distances use the L1 norm by default; ``norm=2`` switches to Euclidean distances.
"""
import dataclasses
import logging
from typing import Literal

import numpy as np
from django.conf import settings
from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _
from scipy.spatial import cKDTree

from compsdf.meshing.mesh import Mesh, sample_surface_points

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.05
DEFAULT_POINTS = 100_000

Norm = Literal[1, 2]


@dataclasses.dataclass(frozen=True)
class MetricReport:
    accuracy: float
    completeness: float
    chamfer_l1: float
    precision: float
    recall: float
    f_score: float
    tau: float
    norm: int = 1

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def nearest_distances(source: np.ndarray, target: np.ndarray, norm: Norm = 1, workers: int | None = None) -> np.ndarray:
    """Distance from every point of ``source`` to its nearest neighbour in ``target``."""
    workers = settings.COMPSDF_THREADS if workers is None else workers
    distances, _index = cKDTree(target).query(source, k=1, p=norm, workers=workers)
    return distances


def compute_metrics(
    gt: np.ndarray,
    pred: np.ndarray,
    tau: float = DEFAULT_TAU,
    norm: Norm = 1,
    workers: int | None = None,
) -> MetricReport:
    """
    :param gt: Ground-truth cloud P, shape (N, 3).
    :param pred: Predicted cloud Q, shape (M, 3).
    :param tau: Distance threshold of precision and recall, scene units.
    :param norm: 1 for L1 distances, 2 for Euclidean.
    """
    gt, pred = np.asarray(gt, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if gt.size == 0 or pred.size == 0:
        raise ValidationError(_('Облака точек не должны быть пустыми'), code='empty_cloud')
    if norm not in (1, 2):
        raise ValidationError(_('Норма должна быть 1 или 2'), code='norm')
    if not tau > 0:
        raise ValidationError(_('Порог должен быть положительным'), code='tau')

    gt_to_pred = nearest_distances(gt, pred, norm, workers)
    pred_to_gt = nearest_distances(pred, gt, norm, workers)
    accuracy = float(gt_to_pred.mean())
    completeness = float(pred_to_gt.mean())
    precision = float((gt_to_pred < tau).mean())
    recall = float((pred_to_gt < tau).mean())
    f_score = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MetricReport(
        accuracy=accuracy,
        completeness=completeness,
        chamfer_l1=0.5 * (accuracy + completeness),
        precision=precision,
        recall=recall,
        f_score=f_score,
        tau=tau,
        norm=norm,
    )


def evaluate_meshes(
    gt: Mesh,
    pred: Mesh,
    count: int = DEFAULT_POINTS,
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    norm: Norm = 1,
    workers: int | None = None,
) -> MetricReport:
    """
    Sample ``count`` surface points from both meshes with the same seed and compare the clouds;
    identical meshes give identical clouds.
    """
    if gt.is_empty or pred.is_empty:
        raise ValidationError(_('Сетки для сравнения не должны быть пустыми'), code='empty_mesh')
    report = compute_metrics(
        sample_surface_points(gt, count, seed),
        sample_surface_points(pred, count, seed),
        tau=tau,
        norm=norm,
        workers=workers,
    )
    logger.info(f'Chamfer-L1 {report.chamfer_l1:.4f} | F-score {report.f_score:.4f}')
    return report
