"""Composite kinematic loss over normalized seven-wide predictions."""
import numpy as np

from rosalab.resources.predictor.network import LossWeights

SMOOTH_L1_BETA = 1.0
COMPONENTS = ('pos', 'vel', 'acc', 'ori', 'unit')


def smooth_l1(residual: np.ndarray, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    """Element-wise Smooth L1 (Huber with threshold ``beta``)."""
    absolute = np.abs(residual)
    return np.where(
        absolute < beta, 0.5 * residual ** 2 / beta, absolute - 0.5 * beta
    )


def _smooth_l1_grad(residual: np.ndarray, beta: float = SMOOTH_L1_BETA):
    return np.where(np.abs(residual) < beta, residual / beta, np.sign(residual))


def composite_loss(
    pred: np.ndarray,
    truth: np.ndarray,
    weights: LossWeights = LossWeights(),
    valid: np.ndarray | None = None,
    with_grad: bool = False,
):
    """
    Weighted sum of the position, speed, acceleration, orientation and
    unit-norm terms, averaged over valid agents.

    Args:
        - ``pred, truth (np.ndarray):`` ``(..., 7)`` normalized vectors.
        - ``weights (LossWeights, optional):`` Term weights.
        - ``valid (np.ndarray, optional):`` Boolean agent mask over the
        leading axes. Default: every agent.
        - ``with_grad (bool, optional):`` Also return ``dL/d pred``.

    Returns:
        - ``(float, dict)``: total loss and the unweighted components; with
        ``with_grad`` a third item holding the gradient.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if valid is None:
        valid = np.ones(pred.shape[:-1], dtype=bool)
    weight = np.asarray(valid, dtype=float)[..., None]
    count = max(float(weight.sum()), 1.0)

    diff = pred - truth
    pos_terms = 0.5 * (diff[..., 0] ** 2 + diff[..., 1] ** 2)
    vel_terms = diff[..., 2] ** 2
    acc_terms = 0.5 * smooth_l1(diff[..., 3:5]).sum(axis=-1)
    ori_terms = 0.5 * (diff[..., 5] ** 2 + diff[..., 6] ** 2)
    norm = pred[..., 5] ** 2 + pred[..., 6] ** 2 - 1.0
    unit_terms = norm ** 2

    mask = weight[..., 0]
    components = {
        name: float((terms * mask).sum() / count)
        for name, terms in zip(
            COMPONENTS, (pos_terms, vel_terms, acc_terms, ori_terms, unit_terms)
        )
    }
    total = (
        weights.pos * components['pos']
        + weights.vel * components['vel']
        + weights.acc * components['acc']
        + weights.ori * components['ori']
        + weights.unit * components['unit']
    )
    if not with_grad:
        return total, components

    grad = np.zeros_like(pred)
    grad[..., 0:2] = weights.pos * diff[..., 0:2]
    grad[..., 2] = weights.vel * 2.0 * diff[..., 2]
    grad[..., 3:5] = weights.acc * 0.5 * _smooth_l1_grad(diff[..., 3:5])
    grad[..., 5:7] = weights.ori * diff[..., 5:7]
    grad[..., 5] += weights.unit * 4.0 * norm * pred[..., 5]
    grad[..., 6] += weights.unit * 4.0 * norm * pred[..., 6]
    grad *= weight / count
    return total, components, grad
