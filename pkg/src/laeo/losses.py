"""Training objectives: pair cross-entropy, per-angle smooth-L1, yaw sign
penalty, and their weighted head-pose combination.

All functions are torch expressions, so they differentiate under autograd
and batch over leading dimensions. Python scalars are promoted to float64
tensors; call float() on the result for a plain number.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

PROB_EPS = 1e-7


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


@dataclass(frozen=True)
class PoseLossWeights:
    """Weights of the combined head-pose loss. Nonnegative, and deliberately
    not required to sum to 1; yaw dominates because it carries most of the
    gaze direction."""

    yaw: float = 0.6
    pitch: float = 0.3
    roll: float = 0.1
    sign: float = 0.1

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll", "sign"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"pose loss weight {name} must be nonnegative")


def laeo_loss(label, p_laeo) -> torch.Tensor:
    """Binary cross entropy on the pair class: -log of the probability the
    model assigns to the true class.

    Args:
        label: 1 for a looking-at-each-other pair, 0 otherwise.
        p_laeo: Predicted probability of the positive class, clamped to
            [PROB_EPS, 1 - PROB_EPS] before the log.
    """
    label = _as_tensor(label)
    p = _as_tensor(p_laeo).clamp(PROB_EPS, 1.0 - PROB_EPS)
    p_true = label * p + (1.0 - label) * (1.0 - p)
    return -torch.log(p_true)


def smooth_l1(x) -> torch.Tensor:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside (quadratic near zero,
    linear in the tails)."""
    x = _as_tensor(x)
    ax = torch.abs(x)
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def sign_loss(yaw_pred, yaw_target) -> torch.Tensor:
    """1 where predicted and target yaw have strictly opposite signs, else 0.

    Piecewise constant, so it contributes no gradient; the smooth-L1 yaw
    term supplies the learning signal. A yaw of exactly 0 never counts as a
    sign error.
    """
    yaw_pred = _as_tensor(yaw_pred)
    yaw_target = _as_tensor(yaw_target)
    return torch.clamp(-torch.sign(yaw_pred) * torch.sign(yaw_target), min=0.0)


def head_pose_loss(pred, target, weights: PoseLossWeights = PoseLossWeights()) -> torch.Tensor:
    """Weighted sum of per-angle smooth-L1 errors plus the yaw sign penalty.

    Args:
        pred: (..., 3) predicted (yaw, pitch, roll) in normalized units
            (radians / pi). PoseAngles.normalized() produces this layout.
        target: (..., 3) ground-truth angles, same units.
        weights: Per-term weights.

    Returns:
        (...) tensor of per-sample losses.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    err = pred - target
    loss = (
        weights.yaw * smooth_l1(err[..., 0])
        + weights.pitch * smooth_l1(err[..., 1])
        + weights.roll * smooth_l1(err[..., 2])
        + weights.sign * sign_loss(pred[..., 0], target[..., 0])
    )
    return loss
