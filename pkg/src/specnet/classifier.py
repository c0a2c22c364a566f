"""Reconstruction-error classification: losses, the two probabilities, the ensemble rule, calibration.

Inside this module labels follow the *internal* convention (1 = benign,
0 = phishing) and both probabilities are benign-oriented. Conversion to the
external convention (0 = benign, 1 = phishing) happens only in
:func:`ensemble_decide` and :func:`to_internal`/:func:`to_external`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import CalibrationDegenerate, ShapeError
from .nn import kaiming_uniform, leaky_relu, linear

EXP_CLAMP = 1e-12
PROB_CLAMP = 1e-7


def to_internal(label: int) -> int:
    return 1 - int(label)


def to_external(label: int) -> int:
    return 1 - int(label)


def loss_reconstruction(eps: torch.Tensor, y: torch.Tensor | float) -> torch.Tensor:
    """``y*eps - (1-y)*log(1 - exp(-eps))`` with ``1 - exp(-eps)`` floored at 1e-12."""
    gap = torch.clamp(-torch.expm1(-eps), min=EXP_CLAMP)
    return y * eps - (1 - y) * torch.log(gap)


def prob_threshold(eps: torch.Tensor, tau: float, beta: float) -> torch.Tensor:
    return 1.0 / (1.0 + torch.exp(beta * (eps - tau)))


def loss_classification(prob: torch.Tensor, y: torch.Tensor | float) -> torch.Tensor:
    p = torch.clamp(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p))


def multitask_loss(l1, l2, w1, w2):
    return l1 * torch.exp(-w1) + w1 + l2 * torch.exp(-w2) + w2


def ensemble_decide(prob1: float, prob2: float) -> tuple[int, int]:
    """(internal, external) decision; a mean of exactly 0.5 goes to internal 0."""
    internal = 0 if (prob1 + prob2) / 2 <= 0.5 else 1
    return internal, to_external(internal)


def single_decide(prob: float) -> tuple[int, int]:
    internal = 0 if prob <= 0.5 else 1
    return internal, to_external(internal)


class ErrorMLP(nn.Module):
    """Error summary -> benign probability. ``hidden=(16,)`` gives F -> 16 -> 1."""

    def __init__(self, in_dim: int = 32, hidden: Sequence[int] = (16,), slope: float = 0.01,
                 gen: torch.Generator | None = None, act=leaky_relu):
        super().__init__()
        gen = gen or torch.Generator().manual_seed(0)
        self.in_dim = in_dim
        self.slope = slope
        self.act = act
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        dims = [in_dim, *hidden, 1]
        for a, b in zip(dims[:-1], dims[1:]):
            self.weights.append(nn.Parameter(kaiming_uniform((b, a), a, gen, slope).float()))
            self.biases.append(nn.Parameter(torch.zeros(b)))

    def logit(self, delta: torch.Tensor) -> torch.Tensor:
        if delta.shape[-1] != self.in_dim:
            raise ShapeError(f"error MLP expects width {self.in_dim}, got {delta.shape[-1]}")
        h = delta
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = linear(h, W, b)
            if i < last:
                h = self.act(h, self.slope)
        return h.squeeze(-1)

    def forward(self, delta: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(delta))


def error_mlp(delta: torch.Tensor, mlp: ErrorMLP) -> torch.Tensor:
    return mlp(delta)


# ---------------------------------------------------------------------------
# calibration


def macro_f1_from_counts(tp_b: int, fp_b: int, fn_b: int, tp_p: int, fp_p: int, fn_p: int) -> float:
    def f1(tp, fp, fn):
        d = 2 * tp + fp + fn
        return 2 * tp / d if d else 0.0

    return (f1(tp_b, fp_b, fn_b) + f1(tp_p, fp_p, fn_p)) / 2


def threshold_candidates(values: np.ndarray) -> np.ndarray:
    u = np.unique(values)
    pad = 1e-6 * max(1.0, float(abs(u[-1])))
    lo = u[0] - 1e-6 * max(1.0, float(abs(u[0])))
    mids = (u[:-1] + u[1:]) / 2
    return np.concatenate([[lo], mids, [u[-1] + pad]])


def calibrate_threshold(eps: Sequence[float], labels: Sequence[int]) -> tuple[float, float]:
    """Pick tau maximizing macro-F1 of ``eps <= tau => benign`` (internal labels, 1 = benign).

    Returns ``(tau, f1)``; ties go to the smaller candidate.
    """
    e = np.asarray(eps, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if e.shape != y.shape or e.size == 0:
        raise ShapeError("calibration needs one label per error")
    n_benign = int(y.sum())
    n_phish = int(len(y) - n_benign)
    if n_benign == 0 or n_phish == 0:
        raise CalibrationDegenerate("validation set must contain both classes")
    cands = threshold_candidates(e)
    order = np.argsort(e, kind="stable")
    e_sorted, y_sorted = e[order], y[order]
    # number of samples with eps <= each candidate
    cut = np.searchsorted(e_sorted, cands, side="right")
    cum_b = np.concatenate([[0], np.cumsum(y_sorted)])
    best_tau, best_f1 = math.nan, -1.0
    for tau, k in zip(cands, cut):
        pred_b_true_b = int(cum_b[k])          # benign predicted benign
        pred_b_true_p = int(k - cum_b[k])      # phishing predicted benign
        f1 = macro_f1_from_counts(
            pred_b_true_b, pred_b_true_p, n_benign - pred_b_true_b,
            n_phish - pred_b_true_p, n_benign - pred_b_true_b, pred_b_true_p,
        )
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1
    return best_tau, best_f1
