"""Differentiable primitives, optimizer, learning-rate schedule and gradient checking.

Primitives are thin, shape-checked functions over torch tensors; torch's
reverse-mode autograd records the per-sample dynamic graph. ``grad_check``
is deliberately independent of autograd: it perturbs parameters and takes
central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .errors import NonFiniteGradient, ShapeError

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5


def linear(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ W.T + b`` for a vector or a row-matrix ``x``; ``W`` is (out, in)."""
    if W.dim() != 2 or x.dim() not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: x {tuple(x.shape)} incompatible with W {tuple(W.shape)}")
    if b is not None and tuple(b.shape) != (W.shape[0],):
        raise ShapeError(f"linear: bias {tuple(b.shape)} does not match W {tuple(W.shape)}")
    out = x @ W.T
    return out + b if b is not None else out


def leaky_relu(x: torch.Tensor, slope: float = LEAKY_SLOPE) -> torch.Tensor:
    # gradient at exactly 0 is the negative slope
    return torch.where(x > 0, x, slope * x)


def relu(x: torch.Tensor, slope: float = 0.0) -> torch.Tensor:
    return torch.where(x > 0, x, torch.zeros_like(x))


def activation(name: str) -> Callable[..., torch.Tensor]:
    return {"leaky_relu": leaky_relu, "relu": relu}[name]


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = LN_EPS) -> torch.Tensor:
    """Row-wise standardization with affine parameters."""
    if x.shape[-1] < 1 or gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: x {tuple(x.shape)}, gamma {tuple(gamma.shape)}, beta {tuple(beta.shape)}")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


def softmax(scores: torch.Tensor) -> torch.Tensor:
    if scores.dim() != 1 or scores.numel() == 0:
        raise ShapeError("softmax expects a non-empty vector")
    z = torch.exp(scores - scores.max())
    return z / z.sum()


def segment_softmax(scores: torch.Tensor, segment: torch.Tensor, n_segments: int) -> torch.Tensor:
    """Softmax within groups of ``scores`` sharing a ``segment`` id (max-stabilized per group)."""
    if scores.dim() != 1 or segment.shape != scores.shape:
        raise ShapeError("segment_softmax expects matching 1-d scores and segment ids")
    smax = torch.full((n_segments,), -torch.inf, dtype=scores.dtype)
    smax = smax.scatter_reduce(0, segment, scores.detach(), reduce="amax", include_self=True)
    z = torch.exp(scores - smax[segment])
    total = torch.zeros(n_segments, dtype=scores.dtype).index_add(0, segment, z)
    return z / total[segment]


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


# ---------------------------------------------------------------------------
# initialization


def kaiming_uniform(shape: Sequence[int], fan_in: int, gen: torch.Generator, slope: float = LEAKY_SLOPE) -> torch.Tensor:
    bound = math.sqrt(6.0 / ((1.0 + slope**2) * fan_in))
    return (torch.rand(*shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0) * bound


# ---------------------------------------------------------------------------
# schedule and optimizer


@dataclass
class CosineWarmRestarts:
    """Cosine decay from ``base_lr`` to ``floor`` per cycle; cycles grow by ``mult`` after each restart."""

    base_lr: float = 1e-3
    floor: float = 1e-5
    t0: float = 10
    mult: float = 2

    def cycle(self, epoch: float) -> tuple[int, float, float]:
        """(cycle index, position inside cycle, cycle length)."""
        length, start, index = float(self.t0), 0.0, 0
        while epoch >= start + length:
            start += length
            length *= self.mult
            index += 1
        return index, epoch - start, length

    def __call__(self, epoch: float) -> float:
        _, pos, length = self.cycle(epoch)
        return self.floor + (self.base_lr - self.floor) * (1.0 + math.cos(math.pi * pos / length)) / 2.0


@dataclass
class OptimizerState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0


class Adam:
    """Adam with bias correction; the learning rate is supplied per step by the caller's schedule."""

    def __init__(self, named_params: Iterable[tuple[str, torch.nn.Parameter]],
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.betas = betas
        self.eps = eps
        self.state = OptimizerState()
        for name, p in self.params.items():
            self.state.m[name] = torch.zeros_like(p)
            self.state.v[name] = torch.zeros_like(p)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        self.state.step += 1
        t = self.state.step
        b1, b2 = self.betas
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.state.m[name].mul_(b1).add_(g, alpha=1.0 - b1)
            v = self.state.v[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-lr / c1)


class SGD:
    def __init__(self, named_params: Iterable[tuple[str, torch.nn.Parameter]]):
        self.params = dict(named_params)
        self.state = OptimizerState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        self.state.step += 1
        for p in self.params.values():
            if p.grad is not None:
                p.add_(p.grad, alpha=-lr)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    analytic: dict[str, torch.Tensor] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn()`` with central differences.

    The relative error of a parameter is ``max|a - n| / max(max|a|, max|n|, 1e-8)``
    over the probed entries. ``max_entries`` probes a seeded random subset of
    each tensor's coordinates. ``analytic`` overrides autograd's gradients,
    which lets negative controls feed deliberately wrong values.
    """
    tensors = list(params.values())
    if analytic is None:
        out = fn()
        grads = torch.autograd.grad(out, tensors, allow_unused=True)
        analytic = {
            name: (g if g is not None else torch.zeros_like(t)).detach()
            for (name, t), g in zip(params.items(), grads)
        }
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, t in params.items():
            flat = t.view(-1)
            n = flat.numel()
            idx = np.arange(n) if max_entries is None or n <= max_entries else np.sort(rng.choice(n, max_entries, replace=False))
            a = analytic[name].reshape(-1)[idx].to(torch.float64)
            num = torch.empty(len(idx), dtype=torch.float64)
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + step
                hi = fn().item()
                flat[i] = orig - step
                lo = fn().item()
                flat[i] = orig
                num[k] = (hi - lo) / (2 * step)
            scale = max(a.abs().max().item() if len(idx) else 0.0, num.abs().max().item() if len(idx) else 0.0, 1e-8)
            errors[name] = ((a - num).abs().max().item() if len(idx) else 0.0) / scale
    return GradCheckReport(errors, tolerance)
