"""Adaptive-moment (Adam) optimizer with explicit, inspectable state.

Deterministic given identical parameters/gradients: pure elementwise torch math,
no data-dependent branching.
"""

from __future__ import annotations

import torch


class MissingGradientError(RuntimeError):
    pass


class AdamOptimizer:
    """Adam over a dict of named parameters.

    State per parameter: first/second moment buffers shaped like the parameter.
    A global step counter drives bias correction and strictly increases.
    """

    def __init__(self, params: dict[str, torch.nn.Parameter], lr: float = 3e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items() if p.requires_grad}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items() if p.requires_grad}

    @classmethod
    def for_module(cls, module: torch.nn.Module, **kw) -> "AdamOptimizer":
        return cls(dict(module.named_parameters()), **kw)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise MissingGradientError(f"parameter '{name}' has no gradient")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad
            self.m[name].mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            self.v[name].mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.add_(m_hat / (v_hat.sqrt() + self.eps), alpha=-self.lr)
