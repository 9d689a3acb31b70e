"""Finite-difference gradient checking for model fragments.

Fragments are recast to float64 before the check: central differences in
float32 are too noisy for a 1e-4 relative-error gate. The fragment must be
pure during the check (modules are put in eval mode so dropout is off).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict[str, float] = field(default_factory=dict)
    input_rel_err: float | None = None

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err <= tolerance


def _rel_err(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).abs().max().item()
    scale = max(numeric.abs().max().item(), analytic.abs().max().item(), 1e-8)
    return diff / scale


def _numeric_grad(loss_fn, tensor: torch.Tensor, eps: float) -> torch.Tensor:
    grad = torch.zeros_like(tensor)
    flat = tensor.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def finite_difference_check(fragment: torch.nn.Module, x: torch.Tensor,
                            eps: float = 1e-5, check_input: bool = False) -> GradCheckReport:
    """Compare analytic (reverse-mode) gradients of sum(fragment(x)) against
    central finite differences, elementwise over every trainable parameter.

    Returns the max relative error across parameters (and the input, when
    requested). Report-only: never raises on a bad gradient.
    """
    frag = copy.deepcopy(fragment).double().eval()
    x = x.detach().double().clone()

    def loss_fn() -> float:
        with torch.no_grad():
            return frag(x).sum().item()

    # analytic pass
    x_a = x.clone().requires_grad_(check_input)
    for p in frag.parameters():
        p.grad = None
    out = frag(x_a).sum()
    out.backward()

    per_param: dict[str, float] = {}
    for name, p in frag.named_parameters():
        if not p.requires_grad:
            continue
        with torch.no_grad():
            numeric = _numeric_grad(loss_fn, p.data, eps)
        analytic = p.grad if p.grad is not None else torch.zeros_like(p)
        per_param[name] = _rel_err(analytic, numeric)

    input_err = None
    if check_input:
        with torch.no_grad():
            numeric = _numeric_grad(loss_fn, x, eps)
        input_err = _rel_err(x_a.grad, numeric)

    errs = list(per_param.values()) + ([input_err] if input_err is not None else [])
    return GradCheckReport(max_rel_err=max(errs) if errs else 0.0,
                           per_param=per_param, input_rel_err=input_err)
