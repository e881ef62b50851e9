"""Central finite-difference gradient checking used by loss and acceptance tests."""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import torch


def warm_up(
    modules: Iterable[torch.nn.Module],
    loss_fn: Callable[[], torch.Tensor],
    steps: int = 5,
    lr: float = 1e-3,
) -> None:
    """Take a few optimizer steps so parameters sit at a generic point.

    At initialization, SE-gate pre-activations are tiny (zero biases times
    0.02-scale weights), leaving ReLU inputs within the finite-difference step
    of their kink; a short warm-up moves the network off those measure-zero
    configurations so central differences measure the actual local slope.
    """
    params = [p for m in modules for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=lr)
    for _ in range(steps):
        opt.zero_grad()
        loss_fn().backward()
        opt.step()


def central_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.nn.Parameter],
    n_samples: int,
    h: float = 1e-5,
    rel_tol: float = 1e-3,
    abs_floor: float = 1e-8,
    seed: int = 0,
) -> tuple[int, int, float]:
    """Compare autograd gradients of ``loss_fn`` against central differences.

    Samples ``n_samples`` scalar parameters (or every parameter if the total is
    smaller) and counts how many match within ``rel_tol`` relative error, with
    ``abs_floor`` as an absolute escape for near-zero gradients. Returns
    (n_checked, n_passed, worst_rel_err).
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    flat = [(pi, i) for pi, p in enumerate(params) for i in range(p.numel())]
    if n_samples >= len(flat):
        selection = range(len(flat))
    else:
        rng = torch.Generator().manual_seed(seed)
        selection = torch.randperm(len(flat), generator=rng)[:n_samples].tolist()

    checked = passed = 0
    worst = 0.0
    for s in selection:
        pi, i = flat[s]
        p = params[pi]
        original = p.data.view(-1)[i].item()
        p.data.view(-1)[i] = original + h
        loss_plus = loss_fn().item()
        p.data.view(-1)[i] = original - h
        loss_minus = loss_fn().item()
        p.data.view(-1)[i] = original
        fd = (loss_plus - loss_minus) / (2.0 * h)
        analytic = 0.0 if grads[pi] is None else grads[pi].view(-1)[i].item()
        err = abs(analytic - fd)
        rel = err / max(abs(analytic), abs(fd), abs_floor)
        checked += 1
        if rel < rel_tol or err < abs_floor:
            passed += 1
        else:
            worst = max(worst, rel)
    return checked, passed, worst
