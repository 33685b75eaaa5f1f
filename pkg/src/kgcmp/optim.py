"""Adam optimizer, seeded parameter initialization, and a finite-difference
gradient checker used as the independent oracle for every trainable path."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Parameter, ParamGroup, Tensor, backward


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight init."""
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=name)


def init_bias(fan_out: int, name: str) -> Parameter:
    return Parameter(np.zeros(fan_out), name=name)


class Adam:
    """Standard Adam with bias correction; frozen groups are skipped entirely."""

    def __init__(self, groups: Sequence[ParamGroup], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.groups = list(groups)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        self._t: dict[int, int] = {}

    def zero_grad(self) -> None:
        for group in self.groups:
            group.zero_grad()

    def step(self) -> None:
        for group in self.groups:
            if group.frozen:
                continue
            for p in group.params:
                if p.grad is None:
                    continue
                key = id(p)
                if key not in self._m:
                    self._m[key] = np.zeros_like(p.data)
                    self._v[key] = np.zeros_like(p.data)
                    self._t[key] = 0
                self._t[key] += 1
                t = self._t[key]
                m = self._m[key]
                v = self._v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * p.grad * p.grad
                mhat = m / (1.0 - self.beta1 ** t)
                vhat = v / (1.0 - self.beta2 ** t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def check_gradients(loss_fn: Callable[[], Tensor],
                    groups: Iterable[ParamGroup],
                    eps: float = 1e-5,
                    rtol: float = 1e-4,
                    max_coords: int | None = None,
                    seed: int = 0) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    `loss_fn` re-runs the full forward pass from current parameter values.
    Returns the max relative error per parameter name; raises AssertionError
    when any coordinate exceeds `rtol`.  64-bit only.
    """
    params: list[Parameter] = []
    for group in groups:
        params.extend(group.params)
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradient checking requires float64 parameters")
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for p in params}

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            up = loss_fn().item()
            flat[c] = orig - eps
            down = loss_fn().item()
            flat[c] = orig
            fd = (up - down) / (2.0 * eps)
            ad = analytic[id(p)].reshape(-1)[c]
            rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-6)
            worst = max(worst, rel)
        name = p.name or f"param_{id(p)}"
        report[name] = worst
        if worst > rtol:
            raise AssertionError(
                f"gradient mismatch on {name}: max relative error {worst:.3e} > {rtol}")
    return report
