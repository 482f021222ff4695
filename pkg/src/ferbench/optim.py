"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_network(cls, net, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for name in net.param_names():
            p = net.parameters[name]
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(net, state: AdamState):
    """One bias-corrected Adam update over all network parameters, in place.

    Rejects the step if any parameter is missing its gradient.
    """
    missing = [n for n in net.param_names() if net.parameters[n].grad is None]
    if missing:
        raise RuntimeError(f"adam_step: missing gradients for {missing}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in net.param_names():
        p = net.parameters[name]
        g = p.grad
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.epsilon)
    return net, state
