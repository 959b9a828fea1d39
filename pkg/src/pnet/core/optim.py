"""Adam with bias correction, operating in place on a dict of named arrays."""
from dataclasses import dataclass, field

import numpy as np

from pnet.errors import ShapeError


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float = 1e-4):
    """One Adam update. ``params`` and the moment arrays are modified in place.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}", dim=name)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        g64 = g.astype(np.float64)
        m64 = b1 * m.astype(np.float64) + (1 - b1) * g64
        v64 = b2 * v.astype(np.float64) + (1 - b2) * g64 * g64
        m[...] = m64
        v[...] = v64
        update = lr * (m64 / c1) / (np.sqrt(v64 / c2) + state.eps)
        p[...] = p.astype(np.float64) - update
    return params, state
