"""Adaptive-moment gradient descent with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


class Adam:
    """Adam over a named parameter set; moments live per parameter name.

    Parameters are updated in place.  With zero gradients from a fresh
    state the parameters are unchanged.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, grad in grads.items():
            param = self.params[name]
            if grad.shape != param.data.shape:
                raise ShapeError(
                    f"gradient dims {list(grad.shape)} do not match parameter "
                    f"{name!r} dims {list(param.data.shape)}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param.data -= (self.lr * update).astype(param.data.dtype, copy=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of the moment tensors for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name][...] = arrays[f"adam.m.{name}"]
            self.v[name][...] = arrays[f"adam.v.{name}"]
        self.step_count = step_count
