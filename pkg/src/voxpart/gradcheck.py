"""Central finite-difference validation of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError
from .tensor import Node, Tape


@dataclass
class GradReport:
    max_rel_err: float
    worst_input: str
    worst_index: tuple[int, ...]
    checked: int

    def __str__(self) -> str:
        return (f"max rel err {self.max_rel_err:.3e} at {self.worst_input}"
                f"{list(self.worst_index)} over {self.checked} coordinates")


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(build: Callable[[Tape, dict[str, Node]], Node],
               inputs: dict[str, np.ndarray],
               h: float = 1e-4,
               sample: Optional[int] = None,
               seed: int = 0) -> GradReport:
    """Compare tape gradients of a scalar graph against central differences.

    ``build(tape, leaves)`` must construct the graph and return the scalar
    loss node.  All inputs must be float64.  When ``sample`` is given, only
    that many randomly chosen coordinates per input are perturbed, which
    keeps whole-network checks affordable; otherwise every coordinate is
    swept.  Returns the worst coordinate found.
    """
    for name, arr in inputs.items():
        if arr.dtype != np.float64:
            raise ArgumentError(f"grad_check requires float64 inputs ({name} is {arr.dtype})")

    def evaluate():
        tape = Tape()
        leaves = {name: tape.leaf(arr) for name, arr in inputs.items()}
        loss = build(tape, leaves)
        return loss, leaves, tape

    loss, leaves, tape = evaluate()
    tape.backward(loss)
    grads = {}
    for name, node in leaves.items():
        g = node.grad
        grads[name] = np.zeros_like(inputs[name]) if g is None else g.data

    rng = np.random.default_rng(seed)
    worst = GradReport(0.0, "", (), 0)
    count = 0
    for name, arr in inputs.items():
        flat = arr.reshape(-1)
        if sample is None or sample >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=sample, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = evaluate()[0].value.item()
            flat[c] = orig - h
            down = evaluate()[0].value.item()
            flat[c] = orig
            numeric = (up - down) / (2.0 * h)
            analytic = grads[name].reshape(-1)[c]
            err = _rel_err(analytic, numeric)
            count += 1
            if err > worst.max_rel_err:
                worst = GradReport(err, name, tuple(int(i) for i in np.unravel_index(c, arr.shape)), count)
    worst.checked = count
    return worst
