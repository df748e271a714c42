"""Named parameter collections and the Adam update."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from dpl.errors import DimensionError
from dpl.numerics.tensor import Tensor

__all__ = ["ParamSet", "backward", "adam_step"]


class ParamSet:
    """A named map of leaf tensors plus per-parameter Adam moment buffers.

    Moment buffers start at zero and ``step_count`` at 0; both belong to the
    optimizer state, not the model weights, and are not checkpointed.
    """

    def __init__(self):
        self._tensors: Dict[str, Tensor] = {}
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64))
        self._tensors[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        for name, t in self._tensors.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise DimensionError(
                    f"checkpointed {name!r} has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data = arr.copy()

    def n_entries(self) -> int:
        return sum(t.data.size for t in self._tensors.values())


def backward(loss: Tensor, params: ParamSet) -> Dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` for every parameter in ``params``.

    Parameters that do not appear in the loss graph get zero gradients.
    Parameter data is not modified.
    """
    loss.backward()
    grads = {}
    for name, t in params.items():
        grads[name] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
    return grads


def adam_step(
    params: ParamSet,
    grads: Dict[str, np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One in-place Adam update with bias correction; increments the step counter."""
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != tensor.data.shape:
            raise DimensionError(
                f"gradient for {name!r} has shape {g.shape}, expected {tensor.data.shape}"
            )
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
