from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..tensor import Tensor, softmax


def uniform_init(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Module:
    """Parameter registry plus the ``logits`` / ``predict_proba`` contract."""

    kind = "module"

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def register(self, param: Tensor) -> Tensor:
        if param.name in self._params:
            raise KeyError(f"parameter {param.name!r} registered twice")
        self._params[param.name] = param
        return param

    def named_parameters(self) -> OrderedDict[str, Tensor]:
        return self._params

    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            extra = sorted(set(state) ^ set(self._params))
            raise KeyError(f"state dict does not match model parameters: {extra[:5]}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def logits(self, inputs, training: bool = False, rng=None) -> Tensor:
        raise NotImplementedError

    def predict_proba(self, inputs) -> np.ndarray:
        return softmax(self.logits(inputs, training=False)).data

    def config_dict(self) -> dict:
        raise NotImplementedError
