from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as T
from ..tensor import ShapeError, Tensor
from .base import Module, uniform_init

IMAGING_HIDDEN = (256, 64)
CLINICAL_HIDDEN = (64, 32)
DEFAULT_EMBEDDING_WIDTH = 2048


@dataclass(frozen=True)
class MlpConfig:
    input_width: int
    hidden: tuple[int, ...] = field(default=IMAGING_HIDDEN)
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_width < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"widths must be positive: {self}")
        if self.n_classes != 2:
            raise ValueError("only binary heads are supported")


class MlpModel(Module):
    """ReLU hidden layers followed by a fully connected layer; softmax at inference."""

    kind = "mlp"

    def __init__(self, config: MlpConfig, rng: np.random.Generator | None = None):
        super().__init__()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        widths = (config.input_width, *config.hidden, config.n_classes)
        self.weights, self.biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.weights.append(self.register(uniform_init(rng, (fan_in, fan_out), fan_in, f"fc{i}.w")))
            self.biases.append(self.register(uniform_init(rng, (fan_out,), fan_in, f"fc{i}.b")))

    def config_dict(self) -> dict:
        return asdict(self.config)

    def logits(self, inputs, training: bool = False, rng=None) -> Tensor:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.config.input_width:
            raise ShapeError(f"expected input width {self.config.input_width}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("MLP input contains non-finite values; impute before calling")
        h: Tensor = Tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = T.relu(h)
        return h


def mlp_forward(inputs, model: MlpModel) -> np.ndarray:
    return model.predict_proba(inputs)
