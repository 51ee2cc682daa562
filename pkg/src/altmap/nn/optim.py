"""Adam optimiser and training hyperparameters."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import Parameter

__all__ = ["TrainConfig", "adam_step"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def adam_step(param: Parameter, config: TrainConfig, grad=None) -> None:
    """Apply one bias-corrected Adam update to ``param`` in place.

    Uses ``param.grad`` unless ``grad`` is given.

    Raises:
        FloatingPointError: the gradient holds NaN or inf.
    """
    g = param.grad if grad is None else np.asarray(grad, dtype=np.float64)
    if g.shape != param.value.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {param.value.shape}")
    if not np.isfinite(g).all():
        raise FloatingPointError("non-finite gradient")
    param.t += 1
    param.m = config.beta1 * param.m + (1.0 - config.beta1) * g
    param.v = config.beta2 * param.v + (1.0 - config.beta2) * g * g
    m_hat = param.m / (1.0 - config.beta1**param.t)
    v_hat = param.v / (1.0 - config.beta2**param.t)
    param.value = param.value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
