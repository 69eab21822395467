"""Adam optimizer over named parameter dicts."""

from dataclasses import dataclass, field

import numpy as np

from .errors import OptimizerError, ShapeError

DEFAULT_LEARNING_RATE = 1e-4


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def buffers_for(self, name, param_data):
        if name not in self.first_moment:
            self.first_moment[name] = np.zeros_like(param_data)
            self.second_moment[name] = np.zeros_like(param_data)
        m, v = self.first_moment[name], self.second_moment[name]
        if m.shape != param_data.shape:
            raise ShapeError(
                f"moment buffer for {name!r} has shape {m.shape}, "
                f"parameter has {param_data.shape}")
        return m, v


def adam_step(params, state, lr=DEFAULT_LEARNING_RATE, grads=None):
    """One bias-corrected Adam update, in place.

    params: dict name -> Tensor. Gradients default to each Tensor's .grad
    buffer; a missing or all-zero gradient leaves that parameter unchanged.
    Any non-finite gradient rejects the whole step before touching state.
    """
    if grads is None:
        grads = {k: (t.grad if t.grad is not None
                     else np.zeros_like(t.data))
                 for k, t in params.items()}
    for name, g in grads.items():
        if params[name].data.shape != g.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {g.shape}, "
                f"parameter has {params[name].data.shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(
                f"non-finite gradient for parameter {name!r}; step rejected")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, tensor in params.items():
        g = grads[name]
        m, v = state.buffers_for(name, tensor.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bias1
        vhat = v / bias2
        tensor.data -= (lr * mhat / (np.sqrt(vhat) + state.epsilon)).astype(
            tensor.data.dtype, copy=False)
