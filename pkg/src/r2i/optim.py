"""Parameter containers, MSRA initialisation and the Adam optimiser."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .rng import as_generator
from .tensor import DEFAULT_DTYPE, Tensor

TRAINABLE_ROLES = ("weight", "bias", "bn_gamma", "bn_beta")
BUFFER_ROLES = ("bn_mean", "bn_var")


def msra_init(shape, fan_in, rng, dtype=DEFAULT_DTYPE):
    """Zero-mean Gaussian with variance ``2 / fan_in`` (He et al.).

    ``rng`` is an int seed or a numpy Generator; equal seeds give
    bit-identical buffers.
    """
    if fan_in is None or int(fan_in) <= 0:
        raise InvalidArgument(f"fan_in must be positive, got {fan_in}")
    gen = as_generator(rng)
    std = np.sqrt(2.0 / int(fan_in))
    return Tensor((gen.standard_normal(shape) * std).astype(dtype), requires_grad=True)


class ParamSet(dict):
    """Mapping from parameter path (``stage/layer/role``) to Tensor.

    Trainable entries have ``requires_grad`` set; batch-norm running
    statistics are stored alongside as plain buffers.
    """

    def add(self, name, tensor, trainable=True):
        if name in self:
            raise InvalidArgument(f"duplicate parameter name {name!r}")
        tensor.requires_grad = trainable
        tensor.name = name
        self[name] = tensor
        return tensor

    def trainable(self):
        return {k: v for k, v in self.items() if v.requires_grad}

    def buffers(self):
        return {k: v for k, v in self.items() if not v.requires_grad}

    def count(self):
        return int(sum(v.size for v in self.values() if v.requires_grad))

    def zero_grad(self):
        for v in self.values():
            if v.requires_grad:
                v.grad = np.zeros_like(v.data)

    def astype(self, dtype):
        """Cast every entry in place (used to run gradient checks at 64-bit)."""
        for v in self.values():
            v.data = v.data.astype(dtype)
            if v.grad is not None:
                v.grad = v.grad.astype(dtype)
        return self

    def copy_from(self, other):
        for k, v in other.items():
            self[k].data = v.data.copy()

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.items()}


@dataclass
class AdamState:
    """Moment buffers and hyper-parameters for :func:`adam_step`."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, p in params.items():
            if p.requires_grad:
                state.m[name] = np.zeros_like(p.data)
                state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params, state, lr=None):
    """One bias-corrected Adam update, in place.  Gradients are left as is."""
    lr = state.lr if lr is None else lr
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if name not in state.m or state.m[name].shape != p.shape:
            raise InvalidArgument(f"optimizer state does not match parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype)
    return params
