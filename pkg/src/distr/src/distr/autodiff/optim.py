from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple, Union

import numpy as np

from distr.autodiff.nets import NetParams
from distr.exceptions import NonFiniteError, ShapeError


@dataclass(frozen=True)
class AdamState:
    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(
    params: Union[NetParams, Sequence[np.ndarray]],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    arrays = params.arrays() if isinstance(params, NetParams) else list(params)
    zeros = tuple(np.zeros_like(np.asarray(a, dtype=np.float64)) for a in arrays)
    return AdamState(m=zeros, v=tuple(z.copy() for z in zeros), step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update over a flat list of arrays; inputs are not mutated."""
    if not (len(arrays) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("parameters, gradients and Adam moments must have the same number of arrays")
    for index, (p, g, m) in enumerate(zip(arrays, grads, state.m)):
        if np.shape(p) != np.shape(g) or np.shape(p) != m.shape:
            raise ShapeError(f"array {index}: parameter {np.shape(p)}, gradient {np.shape(g)}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in array {index}; update aborted")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_arrays, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * np.square(g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_arrays.append(np.asarray(p, dtype=np.float64) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_arrays, replace(state, m=tuple(new_m), v=tuple(new_v), step=step)


def adam_step(params: NetParams, grads: NetParams, state: AdamState) -> Tuple[NetParams, AdamState]:
    new_arrays, new_state = adam_update(params.arrays(), grads.arrays(), state)
    return params.with_arrays(new_arrays), new_state
