"""Cross-attention prototype matching and the top-k intention tree."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidArgument
from .nn import Mlp


@dataclass
class IntentionTree:
    """Per-vessel branches ``z_o ⊕ z_i[id]`` with renormalised probabilities.

    branches: (m, k, 2d) tensor; branch_ids: (m, k) prototype indices in
    descending probability; branch_probs: (m, k), rows sum to 1.
    """

    branches: Tensor
    branch_ids: np.ndarray
    branch_probs: np.ndarray

    @property
    def k(self) -> int:
        return self.branch_ids.shape[1]


def _encode_rows(net: Mlp, coords, length: int) -> Tensor:
    x = ag.as_tensor(coords)
    if x.ndim != 3 or x.shape[1:] != (length, 2):
        raise InvalidArgument(f"{net.name}: expected (rows, {length}, 2) input, got {x.shape}")
    return net(x.reshape(x.shape[0], 2 * length))


def encode_observed(E_o: Mlp, observed, L_o: int) -> Tensor:
    """Row-wise encoding of (m, L_o, 2) normalised observations -> (m, d)."""
    return _encode_rows(E_o, observed, L_o)


def encode_prototypes(E_i: Mlp, prototypes, L: int) -> Tensor:
    """Row-wise encoding of (C, L, 2) prototypes -> (C, d)."""
    return _encode_rows(E_i, prototypes, L)


def classify(Q: Mlp, K: Mlp, z_o: Tensor, z_i: Tensor) -> Tensor:
    """Attention weights of each vessel over prototypes, softmax(Q Kᵀ / sqrt(d))."""
    if z_o.shape[-1] != z_i.shape[-1]:
        raise InvalidArgument(f"classify: widths differ {z_o.shape} vs {z_i.shape}")
    q, k = Q(z_o), K(z_i)
    logits = ag.matmul(q, ag.transpose(k, (1, 0))) * (1.0 / math.sqrt(q.shape[-1]))
    return ag.softmax(logits)


def topk_ids(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries per row; ties go to the lower index."""
    probs = np.asarray(probs)
    if not 1 <= k <= probs.shape[-1]:
        raise InvalidArgument(f"k={k} outside [1, {probs.shape[-1]}]")
    return np.argsort(-probs, axis=-1, kind="stable")[..., :k]


def _branches(z_o: Tensor, z_i: Tensor, ids: np.ndarray) -> Tensor:
    m, k = ids.shape
    d = z_o.shape[-1]
    picked = ag.gather(z_i, ids.reshape(-1)).reshape(m, k, d)
    obs = ag.broadcast_to(z_o.reshape(m, 1, d), (m, k, d))
    return ag.concat([obs, picked])


def build_tree(z_o: Tensor, z_i: Tensor, y_tilde, k: int) -> IntentionTree:
    probs = y_tilde.data if isinstance(y_tilde, Tensor) else np.asarray(y_tilde)
    ids = topk_ids(probs, k)
    sel = np.take_along_axis(probs, ids, axis=1).astype(np.float64)
    sel = sel / sel.sum(axis=1, keepdims=True)
    return IntentionTree(_branches(z_o, z_i, ids), ids, sel)


def teacher_forced_tree(z_o: Tensor, z_i: Tensor, labels) -> IntentionTree:
    """Single-branch tree on the ground-truth prototype label of each vessel."""
    ids = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
    if np.any(ids < 0) or np.any(ids >= z_i.shape[0]):
        raise InvalidArgument("labels out of prototype range")
    return IntentionTree(_branches(z_o, z_i, ids), ids, np.ones(ids.shape))
