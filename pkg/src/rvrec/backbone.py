"""Backbone scorers and the binary cross-entropy recommendation loss.

A backbone only sees vectors: whatever produced ``u`` and ``v`` (raw table
rows, Gaussian means, coalition-enhanced means) is invisible to it. That is
the whole plug-in contract the enhancement modules rely on.
"""

from __future__ import annotations

import numpy as np

from .peo import relu, sigmoid, softplus

BACKBONES = ("mf", "twotower")


def _check_dims(u, v):
    if np.shape(u)[-1] != np.shape(v)[-1]:
        raise ValueError(f"dimension mismatch: {np.shape(u)} vs {np.shape(v)}")


def mf_score(u_vec, i_vec) -> float:
    _check_dims(u_vec, i_vec)
    return float(np.dot(u_vec, i_vec))


def twotower_score(u_vec, i_vec, P_u, P_i) -> float:
    _check_dims(u_vec, i_vec)
    return float(relu(np.asarray(P_u) @ u_vec) @ relu(np.asarray(P_i) @ i_vec))


class MF:
    """Inner-product backbone."""

    name = "mf"
    param_names: tuple[str, ...] = ()

    def scores(self, store, U, V):
        """Score aligned rows; ``U`` broadcasts against ``V`` over leading axes."""
        return np.einsum("...d,...d->...", U, V)

    def score_matrix(self, store, U, V):
        """``(B, d) x (B, C, d) -> (B, C)``."""
        return np.einsum("bd,bcd->bc", U, V)

    def backward(self, store, U, V, g):
        """Gradients of ``sum(g * scores(U, V))`` w.r.t. ``U``, ``V`` and backbone params."""
        gU = g[..., None] * V
        gV = g[..., None] * U
        return gU, gV, {}


class TwoTower:
    """Dot product of ReLU projections, ``relu(P_u u) . relu(P_i v)``."""

    name = "twotower"
    param_names = ("tower_user", "tower_item")

    def _towers(self, store, U, V):
        au = U @ store["tower_user"].T
        av = V @ store["tower_item"].T
        return au, av

    def scores(self, store, U, V):
        au, av = self._towers(store, U, V)
        return np.einsum("...d,...d->...", relu(au), relu(av))

    def score_matrix(self, store, U, V):
        au, av = self._towers(store, U, V)
        return np.einsum("bd,bcd->bc", relu(au), relu(av))

    def backward(self, store, U, V, g):
        Pu, Pi = store["tower_user"], store["tower_item"]
        au, av = self._towers(store, U, V)
        pu, pv = relu(au), relu(av)
        g = g[..., None]
        gau = g * pv * (au > 0)
        gav = g * pu * (av > 0)
        # U may broadcast against V (one user row, many candidates): reduce to U's shape
        gau_u = _reduce_to(gau, U.shape)
        gU = gau_u @ Pu
        gV = gav @ Pi
        grads = {
            "tower_user": gau_u.reshape(-1, gau_u.shape[-1]).T @ U.reshape(-1, U.shape[-1]),
            "tower_item": gav.reshape(-1, gav.shape[-1]).T @ V.reshape(-1, V.shape[-1]),
        }
        return gU, gV, grads


def _reduce_to(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def get_backbone(name: str):
    if name == "mf":
        return MF()
    if name == "twotower":
        return TwoTower()
    raise ValueError(f"unknown backbone {name!r}; expected one of {BACKBONES}")


def rec_loss(pos_scores, neg_scores):
    """Mean BCE over positives (label 1) and negatives (label 0).

    ``pos_scores`` has shape ``(B,)`` and ``neg_scores`` ``(B, n)``. Returns the
    loss and its gradients w.r.t. both score arrays.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    count = pos.size + neg.size
    loss = (softplus(-pos).sum() + softplus(neg).sum()) / count
    g_pos = -sigmoid(-pos) / count
    g_neg = sigmoid(neg) / count
    return float(loss), g_pos, g_neg
