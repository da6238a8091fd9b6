"""Gaussian embedding heads and the Wasserstein BPR objective.

Each entity embedding ``x`` is mapped to a diagonal Gaussian:

    x*    = relu(W1 x)
    mu    = x + W2b relu(W2a x*)          (``bias=False`` drops the leading x)
    sigma = softplus(W3b relu(W3a x*))

Similarity between two Gaussians is the negative squared 2-Wasserstein
distance, which for diagonal covariances is
``-(|mu_a - mu_b|^2 + |sigma_a - sigma_b|^2)``.

Batched functions work on row matrices: ``x`` has shape ``(B, d)`` and weights
are stored ``(d_out, d_in)``, so a layer is ``x @ W.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # tanh form is accurate in both tails and never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass
class GaussianEmbedding:
    mean: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mean.shape != self.sigma.shape:
            raise ValueError("mean and sigma must have the same shape")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be elementwise nonnegative")


def project(x, W1):
    return relu(np.asarray(W1) @ np.asarray(x, dtype=np.float64))


def mean_head(x, x_star, W2a, W2b, bias: bool = True):
    out = np.asarray(W2b) @ relu(np.asarray(W2a) @ x_star)
    return np.asarray(x, dtype=np.float64) + out if bias else out


def sigma_head(x_star, W3a, W3b):
    return softplus(np.asarray(W3b) @ relu(np.asarray(W3a) @ x_star))


def embed(x, heads: dict, bias: bool = True) -> GaussianEmbedding:
    """Single-vector convenience wrapper; ``heads`` maps W1, W2a, W2b, W3a, W3b to matrices."""
    x_star = project(x, heads["W1"])
    return GaussianEmbedding(
        mean_head(x, x_star, heads["W2a"], heads["W2b"], bias),
        sigma_head(x_star, heads["W3a"], heads["W3b"]),
    )


def neg_w2(a: GaussianEmbedding, b: GaussianEmbedding) -> float:
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    dm = a.mean - b.mean
    ds = a.sigma - b.sigma
    return -float(dm @ dm + ds @ ds)


def peo_loss(d_pos, d_neg) -> float:
    """Mean of ``-ln sigmoid(d_pos - d_neg)`` over the triples."""
    margin = np.asarray(d_pos, dtype=np.float64) - np.asarray(d_neg, dtype=np.float64)
    return float(np.mean(softplus(-margin)))


# --- batched forward / backward --------------------------------------------

@dataclass
class HeadCache:
    x: np.ndarray
    a1: np.ndarray
    s: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    a3: np.ndarray
    h3: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    bias: bool


def heads_forward(x: np.ndarray, W: dict, bias: bool = True) -> HeadCache:
    a1 = x @ W["W1"].T
    s = relu(a1)
    a2 = s @ W["W2a"].T
    h2 = relu(a2)
    mu = h2 @ W["W2b"].T
    if bias:
        mu = mu + x
    a3 = s @ W["W3a"].T
    h3 = relu(a3)
    z = h3 @ W["W3b"].T
    return HeadCache(x, a1, s, a2, h2, a3, h3, z, mu, softplus(z), bias)


def heads_backward(cache: HeadCache, W: dict, g_mu: np.ndarray, g_sigma: np.ndarray | None):
    """Return ``(g_x, {head: grad})`` for upstream gradients on mu and sigma."""
    grads = {}
    gs = np.zeros_like(cache.s)
    if g_sigma is not None:
        gz = g_sigma * sigmoid(cache.z)
        grads["W3b"] = gz.T @ cache.h3
        ga3 = (gz @ W["W3b"]) * (cache.a3 > 0)
        grads["W3a"] = ga3.T @ cache.s
        gs += ga3 @ W["W3a"]
    else:
        grads["W3b"] = np.zeros_like(W["W3b"])
        grads["W3a"] = np.zeros_like(W["W3a"])
    grads["W2b"] = g_mu.T @ cache.h2
    ga2 = (g_mu @ W["W2b"]) * (cache.a2 > 0)
    grads["W2a"] = ga2.T @ cache.s
    gs += ga2 @ W["W2a"]
    ga1 = gs * (cache.a1 > 0)
    grads["W1"] = ga1.T @ cache.x
    g_x = ga1 @ W["W1"]
    if cache.bias:
        g_x = g_x + g_mu
    return g_x, grads


def neg_w2_rows(mu_a, sig_a, mu_b, sig_b) -> np.ndarray:
    """Row-wise negative squared 2-Wasserstein distance."""
    dm = mu_a - mu_b
    ds = sig_a - sig_b
    return -(np.einsum("...d,...d->...", dm, dm) + np.einsum("...d,...d->...", ds, ds))


def peo_loss_rows(mu_u, sig_u, mu_p, sig_p, mu_n, sig_n):
    """PEO loss over aligned triple rows and its gradients w.r.t. every input.

    Returns ``(loss, (g_mu_u, g_sig_u, g_mu_p, g_sig_p, g_mu_n, g_sig_n))``.
    """
    b = len(mu_u)
    d_pos = neg_w2_rows(mu_u, sig_u, mu_p, sig_p)
    d_neg = neg_w2_rows(mu_u, sig_u, mu_n, sig_n)
    margin = d_pos - d_neg
    loss = float(np.mean(softplus(-margin)))
    g_margin = (-sigmoid(-margin) / b)[:, None]
    # d(d_pos)/d(mu_u) = -2(mu_u - mu_p); d(d_neg) enters with the opposite sign
    g_mu_p = g_margin * 2 * (mu_u - mu_p)
    g_sig_p = g_margin * 2 * (sig_u - sig_p)
    g_mu_n = -g_margin * 2 * (mu_u - mu_n)
    g_sig_n = -g_margin * 2 * (sig_u - sig_n)
    g_mu_u = -g_mu_p - g_mu_n
    g_sig_u = -g_sig_p - g_sig_n
    return loss, (g_mu_u, g_sig_u, g_mu_p, g_sig_p, g_mu_n, g_sig_n)
