"""Parameter storage, initialisation, Adam, gradient checking and checkpoints.

Gradients are hand-derived per loss (see :mod:`rvrec.model`); this module only
owns the tensors, the optimiser state and the finite-difference verifier.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

HEAD_NAMES = ("W1", "W2a", "W2b", "W3a", "W3b")
SIDES = ("user", "item")


class NumericFault(FloatingPointError):
    """A non-finite value showed up in a named tensor."""

    def __init__(self, tensor: str, where: str = ""):
        msg = f"non-finite values in {tensor}"
        super().__init__(f"{msg} ({where})" if where else msg)
        self.tensor = tensor


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 512
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


@dataclass
class ParamStore:
    """Named float64 tensors with Adam moments.

    ``params[name]`` is the tensor, ``m``/``v`` hold the first and second
    moments and ``step`` counts applied updates.
    """

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(p) for name, p in self.params.items()}

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: p.copy() for k, p in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    @property
    def dim(self) -> int:
        return self.params["user_table"].shape[1]

    @property
    def num_users(self) -> int:
        return self.params["user_table"].shape[0]

    @property
    def num_items(self) -> int:
        return self.params["item_table"].shape[0]


def head_name(side: str, head: str) -> str:
    return f"{side}_{head}"


def init_store(num_users: int, num_items: int, d: int, seed: int, heads: bool = True, towers: bool = False) -> ParamStore:
    """Draw every tensor from ``uniform(-1/sqrt(d), 1/sqrt(d))``.

    Tensors are drawn in a fixed order from one generator, so the same seed
    always yields the same store regardless of which optional groups exist
    after the tables.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    shapes = {"user_table": (num_users, d), "item_table": (num_items, d)}
    if heads:
        for side in SIDES:
            for h in HEAD_NAMES:
                shapes[head_name(side, h)] = (d, d)
    if towers:
        shapes["tower_user"] = (d, d)
        shapes["tower_item"] = (d, d)
    params = {name: rng.uniform(-bound, bound, size=shape) for name, shape in shapes.items()}
    return ParamStore(params)


def check_finite(tensors: dict[str, np.ndarray], where: str = "") -> None:
    for name, t in tensors.items():
        if not np.all(np.isfinite(t)):
            raise NumericFault(name, where)


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], config: OptimConfig) -> ParamStore:
    """Bias-corrected Adam update, in place. Tensors absent from ``grads`` see a zero gradient."""
    store.step += 1
    t = store.step
    b1, b2 = config.beta1, config.beta2
    lr_t = config.learning_rate * np.sqrt(1 - b2**t) / (1 - b1**t)
    eps_t = config.epsilon * np.sqrt(1 - b2**t)
    for name, p in store.params.items():
        g = grads.get(name)
        m, v = store.m[name], store.v[name]
        if g is None:
            m *= b1
            v *= b2
        else:
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
        p -= lr_t * m / (np.sqrt(v) + eps_t)
    return store


# --- finite differences ---------------------------------------------------

LossFn = Callable[[ParamStore], "tuple[float, dict[str, np.ndarray]]"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: tuple[str, tuple] | None = None

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    loss_fn: LossFn,
    store: ParamStore,
    tolerance: float = 1e-3,
    n_coords: int = 40,
    h: float = 1e-4,
    seed: int = 0,
    names: Iterable[str] | None = None,
    atol: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on random coordinates.

    ``loss_fn(store)`` must return ``(loss, grads)`` and be a deterministic
    function of the parameters. The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, atol)``.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(store)
    names = list(names) if names is not None else [n for n in store.names() if n in grads]
    worst, worst_at = 0.0, None
    checked = 0
    for name in names:
        p = store.params[name]
        analytic = grads.get(name, np.zeros_like(p))
        # bias sampling towards touched coordinates so sparse tables get checked
        touched = np.flatnonzero(analytic.ravel())
        pool = touched if len(touched) else np.arange(p.size)
        picks = rng.choice(pool, size=min(n_coords, len(pool)), replace=False)
        for flat in picks:
            idx = np.unravel_index(flat, p.shape)
            orig = p[idx]
            p[idx] = orig + h
            up, _ = loss_fn(store)
            p[idx] = orig - h
            down, _ = loss_fn(store)
            p[idx] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), atol)
            checked += 1
            if err > worst:
                worst, worst_at = err, (name, tuple(int(i) for i in idx))
    return GradCheckReport(worst, checked, worst_at)


def directional_check(loss_fn: LossFn, store: ParamStore, h: float = 1e-4, seed: int = 0) -> float:
    """Relative error between ``<grad, e>`` and the central difference along a random unit direction."""
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(store)
    direction = {n: rng.standard_normal(p.shape) for n, p in store.params.items()}
    norm = np.sqrt(sum(float((e * e).sum()) for e in direction.values()))
    direction = {n: e / norm for n, e in direction.items()}
    analytic = sum(float((grads[n] * direction[n]).sum()) for n in grads)
    originals = {n: p.copy() for n, p in store.params.items()}
    for n, p in store.params.items():
        p += h * direction[n]
    up, _ = loss_fn(store)
    for n, p in store.params.items():
        p[...] = originals[n] - h * direction[n]
    down, _ = loss_fn(store)
    for n, p in store.params.items():
        p[...] = originals[n]
    numeric = (up - down) / (2 * h)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(store: ParamStore, path: str | os.PathLike) -> None:
    """Write an ASCII checkpoint.

    Layout: header ``d N M step``, then per tensor a line ``name rows cols``
    followed by ``rows`` lines of row-major values in ``%.17g`` (round-trips
    float64 exactly).
    """
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{store.dim} {store.num_users} {store.num_items} {store.step}\n")
        for name, p in store.params.items():
            rows, cols = p.shape
            fh.write(f"{name} {rows} {cols}\n")
            for row in p:
                fh.write(" ".join(format(x, ".17g") for x in row.tolist()))
                fh.write("\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | os.PathLike) -> ParamStore:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise CheckpointError(f"{path}: bad header {header!r}")
        d, n, m, step = map(int, header)
        params = {}
        while True:
            line = fh.readline()
            if not line:
                break
            if not line.strip():
                continue
            name, rows, cols = line.split()
            rows, cols = int(rows), int(cols)
            block = [fh.readline() for _ in range(rows)]
            params[name] = np.array([[float(x) for x in r.split()] for r in block], dtype=np.float64).reshape(rows, cols)
    store = ParamStore(params, step=step)
    if store.dim != d or store.num_users != n or store.num_items != m:
        raise CheckpointError(f"{path}: header {d} {n} {m} does not match tensor shapes")
    return store
