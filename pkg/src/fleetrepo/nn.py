"""Reverse-mode autodiff over small numpy arrays, plus the layers and optimizer the agents use.

Everything is float64 and at most 2-D. Broadcasting is limited to what dense
layers need (a bias row added to a batch).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _node(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def total(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(out, (a,), back)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(total(a), 1.0 / a.data.size)


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _full_mask(shape):
    return np.ones(shape, dtype=bool)


def _masked_log_softmax_np(x, mask):
    if not np.all(mask.any(axis=-1)):
        raise ValueError("softmax needs at least one valid slot per row")
    z = np.where(mask, x, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return np.where(mask, z - lse, 0.0)


def log_softmax(logits, mask=None) -> Tensor:
    """Masked log-softmax along the last axis; masked entries come out as 0."""
    logits = as_tensor(logits)
    mask = _full_mask(logits.shape) if mask is None else np.broadcast_to(np.asarray(mask, bool), logits.shape)
    out = _masked_log_softmax_np(logits.data, mask)
    p = np.where(mask, np.exp(out), 0.0)

    def back(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (logits,), back)


def softmax(logits, mask=None) -> Tensor:
    """Masked softmax along the last axis. Invalid slots get exactly 0."""
    logits = as_tensor(logits)
    mask = _full_mask(logits.shape) if mask is None else np.broadcast_to(np.asarray(mask, bool), logits.shape)
    out = np.where(mask, np.exp(_masked_log_softmax_np(logits.data, mask)), 0.0)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (logits,), back)


def categorical_entropy(probs) -> Tensor:
    """-sum p ln p over entries with p > 0, along the last axis."""
    probs = as_tensor(probs)
    p = probs.data
    pos = p > 0
    logp = np.log(np.where(pos, p, 1.0))
    out = -(p * logp).sum(axis=-1)

    def back(g):
        return (np.where(pos, -(logp + 1.0), 0.0) * np.expand_dims(g, -1),)

    return _node(out, (probs,), back)


def plackett_luce_log_prob(scores, order) -> Tensor:
    """Log-probability of drawing ``order`` (all items) without replacement by softmax of ``scores``."""
    scores = as_tensor(scores)
    s = scores.data
    order = np.asarray(order, dtype=np.int64)
    n = len(order)
    if sorted(order.tolist()) != list(range(s.shape[0])):
        raise ValueError("order must be a permutation of the scored items")
    z = s[order]
    # suffix log-sum-exp: lse[j] = log sum_{k>=j} exp(z_k)
    lse = np.empty(n)
    run = -np.inf
    for j in range(n - 1, -1, -1):
        run = np.logaddexp(run, z[j])
        lse[j] = run
    out = float((z - lse).sum())

    def back(g):
        # d/dz_k = 1 - sum_{j<=k} softmax_j(k)
        w = np.exp(z[None, :] - lse[:, None])
        w = np.triu(w)
        dz = 1.0 - w.sum(axis=0)
        ds = np.zeros_like(s)
        ds[order] = dz * g
        return (ds,)

    return _node(out, (scores,), back)


def plackett_luce_sample(scores, rng) -> tuple[list[int], float]:
    """Draw a full ranking item by item from softmax(remaining scores)."""
    s = np.asarray(scores, dtype=np.float64)
    remaining = list(range(len(s)))
    order = []
    log_prob = 0.0
    while remaining:
        z = s[remaining]
        z = z - z.max()
        w = np.exp(z)
        w /= w.sum()
        if len(remaining) == 1:
            k = 0
        else:
            k = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
            k = min(k, len(remaining) - 1)
        log_prob += float(np.log(w[k]))
        order.append(remaining.pop(k))
    return order, log_prob


def a2c_losses(log_prob, entropy, value, target, beta=0.01):
    """Batch-mean actor and critic losses; the advantage is held constant for the actor."""
    log_prob, entropy, value = as_tensor(log_prob), as_tensor(entropy), as_tensor(value)
    target = np.asarray(target, dtype=np.float64)
    advantage = target - value.data
    actor = mean(mul(log_prob, -advantage)) - mul(mean(entropy), beta)
    diff = sub(value, target)
    critic = mean(mul(diff, diff))
    return actor, critic


class Mlp:
    """Dense net: ``hidden`` ReLU layers followed by a linear head."""

    def __init__(self, n_in, n_out, hidden=(64, 64), rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [n_in, *hidden, n_out]
        self.sizes = sizes
        self.params: dict[str, Tensor] = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            bound = np.sqrt(1.0 / fan_in)
            self.params[f"W{i}"] = parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params[f"b{i}"] = parameter(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def __call__(self, x):
        return forward_mlp(self.params, x)

    def predict(self, x):
        """Gradient-free forward pass on plain arrays."""
        h = np.asarray(x, dtype=np.float64)
        last = self.n_layers
        for i in range(1, last + 1):
            h = h @ self.params[f"W{i}"].data + self.params[f"b{i}"].data
            if i < last:
                h = np.maximum(h, 0.0)
        return h

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def forward_mlp(params: dict, x) -> Tensor:
    x = as_tensor(x)
    n = len(params) // 2
    if x.shape[-1] != params["W1"].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer {params['W1'].shape[0]}")
    h = x
    for i in range(1, n + 1):
        h = add(matmul(h, params[f"W{i}"]), params[f"b{i}"])
        if i < n:
            h = relu(h)
    return h


@dataclass
class Adam:
    params: dict
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p.data))
            self.v.setdefault(k, np.zeros_like(p.data))

    def step(self, grads=None):
        """One bias-corrected update. ``grads`` defaults to each parameter's ``.grad``."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad if grads is None else grads[k]
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, expected {p.data.shape}")
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_arrays(self, prefix):
        out = {f"{prefix}/t": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays, prefix):
        self.t = int(arrays[f"{prefix}/t"][0])
        for k in self.params:
            self.m[k] = arrays[f"{prefix}/m/{k}"].copy()
            self.v[k] = arrays[f"{prefix}/v/{k}"].copy()


class RunningNorm:
    """Per-feature running mean/variance used to standardize network inputs."""

    def __init__(self, dim, clip=5.0, eps=1e-2):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.clip = clip
        self.eps = eps

    def update(self, x):
        x = np.atleast_2d(x)
        for row in x:
            self.count += 1.0
            d = row - self.mean
            self.mean += d / self.count
            self.m2 += d * (row - self.mean)

    @property
    def var(self):
        return self.m2 / self.count if self.count > 1 else np.ones_like(self.mean)

    def __call__(self, x):
        if self.count < 2:
            return np.asarray(x, dtype=np.float64)
        return np.clip((x - self.mean) / np.sqrt(self.var + self.eps), -self.clip, self.clip)

    def state_arrays(self, prefix):
        return {f"{prefix}/count": np.array([self.count]), f"{prefix}/mean": self.mean.copy(),
                f"{prefix}/m2": self.m2.copy()}

    def load_state_arrays(self, arrays, prefix):
        self.count = float(arrays[f"{prefix}/count"][0])
        self.mean = arrays[f"{prefix}/mean"].copy()
        self.m2 = arrays[f"{prefix}/m2"].copy()


# --- checkpoint files -------------------------------------------------------
# layout: MAGIC | u32 little-endian header length | UTF-8 JSON header | float64 LE payload

MAGIC = b"FLTREPO\x00"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, config_hash: str, meta: dict | None = None):
    entries = []
    payload = []
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        payload.append(a.tobytes(order="C"))
    header = json.dumps({"version": CHECKPOINT_VERSION, "config_hash": config_hash,
                         "meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
    tmp.replace(path)


def load_checkpoint(path, expected_shapes: dict | None = None, config_hash: str | None = None):
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(raw[start:start + hlen].decode())
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header['version']}")
    if config_hash is not None and header["config_hash"] != config_hash:
        raise CheckpointError(f"{path}: config hash {header['config_hash']} does not match {config_hash}")
    offset = start + hlen
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(e["shape"]).copy()
        offset += 8 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing or truncated payload")
    for name, shape in (expected_shapes or {}).items():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing array {name}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {tuple(shape)}")
    return arrays, header


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
