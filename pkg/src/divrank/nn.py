"""Minimal dense numerical core.

Everything here is float64 numpy.  Models are plain parameter stores with
hand-written forward/backward rules; there is no general autodiff graph.
The transformer encoder uses pre-normalization layers and no positional
encoding, so it is exactly permutation-equivariant over token rows.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import ContractViolation, ConfigurationError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class RngStream:
    """Deterministic seeded random stream, labelled per component.

    The same (seed, label) pair always produces the same draw sequence,
    independent of any other stream, so parallel data generation cannot
    perturb training determinism.
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        # label folded in via its bytes so streams with different labels
        # are independent even for equal seeds
        ss = np.random.SeedSequence([self.seed, *label.encode("utf-8")])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")

    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self.gen.choice(n, size=size, replace=replace)

    def random(self, size=None):
        return self.gen.random(size)

    def poisson(self, lam):
        return self.gen.poisson(lam)


class ParamStore:
    """Named float64 parameter tensors with matching gradient buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ContractViolation(f"duplicate parameter {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self.grads[name]
        if g.shape != np.shape(grad):
            raise ContractViolation(
                f"gradient shape {np.shape(grad)} != parameter shape {g.shape} for {name!r}"
            )
        g += grad

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.params.items():
            out.add(k, v.copy())
        return out

    def assert_finite(self) -> None:
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ContractViolation(f"non-finite values in parameter {k!r}")


class Adam:
    """Adam with standard defaults; parameter order is fixed by name sort."""

    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in self.store.names():
            g = self.store.grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self.store.params[name] -= self.lr * update


# ---------------------------------------------------------------------------
# elementary layers


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w + b, b broadcast over rows."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ContractViolation(
            f"linear_forward shape mismatch: x {x.shape}, w {w.shape}"
        )
    if b.shape != (w.shape[1],):
        raise ContractViolation(
            f"linear_forward bias shape {b.shape} != ({w.shape[1]},)"
        )
    return x @ w + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable -log softmax(logits)[label]; gradient = softmax - one_hot."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2:
        raise ContractViolation("logits must be a vector with at least 2 classes")
    if not (0 <= label < logits.size):
        raise ContractViolation(f"label {label} out of range for {logits.size} classes")
    ls = log_softmax(logits)
    loss = -ls[label]
    grad = np.exp(ls)
    grad[label] -= 1.0
    return float(loss), grad


def layer_norm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray,
                       eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * g + b
    return y, (xhat, inv, g)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    dg = np.sum(dy * xhat, axis=0)
    db = np.sum(dy, axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


# ---------------------------------------------------------------------------
# transformer encoder

_LAYER_PARAMS = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
]


def _xavier(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(size=(fan_in, fan_out), scale=scale)


def init_transformer_params(store: ParamStore, dim: int, layers: int,
                            heads: int, ffn_dim: int, rng: RngStream,
                            prefix: str = "enc") -> None:
    if dim % heads != 0:
        raise ConfigurationError(f"dim {dim} not divisible by heads {heads}")
    if layers < 1:
        raise ConfigurationError("need at least one layer")
    for l in range(layers):
        p = f"{prefix}.layer{l}."
        store.add(p + "ln1_g", np.ones(dim))
        store.add(p + "ln1_b", np.zeros(dim))
        for name in ("wq", "wk", "wv", "wo"):
            store.add(p + name, _xavier(rng, dim, dim))
        for name in ("bq", "bk", "bv", "bo"):
            store.add(p + name, np.zeros(dim))
        store.add(p + "ln2_g", np.ones(dim))
        store.add(p + "ln2_b", np.zeros(dim))
        store.add(p + "w1", _xavier(rng, dim, ffn_dim))
        store.add(p + "b1", np.zeros(ffn_dim))
        store.add(p + "w2", _xavier(rng, ffn_dim, dim))
        store.add(p + "b2", np.zeros(dim))


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def transformer_encoder_forward(tokens: np.ndarray, store: ParamStore,
                                layers: int, heads: int,
                                prefix: str = "enc",
                                cache: list | None = None) -> np.ndarray:
    """L pre-norm encoder layers (LN -> MHA -> residual; LN -> FFN -> residual).

    No positional encoding is added.  If ``cache`` is a list it is filled with
    the per-layer intermediates needed by the backward pass.
    """
    x = np.asarray(tokens, dtype=np.float64)
    if x.ndim != 2:
        raise ContractViolation("tokens must be a 2-D matrix")
    d = x.shape[1]
    if d % heads != 0:
        raise ConfigurationError(f"dim {d} not divisible by heads {heads}")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    for l in range(layers):
        p = f"{prefix}.layer{l}."
        a, ln1_cache = layer_norm_forward(x, store[p + "ln1_g"], store[p + "ln1_b"])
        q = _split_heads(a @ store[p + "wq"] + store[p + "bq"], heads)
        k = _split_heads(a @ store[p + "wk"] + store[p + "bk"], heads)
        v = _split_heads(a @ store[p + "wv"] + store[p + "bv"], heads)
        scores = np.einsum("hid,hjd->hij", q, k) * scale
        attn = softmax(scores, axis=-1)
        ctx = np.einsum("hij,hjd->hid", attn, v)
        merged = _merge_heads(ctx)
        o = merged @ store[p + "wo"] + store[p + "bo"]
        x1 = x + o
        b_, ln2_cache = layer_norm_forward(x1, store[p + "ln2_g"], store[p + "ln2_b"])
        z = b_ @ store[p + "w1"] + store[p + "b1"]
        hmid = gelu(z)
        f = hmid @ store[p + "w2"] + store[p + "b2"]
        x2 = x1 + f
        if cache is not None:
            cache.append((a, ln1_cache, q, k, v, attn, merged, x1,
                          b_, ln2_cache, z, hmid))
        x = x2
    return x


def transformer_encoder_backward(dout: np.ndarray, store: ParamStore,
                                 layers: int, heads: int, cache: list,
                                 prefix: str = "enc") -> np.ndarray:
    """Accumulates parameter gradients into ``store``; returns d(tokens)."""
    d = dout.shape[1]
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    dx = dout
    for l in range(layers - 1, -1, -1):
        p = f"{prefix}.layer{l}."
        (a, ln1_cache, q, k, v, attn, merged, x1,
         b_, ln2_cache, z, hmid) = cache[l]
        # FFN branch: x2 = x1 + gelu(LN2(x1) w1 + b1) w2 + b2
        df = dx
        store.accumulate(p + "w2", hmid.T @ df)
        store.accumulate(p + "b2", df.sum(axis=0))
        dhmid = df @ store[p + "w2"].T
        dz = dhmid * gelu_grad(z)
        store.accumulate(p + "w1", b_.T @ dz)
        store.accumulate(p + "b1", dz.sum(axis=0))
        db_ = dz @ store[p + "w1"].T
        dx1_ln, dg2, db2 = layer_norm_backward(db_, ln2_cache)
        store.accumulate(p + "ln2_g", dg2)
        store.accumulate(p + "ln2_b", db2)
        dx1 = dx + dx1_ln
        # attention branch: x1 = x + merged wo + bo
        do = dx1
        store.accumulate(p + "wo", merged.T @ do)
        store.accumulate(p + "bo", do.sum(axis=0))
        dmerged = do @ store[p + "wo"].T
        dctx = _split_heads(dmerged, heads)
        dattn = np.einsum("hid,hjd->hij", dctx, v)
        dv = np.einsum("hij,hid->hjd", attn, dctx)
        # softmax backward per row
        dscores = attn * (dattn - np.sum(dattn * attn, axis=-1, keepdims=True))
        dscores *= scale
        dq = np.einsum("hij,hjd->hid", dscores, k)
        dk = np.einsum("hij,hid->hjd", dscores, q)
        da = np.zeros_like(a)
        for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
            flat = _merge_heads(dmat)
            store.accumulate(p + name, a.T @ flat)
            store.accumulate(p + "b" + name[1], flat.sum(axis=0))
            da += flat @ store[p + name].T
        dx_ln, dg1, db1 = layer_norm_backward(da, ln1_cache)
        store.accumulate(p + "ln1_g", dg1)
        store.accumulate(p + "ln1_b", db1)
        dx = dx1 + dx_ln
    return dx


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], float], store: ParamStore, h: float = 1e-4,
               max_coords: int | None = None, rng: RngStream | None = None) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``f`` must evaluate the scalar loss at the current parameters of ``store``
    and (re)populate ``store.grads`` with the reverse-mode gradient.  Returns
    the maximum relative error |g_ad - g_fd| / max(1, |g_ad|, |g_fd|) over the
    checked coordinates.  ``max_coords`` limits the number of randomly sampled
    coordinates per parameter set (all coordinates when None).
    """
    base = f()
    if not np.isfinite(base):
        raise ContractViolation("loss is non-finite at the evaluation point")
    analytic = {k: v.copy() for k, v in store.grads.items()}

    coords: list[tuple[str, int]] = []
    for name in store.names():
        coords.extend((name, i) for i in range(store.params[name].size))
    if max_coords is not None and len(coords) > max_coords:
        if rng is None:
            rng = RngStream(0, "grad-check")
        idx = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in idx]

    max_err = 0.0
    for name, i in coords:
        flat = store.params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ContractViolation(
                f"non-finite loss while perturbing parameter {name!r}"
            )
        g_fd = (fp - fm) / (2.0 * h)
        g_ad = analytic[name].reshape(-1)[i]
        err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
        max_err = max(max_err, err)
    # restore gradient state for the caller
    for k, v in analytic.items():
        store.grads[k][...] = v
    return max_err
