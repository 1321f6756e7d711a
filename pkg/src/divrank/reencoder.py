"""Residual MLP re-encoder for visual features.

A feature h is mapped to h + beta * mlp(h): a small learned correction on
top of the frozen upstream encoder's output.  The output is deliberately
not re-normalized; downstream similarities tolerate non-unit vectors.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .nn import ParamStore, RngStream, gelu, gelu_grad, _xavier


class ReEncoder:
    """d -> hidden -> d MLP with GELU, applied as a scaled residual."""

    def __init__(self, dim: int, beta: float = 0.02, hidden: int | None = None,
                 rng: RngStream | None = None):
        if beta < 0:
            raise ContractViolation("beta must be non-negative")
        if rng is None:
            rng = RngStream(0, "reencoder-init")
        self.dim = dim
        self.beta = float(beta)
        self.hidden = hidden if hidden is not None else 2 * dim
        self.store = ParamStore()
        self.store.add("w1", _xavier(rng, dim, self.hidden))
        self.store.add("b1", np.zeros(self.hidden))
        self.store.add("w2", _xavier(rng, self.hidden, dim))
        self.store.add("b2", np.zeros(dim))

    def _mlp(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        z = x @ self.store["w1"] + self.store["b1"]
        h = gelu(z)
        y = h @ self.store["w2"] + self.store["b2"]
        if cache is not None:
            cache.append((x, z, h))
        return y

    def reencode(self, feats: np.ndarray, cache: list | None = None) -> np.ndarray:
        """feats: (n, d) or (d,); returns features of the same shape."""
        x = np.asarray(feats, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.dim:
            raise ContractViolation(
                f"feature dim {x.shape[1]} != model dim {self.dim}"
            )
        out = x + self.beta * self._mlp(x, cache)
        return out[0] if single else out

    def backward(self, dout: np.ndarray, cache_entry) -> None:
        """Accumulate parameter gradients given d(loss)/d(re-encoded feats)."""
        x, z, h = cache_entry
        dy = self.beta * np.atleast_2d(dout)
        self.store.accumulate("w2", h.T @ dy)
        self.store.accumulate("b2", dy.sum(axis=0))
        dh = dy @ self.store["w2"].T
        dz = dh * gelu_grad(z)
        self.store.accumulate("w1", x.T @ dz)
        self.store.accumulate("b1", dz.sum(axis=0))
