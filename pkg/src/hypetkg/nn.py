"""Parameter containers and a small pre-norm Transformer encoder."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


def _name_seed(seed: int, name: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")])


class ParamStore:
    """Ordered, uniquely named parameters.

    Each parameter draws its initial value from a generator keyed by
    ``(seed, name)``, so adding a component never changes how the others start.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Parameter] = {}

    def uniform(self, name: str, shape: tuple[int, ...], scale: float) -> Parameter:
        rng = np.random.default_rng(_name_seed(self.seed, name))
        return self.add(name, rng.uniform(-scale, scale, size=shape))

    def constant(self, name: str, shape: tuple[int, ...], value: float) -> Parameter:
        return self.add(name, np.full(shape, value, dtype=np.float64))

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        p = Parameter(value, name=name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def n_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self._params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != {p.shape}")
            p.data[...] = arrays[k]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None


class TransformerEncoder:
    """Pre-norm multi-head self-attention stack without positional encodings.

    ``__call__`` takes tokens (B, L, d) and a key mask (B, L) and returns the
    output at position 0 after a final layer norm.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, layers: int, heads: int, ff_mult: int = 2):
        if dim % heads:
            raise ValueError(f"dimension {dim} is not divisible by {heads} heads")
        self.dim, self.layers, self.heads = dim, layers, heads
        scale = 1.0 / np.sqrt(dim)
        hidden = ff_mult * dim
        self.blocks = []
        for i in range(layers):
            p = f"{prefix}.{i}"
            blk = {
                "ln1_g": store.constant(f"{p}.ln1.gain", (dim,), 1.0),
                "ln1_b": store.constant(f"{p}.ln1.bias", (dim,), 0.0),
                "wq": store.uniform(f"{p}.attn.wq", (dim, dim), scale),
                "wk": store.uniform(f"{p}.attn.wk", (dim, dim), scale),
                "wv": store.uniform(f"{p}.attn.wv", (dim, dim), scale),
                "wo": store.uniform(f"{p}.attn.wo", (dim, dim), scale),
                "bq": store.constant(f"{p}.attn.bq", (dim,), 0.0),
                "bk": store.constant(f"{p}.attn.bk", (dim,), 0.0),
                "bv": store.constant(f"{p}.attn.bv", (dim,), 0.0),
                "bo": store.constant(f"{p}.attn.bo", (dim,), 0.0),
                "ln2_g": store.constant(f"{p}.ln2.gain", (dim,), 1.0),
                "ln2_b": store.constant(f"{p}.ln2.bias", (dim,), 0.0),
                "w1": store.uniform(f"{p}.ff.w1", (hidden, dim), scale),
                "b1": store.constant(f"{p}.ff.b1", (hidden,), 0.0),
                "w2": store.uniform(f"{p}.ff.w2", (dim, hidden), 1.0 / np.sqrt(hidden)),
                "b2": store.constant(f"{p}.ff.b2", (dim,), 0.0),
            }
            self.blocks.append(blk)
        self.ln_g = store.constant(f"{prefix}.ln_out.gain", (dim,), 1.0)
        self.ln_b = store.constant(f"{prefix}.ln_out.bias", (dim,), 0.0)

    def _split_heads(self, x: Tensor, b: int, length: int) -> Tensor:
        dh = self.dim // self.heads
        return x.reshape(b, length, self.heads, dh).transpose(0, 2, 1, 3)

    def __call__(
        self,
        tokens: Tensor,
        mask: np.ndarray | None = None,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        b, length, d = tokens.shape
        dh = d // self.heads
        key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
        x = tokens
        for blk in self.blocks:
            y = ad.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
            q = self._split_heads(ad.linear(y, blk["wq"], blk["bq"]), b, length)
            k = self._split_heads(ad.linear(y, blk["wk"], blk["bk"]), b, length)
            v = self._split_heads(ad.linear(y, blk["wv"], blk["bv"]), b, length)
            logits = ad.mul(ad.matmul(q, k.transpose(0, 1, 3, 2)), 1.0 / np.sqrt(dh))
            att = ad.softmax(logits, axis=-1, mask=key_mask)
            ctx = ad.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, length, d)
            x = ad.add(x, ad.dropout(ad.linear(ctx, blk["wo"], blk["bo"]), dropout, rng))
            y = ad.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
            f = ad.linear(ad.relu(ad.linear(y, blk["w1"], blk["b1"])), blk["w2"], blk["b2"])
            x = ad.add(x, ad.dropout(f, dropout, rng))
        x = ad.layer_norm(x, self.ln_g, self.ln_b)
        return x[:, 0, :]


def pad_sequences(lengths: list[int]) -> tuple[np.ndarray, int]:
    """Key mask (B, L) for sequences of the given lengths, plus L."""
    width = max(lengths) if lengths else 1
    mask = np.zeros((len(lengths), width), dtype=bool)
    for i, n in enumerate(lengths):
        mask[i, :n] = True
    return mask, width
