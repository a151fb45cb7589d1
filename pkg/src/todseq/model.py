"""Causal decoder-only transformer, trained by next-token negative log-likelihood.

Layer i maps X to X' with

    Xn = LayerNorm(X);  H = MultiHead(Xn) + Xn
    Hn = LayerNorm(H);  X' = relu(Hn U) V + Hn

and the output scores are LayerNorm(X_l) W_vocab.  Attention scores are divided
by sqrt(d) with d the model width.  Everything runs in float64.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger(__name__)

DTYPE = torch.float64
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 128
    ff_dim: int = 512
    vocab_size: int = 1
    max_len: int = 512

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "model_dim", "ff_dim", "vocab_size", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if self.model_dim % 2:
            raise ValueError("model_dim must be even for the sinusoidal encoding")
        if self.max_len > 1024:
            raise ValueError("max_len must be <= 1024")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class TrainSettings:
    steps: int = 11000
    batch_size: int = 2
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.999)
    warmup: int = 100
    # linear decay of the rate to zero over the steps after warmup
    decay: bool = True
    mask_context: bool = False
    log_every: int = 100


def positional_encoding(n: int, d: int) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("length and dimension must be positive")
    if d % 2:
        raise ValueError("sinusoidal encoding needs an even dimension")
    pos = np.arange(n, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d, 2, dtype=np.float64) / d)
    out = np.empty((n, d), dtype=np.float64)
    out[:, 0::2] = np.sin(pos * rates)
    out[:, 1::2] = np.cos(pos * rates)
    return out


def causal_attention(x: torch.Tensor, y: torch.Tensor, z: torch.Tensor, scale_dim: int | None = None,
                     offset: int = 0) -> torch.Tensor:
    """softmax(mask(x y^T) / sqrt(scale_dim)) z over the last two axes.

    ``offset`` is the absolute position of the first query row, for decoding with
    a key/value cache where ``y`` and ``z`` hold earlier positions too.
    """
    if x.shape[-1] != y.shape[-1] or y.shape[-2] != z.shape[-2]:
        raise ValueError(f"shape mismatch: x {tuple(x.shape)}, y {tuple(y.shape)}, z {tuple(z.shape)}")
    scale_dim = scale_dim or x.shape[-1]
    n, m = x.shape[-2], y.shape[-2]
    scores = x @ y.transpose(-1, -2)
    q_pos = torch.arange(n).unsqueeze(1) + offset
    k_pos = torch.arange(m).unsqueeze(0)
    scores = scores.masked_fill(k_pos > q_pos, float("-inf"))
    weights = torch.softmax(scores / math.sqrt(scale_dim), dim=-1)
    return weights @ z


def _layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    mean = x.mean(-1, keepdim=True)
    var = ((x - mean) ** 2).mean(-1, keepdim=True)
    return (x - mean) / torch.sqrt(var + LN_EPS) * gain + bias


class Transformer(torch.nn.Module):
    """Parameters only; the computation lives in the module-level functions."""

    def __init__(self, config: ModelConfig, seed: int = 0, init_scale: float = 0.02, embed_scale: float = 1.0):
        super().__init__()
        self.config = config
        c = config
        gen = torch.Generator().manual_seed(seed)

        def uniform(*shape, scale=init_scale):
            t = (torch.rand(*shape, generator=gen, dtype=DTYPE) * 2 - 1) * scale
            return torch.nn.Parameter(t)

        def const(value, n):
            return torch.nn.Parameter(torch.full((n,), float(value), dtype=DTYPE))

        # token embeddings start at the same order of magnitude as the sinusoidal
        # positions (norm sqrt(d/2)); at the weight scale the position signal swamps
        # token identity and copying values out of the context is learned far slower
        self.token_embedding = uniform(c.vocab_size, c.model_dim, scale=embed_scale)
        self.layers = torch.nn.ModuleList()
        for _ in range(c.num_layers):
            layer = torch.nn.Module()
            # per-head projections W^1, W^2, W^3 stacked on the leading axis
            layer.w_query = uniform(c.num_heads, c.model_dim, c.head_dim)
            layer.w_key = uniform(c.num_heads, c.model_dim, c.head_dim)
            layer.w_value = uniform(c.num_heads, c.model_dim, c.head_dim)
            layer.w_out = uniform(c.model_dim, c.model_dim)
            layer.ff_in = uniform(c.model_dim, c.ff_dim)
            layer.ff_out = uniform(c.ff_dim, c.model_dim)
            layer.ln1_gain, layer.ln1_bias = const(1, c.model_dim), const(0, c.model_dim)
            layer.ln2_gain, layer.ln2_bias = const(1, c.model_dim), const(0, c.model_dim)
            self.layers.append(layer)
        self.final_gain, self.final_bias = const(1, c.model_dim), const(0, c.model_dim)
        self.w_vocab = uniform(c.model_dim, c.vocab_size)
        self.register_buffer(
            "positions", torch.from_numpy(positional_encoding(c.max_len, c.model_dim)), persistent=False
        )

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return transformer_forward(self, ids)


def _multihead(layer, xn: torch.Tensor, d: int, cache: dict | None = None, offset: int = 0) -> torch.Tensor:
    # xn: (..., n, d) -> per head (..., k, n, d/k)
    xh = xn.unsqueeze(-3)
    q = xh @ layer.w_query
    k = xh @ layer.w_key
    v = xh @ layer.w_value
    if cache is not None:
        if "k" in cache:
            k = torch.cat([cache["k"], k], dim=-2)
            v = torch.cat([cache["v"], v], dim=-2)
        cache["k"], cache["v"] = k, v
    heads = causal_attention(q, k, v, scale_dim=d, offset=offset)
    # concatenate heads along features: (..., n, k * d/k)
    heads = heads.transpose(-3, -2).reshape(*xn.shape[:-1], -1)
    return heads @ layer.w_out


def _blocks(model: Transformer, x: torch.Tensor, caches: list | None = None, offset: int = 0) -> torch.Tensor:
    d = model.config.model_dim
    for i, layer in enumerate(model.layers):
        xn = _layer_norm(x, layer.ln1_gain, layer.ln1_bias)
        h = _multihead(layer, xn, d, None if caches is None else caches[i], offset) + xn
        hn = _layer_norm(h, layer.ln2_gain, layer.ln2_bias)
        x = torch.relu(hn @ layer.ff_in) @ layer.ff_out + hn
    return _layer_norm(x, model.final_gain, model.final_bias) @ model.w_vocab


def transformer_forward(model: Transformer, ids) -> torch.Tensor:
    """Logits of shape (..., n, vocab_size) for token ids of shape (..., n)."""
    ids = torch.as_tensor(ids, dtype=torch.long)
    n = ids.shape[-1]
    if n > model.config.max_len:
        raise ValueError(f"sequence of length {n} exceeds max_len {model.config.max_len}; truncate first")
    x = model.token_embedding[ids] + model.positions[:n]
    return _blocks(model, x)


def nll_loss(logits: torch.Tensor, targets, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean of -log softmax(logits[i])[targets[i]] over (masked) positions.

    Row i of ``logits`` scores the token that follows position i, so callers pass
    ``forward(seq)[:-1]`` with ``seq[1:]``.
    """
    targets = torch.as_tensor(targets, dtype=torch.long)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits rows {tuple(logits.shape[:-1])} do not match targets {tuple(targets.shape)}")
    logp = torch.log_softmax(logits, dim=-1)
    picked = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if mask is None:
        return picked.mean()
    mask = torch.as_tensor(mask, dtype=logits.dtype)
    total = mask.sum()
    if total == 0:
        return (picked * 0).sum()
    return (picked * mask).sum() / total


def _collate(batch: list[tuple[list[int], list[float] | None]]):
    """Right-pad a batch; returns ids (B, n) and a per-target mask (B, n-1)."""
    n = max(len(s) for s, _ in batch)
    ids = torch.zeros(len(batch), n, dtype=torch.long)
    mask = torch.zeros(len(batch), max(n - 1, 0), dtype=DTYPE)
    for i, (seq, m) in enumerate(batch):
        ids[i, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
        if len(seq) > 1:
            weights = torch.ones(len(seq) - 1, dtype=DTYPE) if m is None else torch.as_tensor(m, dtype=DTYPE)
            mask[i, : len(seq) - 1] = weights
    return ids, mask


def batch_loss(model: Transformer, batch) -> torch.Tensor:
    ids, mask = _collate(batch)
    if ids.shape[1] < 2:
        return torch.zeros((), dtype=DTYPE) * model.w_vocab.sum()
    logits = transformer_forward(model, ids[:, :-1])
    return nll_loss(logits, ids[:, 1:], mask)


def parameter_gradients(model: Transformer, batch) -> dict[str, torch.Tensor]:
    """Exact gradients of the masked mean NLL with respect to every parameter.

    ``batch`` holds (token ids, per-target mask or None) pairs; the mask has one
    weight per predicted token (length n-1).
    """
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch)
    params = dict(model.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p)).detach()
        for (name, p), g in zip(params.items(), grads)
    }


@dataclass
class TrainResult:
    model: Transformer
    losses: list[float] = field(default_factory=list)


class NonFiniteLoss(RuntimeError):
    pass


def _lr_factor(step: int, settings: TrainSettings) -> float:
    factor = min(1.0, (step + 1) / settings.warmup) if settings.warmup else 1.0
    if settings.decay and step >= settings.warmup:
        factor *= max(0.0, (settings.steps - step) / max(1, settings.steps - settings.warmup))
    return factor


def train(model: Transformer, sequences: list, settings: TrainSettings, seed: int = 0,
          progress=None) -> TrainResult:
    """Adam on mini-batches of length-sorted buckets; deterministic given ``seed``.

    ``sequences`` are token-id lists or (ids, mask) pairs.
    """
    if not sequences:
        raise ValueError("cannot train on an empty corpus")
    items = [s if isinstance(s, tuple) else (s, None) for s in sequences]
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr, betas=settings.betas)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda step: _lr_factor(step, settings))
    bs = min(settings.batch_size, len(items))
    order: list[int] = []
    losses: list[float] = []
    model.train()
    for step in range(settings.steps):
        if len(order) < bs:
            # shuffle, then group neighbours of similar length to cut padding
            perm = rng.permutation(len(items))
            chunks = [perm[i : i + bs * 8] for i in range(0, len(perm), bs * 8)]
            fresh = []
            for chunk in chunks:
                fresh.extend(sorted(chunk, key=lambda j: len(items[j][0])))
            batches = [fresh[i : i + bs] for i in range(0, len(fresh), bs)]
            batches = [batches[i] for i in rng.permutation(len(batches))]
            order.extend(j for b in batches for j in b)
        idx, order = order[:bs], order[bs:]
        loss = batch_loss(model, [items[j] for j in idx])
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss became {value} at step {step}; lower the learning rate")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        losses.append(value)
        if progress is not None and (step % settings.log_every == 0 or step == settings.steps - 1):
            progress(step, value)
    model.eval()
    return TrainResult(model, losses)


@torch.no_grad()
def greedy_decode(model: Transformer, prefix, stop_tokens=(), max_new: int = 64) -> list[int]:
    """Append argmax tokens until a stop token (kept), ``max_new`` tokens, or max_len."""
    prefix = [int(i) for i in prefix]
    stops = set(stop_tokens)
    max_len = model.config.max_len
    if not prefix:
        raise ValueError("greedy decoding needs a nonempty prefix")
    if len(prefix) >= max_len:
        return []
    out: list[int] = []
    caches = [dict() for _ in model.layers]
    x = model.token_embedding[torch.as_tensor(prefix)] + model.positions[: len(prefix)]
    logits = _blocks(model, x, caches, offset=0)[-1]
    pos = len(prefix)
    while len(out) < max_new and pos < max_len:
        # argmax returns the first maximal index, i.e. the lowest id on ties
        nxt = int(torch.argmax(logits))
        out.append(nxt)
        if nxt in stops or len(out) >= max_new or pos + 1 >= max_len:
            break
        x = model.token_embedding[nxt].unsqueeze(0) + model.positions[pos : pos + 1]
        logits = _blocks(model, x, caches, offset=pos)[-1]
        pos += 1
    return out


class LanguageModel:
    """Trained transformer bundled with the decoding entry point used by the engine."""

    def __init__(self, model: Transformer):
        self.model = model

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def generate(self, prefix: list[int], stop_tokens, max_new: int) -> list[int]:
        return greedy_decode(self.model, prefix, stop_tokens, max_new)


# Checkpoint layout: a numpy .npz archive.  Entry "__config__" holds the JSON
# config (plus caller metadata) as a uint8 byte array; every parameter is stored
# under its dotted name as little-endian float64 ("<f8") in C order.
def save_checkpoint(model: Transformer, path: str | Path, meta: dict | None = None) -> None:
    header = {"config": asdict(model.config), "meta": meta or {}}
    arrays = {"__config__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    for name, p in model.named_parameters():
        arrays[name] = np.ascontiguousarray(p.detach().numpy().astype("<f8"))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[Transformer, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__config__"]).decode())
        model = Transformer(ModelConfig(**header["config"]))
        with torch.no_grad():
            for name, p in model.named_parameters():
                p.copy_(torch.from_numpy(data[name].astype(np.float64)))
    model.eval()
    return model, header.get("meta", {})
