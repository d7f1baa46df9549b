"""Hybrid CNN/transformer segmentation network for tiny-target maps.

A residual CNN encoder builds a feature pyramid F_0..F_k. Each intermediate
level 1..k-1 is refined by a transformer branch (tokenize, multi-head
self-attention, MLP, reassemble, pool to the coarsest grid). The refined
maps are fused with F_k by a 1x1 convolution, then a U-shaped decoder with
skip connections upsamples back to full resolution and emits a per-pixel
probability map through a sigmoid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import xavier_init


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Channel widths, level count, head counts and patch geometry."""

    k: int = 4
    channels: tuple = (8, 16, 32, 64)
    stem_channels: int = 4
    heads_per_level: tuple = (2, 2, 2)
    input_size: int = 64
    mlp_ratio: int = 2
    seed: int = 0
    use_transformer: bool = True

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.heads_per_level = tuple(self.heads_per_level)
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if len(self.channels) != self.k:
            raise ConfigError("channels must list one width per level")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError("channels must be strictly increasing")
        if len(self.heads_per_level) != self.k - 1:
            raise ConfigError("heads_per_level must have k-1 entries")
        if self.input_size % (1 << self.k):
            raise ConfigError(f"input_size must be divisible by 2^k={1 << self.k}")
        p = self.patch_size
        for i in range(1, self.k):
            d = p * p * self.channels[i - 1]
            m = self.heads_per_level[i - 1]
            if m < 1 or d % m:
                raise ConfigError(
                    f"heads at level {i} ({m}) must divide token dim {d}")

    @property
    def patch_size(self) -> int:
        # Tokens are cut at the coarsest grid size so every refined map
        # lands on the same spatial extent as F_k.
        return self.input_size >> self.k

    def token_dim(self, level: int) -> int:
        p = self.patch_size
        return p * p * self.channels[level - 1]

    def token_count(self, level: int) -> int:
        h = self.input_size >> level
        return (h * h) // (self.patch_size ** 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["heads_per_level"] = list(self.heads_per_level)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def _patch_permutation(c: int, h: int, w: int, p: int) -> np.ndarray:
    """Flat gather indices turning a [C,H,W] map into [N, P*P*C] tokens.

    Token t = gh * (W/p) + gw holds patch (gh, gw); within a token the
    layout is channel-major then row-major spatial.
    """
    gh, gw = h // p, w // p
    idx = np.empty((gh * gw, c * p * p), dtype=np.intp)
    for t in range(gh * gw):
        r0, c0 = (t // gw) * p, (t % gw) * p
        block = (np.arange(c)[:, None, None] * h * w
                 + (r0 + np.arange(p))[None, :, None] * w
                 + (c0 + np.arange(p))[None, None, :])
        idx[t] = block.ravel()
    return idx.ravel()


class _Params:
    """Ordered named parameter store."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.named: dict[str, Tensor] = {}

    def weight(self, name: str, shape) -> Tensor:
        t = Tensor(xavier_init(shape, self.rng), requires_grad=True)
        self.named[name] = t
        return t

    def const(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self.named[name] = t
        return t


class _Residual:
    """Basic residual block: 3x3 conv, relu, 3x3 conv, plus projected skip."""

    def __init__(self, ps: _Params, name: str, c_in: int, c_out: int, stride: int):
        self.stride = stride
        self.w1 = ps.weight(f"{name}.conv1", (c_out, c_in, 3, 3))
        self.b1 = ps.const(f"{name}.conv1.bias", np.zeros(c_out))
        self.w2 = ps.weight(f"{name}.conv2", (c_out, c_out, 3, 3))
        self.b2 = ps.const(f"{name}.conv2.bias", np.zeros(c_out))
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = ps.weight(f"{name}.proj", (c_out, c_in, 1, 1))
            self.proj_b = ps.const(f"{name}.proj.bias", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.relu(ad.channel_bias(
            ad.conv2d(x, self.w1, stride=self.stride, pad=1), self.b1))
        y = ad.channel_bias(ad.conv2d(y, self.w2, stride=1, pad=1), self.b2)
        if self.proj is None:
            skip = x
        else:
            skip = ad.channel_bias(
                ad.conv2d(x, self.proj, stride=self.stride), self.proj_b)
        return ad.relu(ad.add(y, skip))


class _VitBranch:
    """Per-level transformer refiner: tokens -> MSA -> MLP -> pooled map."""

    def __init__(self, ps: _Params, cfg: ModelConfig, level: int):
        self.level = level
        self.c = cfg.channels[level - 1]
        self.h = cfg.input_size >> level
        self.p = cfg.patch_size
        self.heads = cfg.heads_per_level[level - 1]
        d = cfg.token_dim(level)
        n = cfg.token_count(level)
        self.d = d
        self.d_head = d // self.heads
        self.perm = _patch_permutation(self.c, self.h, self.h, self.p)
        self.inv_perm = np.argsort(self.perm)

        name = f"vit{level}"
        self.pos = ps.weight(f"{name}.pos", (n, d))
        self.ln1_g = ps.const(f"{name}.ln1.gain", np.ones(d))
        self.ln1_b = ps.const(f"{name}.ln1.shift", np.zeros(d))
        self.wq = ps.weight(f"{name}.wq", (d, d))
        self.bq = ps.const(f"{name}.bq", np.zeros(d))
        self.wk = ps.weight(f"{name}.wk", (d, d))
        self.bk = ps.const(f"{name}.bk", np.zeros(d))
        self.wv = ps.weight(f"{name}.wv", (d, d))
        self.bv = ps.const(f"{name}.bv", np.zeros(d))
        self.wo = ps.weight(f"{name}.wo", (d, d))
        self.bo = ps.const(f"{name}.bo", np.zeros(d))
        self.ln2_g = ps.const(f"{name}.ln2.gain", np.ones(d))
        self.ln2_b = ps.const(f"{name}.ln2.shift", np.zeros(d))
        hidden = cfg.mlp_ratio * d
        self.w_mlp1 = ps.weight(f"{name}.mlp1", (d, hidden))
        self.b_mlp1 = ps.const(f"{name}.mlp1.bias", np.zeros(hidden))
        self.w_mlp2 = ps.weight(f"{name}.mlp2", (hidden, d))
        self.b_mlp2 = ps.const(f"{name}.mlp2.bias", np.zeros(d))

    def attention(self, tokens: Tensor) -> Tensor:
        h = ad.layer_norm(tokens, self.ln1_g, self.ln1_b)
        q = ad.linear(h, self.wq, self.bq)
        k = ad.linear(h, self.wk, self.bk)
        v = ad.linear(h, self.wv, self.bv)
        outs = []
        for j in range(self.heads):
            lo, hi = j * self.d_head, (j + 1) * self.d_head
            qj = ad.slice_cols(q, lo, hi)
            kj = ad.slice_cols(k, lo, hi)
            vj = ad.slice_cols(v, lo, hi)
            scores = ad.scale(ad.matmul(qj, ad.transpose(kj)),
                              1.0 / math.sqrt(self.d_head))
            outs.append(ad.matmul(ad.softmax_rows(scores), vj))
        mixed = outs[0] if len(outs) == 1 else ad.concat_cols(outs)
        return ad.linear(mixed, self.wo, self.bo)

    def mlp(self, tokens: Tensor) -> Tensor:
        h = ad.layer_norm(tokens, self.ln2_g, self.ln2_b)
        h = ad.relu(ad.linear(h, self.w_mlp1, self.b_mlp1))
        return ad.linear(h, self.w_mlp2, self.b_mlp2)

    def __call__(self, feat: Tensor) -> Tensor:
        n, d = self.pos.shape
        tokens = ad.gather(feat, self.perm, (n, d))
        e = ad.add(tokens, self.pos)
        e_a = ad.add(self.attention(e), e)
        e_b = ad.add(self.mlp(e_a), e_a)
        grid = ad.gather(e_b, self.inv_perm, (self.c, self.h, self.h))
        return ad.adaptive_avg_pool(grid, self.p, self.p)


class TinyShipNet:
    """The full segmenter. Immutable during inference; one graph per forward."""

    def __init__(self, config: ModelConfig):
        self.config = config
        ps = _Params(np.random.Generator(np.random.PCG64(config.seed)))
        cfg = config

        self.stem = ps.weight("stem.conv", (cfg.stem_channels, 1, 3, 3))
        self.stem_b = ps.const("stem.conv.bias", np.zeros(cfg.stem_channels))
        widths = (cfg.stem_channels,) + cfg.channels
        self.stages = []
        for i in range(1, cfg.k + 1):
            self.stages.append((
                _Residual(ps, f"enc{i}.block1", widths[i - 1], widths[i], 2),
                _Residual(ps, f"enc{i}.block2", widths[i], widths[i], 1),
            ))

        self.branches = []
        if cfg.use_transformer:
            self.branches = [_VitBranch(ps, cfg, i) for i in range(1, cfg.k)]

        fuse_in = cfg.channels[-1]
        if cfg.use_transformer:
            fuse_in += sum(cfg.channels[:-1])
        self.fuse_w = ps.weight("fuse.conv", (cfg.channels[-1], fuse_in, 1, 1))
        self.fuse_b = ps.const("fuse.conv.bias", np.zeros(cfg.channels[-1]))

        self.dec_ws = []
        for i in range(cfg.k, 0, -1):
            c_skip = widths[i - 1]
            c_out = widths[i - 1]
            self.dec_ws.append((
                ps.weight(f"dec{i}.conv", (c_out, c_skip + widths[i], 3, 3)),
                ps.const(f"dec{i}.conv.bias", np.zeros(c_out)),
            ))
        self.head_w = ps.weight("head.conv", (1, cfg.stem_channels, 1, 1))
        self.head_b = ps.const("head.conv.bias", np.zeros(1))

        self._params = ps.named

    # -- parameter access -------------------------------------------------

    @property
    def named_parameters(self) -> dict[str, Tensor]:
        return self._params

    @property
    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state_arrays(self, named: dict[str, np.ndarray]):
        missing = set(self._params) - set(named)
        if missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)[:5]}")
        for k, t in self._params.items():
            arr = np.asarray(named[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}")
            t.data = np.ascontiguousarray(arr)

    # -- forward passes ---------------------------------------------------

    def encode(self, image: Tensor) -> list[Tensor]:
        c, h, w = image.shape
        if h != self.config.input_size or w != self.config.input_size:
            raise ConfigError(
                f"input must be {self.config.input_size}px square, got {h}x{w}")
        pyramid = [ad.relu(ad.channel_bias(
            ad.conv2d(image, self.stem, pad=1), self.stem_b))]
        for b1, b2 in self.stages:
            pyramid.append(b2(b1(pyramid[-1])))
        return pyramid

    def fuse(self, pyramid: list[Tensor]) -> Tensor:
        top = pyramid[-1]
        if not self.branches:
            return ad.channel_bias(ad.conv2d(top, self.fuse_w), self.fuse_b)
        refined = [br(pyramid[br.level]) for br in self.branches]
        # Order: coarse CNN feature first, then refined levels k-1 .. 1.
        stack = ad.concat_channels([top] + refined[::-1])
        return ad.channel_bias(ad.conv2d(stack, self.fuse_w), self.fuse_b)

    def decode(self, fused: Tensor, pyramid: list[Tensor]) -> tuple[Tensor, Tensor]:
        m = fused
        for (w, b), skip in zip(self.dec_ws, pyramid[-2::-1]):
            up = ad.bilinear_upsample(m)
            m = ad.relu(ad.channel_bias(
                ad.conv2d(ad.concat_channels([skip, up]), w, pad=1), b))
        logits = ad.channel_bias(ad.conv2d(m, self.head_w), self.head_b)
        return ad.sigmoid(logits), logits

    def forward(self, image) -> tuple[Tensor, Tensor]:
        """Run the network; returns (probability map, pre-sigmoid logits)."""
        if not isinstance(image, Tensor):
            image = Tensor(image)
        pyramid = self.encode(image)
        fused = self.fuse(pyramid)
        return self.decode(fused, pyramid)

    def predict(self, image: np.ndarray) -> np.ndarray:
        prob, _ = self.forward(Tensor(image))
        return prob.data[0]
