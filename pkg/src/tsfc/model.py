"""Per-channel CNN encoder, attention / concat pooling and linear classifier."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

WAFER = "wafer"
CPX = "cpx"
MAXPOOL = "maxpool_2x2_after_each"
ADAPTIVE_AVG = "single_adaptive_avg"
ATTENTION = "attention"
CONCAT = "concat"


@dataclass(frozen=True)
class ArchDescriptor:
    variant: str
    conv1: tuple[int, int]  # (out_channels, kernel)
    conv2: tuple[int, int]
    pooling: str
    embed_dim: int = 64
    attn_hidden: int = 64

    def __post_init__(self):
        expected = {WAFER: MAXPOOL, CPX: ADAPTIVE_AVG}.get(self.variant)
        if expected is None:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.pooling != expected:
            raise ValueError(f"{self.variant} variant requires pooling {expected!r}")


def wafer_arch(**overrides) -> ArchDescriptor:
    return replace(ArchDescriptor(WAFER, (8, 5), (16, 5), MAXPOOL), **overrides)


def cpx_arch(**overrides) -> ArchDescriptor:
    return replace(ArchDescriptor(CPX, (32, 5), (64, 5), ADAPTIVE_AVG), **overrides)


def arch_from_name(name: str, **overrides) -> ArchDescriptor:
    if name == WAFER:
        return wafer_arch(**overrides)
    if name == CPX:
        return cpx_arch(**overrides)
    raise ValueError(f"unknown arch {name!r}; expected 'wafer' or 'cpx'")


def _pooled_side(s: int) -> int:
    return (s + 1) // 2


def encoder_flat_dim(arch: ArchDescriptor, image_size: int) -> int:
    if arch.variant == CPX:
        return arch.conv2[0]
    side = _pooled_side(_pooled_side(image_size))
    return arch.conv2[0] * side * side


@dataclass
class ModelParams:
    arch: ArchDescriptor
    pooling_mode: str
    num_channels: int
    num_classes: int
    image_size: int
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def astype(self, dtype) -> ModelParams:
        return replace(self, tensors={k: Tensor(v.data.astype(dtype), requires_grad=True)
                                      for k, v in self.tensors.items()})

    def copy(self) -> ModelParams:
        return replace(self, tensors={k: Tensor(v.data.copy(), requires_grad=True)
                                      for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def init_params(arch: ArchDescriptor, pooling_mode: str, num_channels: int, num_classes: int,
                seed: int, image_size: int = 64, dtype=np.float64) -> ModelParams:
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights, zero biases."""
    if pooling_mode not in (ATTENTION, CONCAT):
        raise ValueError(f"unknown pooling mode {pooling_mode!r}")
    if num_channels < 1 or num_classes < 1:
        raise ValueError("num_channels and num_classes must be positive")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    (c1, k1), (c2, k2) = arch.conv1, arch.conv2
    m = arch.embed_dim
    flat = encoder_flat_dim(arch, image_size)
    raw = {
        "conv1.weight": uniform((c1, 1, k1, k1), k1 * k1),
        "conv1.bias": np.zeros(c1),
        "conv2.weight": uniform((c2, c1, k2, k2), c1 * k2 * k2),
        "conv2.bias": np.zeros(c2),
        "embed.weight": uniform((m, flat), flat),
        "embed.bias": np.zeros(m),
    }
    if pooling_mode == ATTENTION:
        raw["attn.V"] = uniform((arch.attn_hidden, m), m)
        raw["attn.w"] = uniform((1, arch.attn_hidden), arch.attn_hidden)
        head_in = m
    else:
        head_in = num_channels * m
    raw["classifier.weight"] = uniform((num_classes, head_in), head_in)
    raw["classifier.bias"] = np.zeros(num_classes)
    tensors = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in raw.items()}
    return ModelParams(arch, pooling_mode, num_channels, num_classes, image_size, tensors)


class EncoderTrace(NamedTuple):
    embedding: Tensor
    last_conv: Tensor  # post-relu activation of the last conv layer, [C2, H, W]


def encoder_trace(image, params: ModelParams) -> EncoderTrace:
    x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=params.dtype))
    if x.data.ndim == 2:
        x = ad.reshape(x, (1,) + x.shape)
    s = params.image_size
    if x.shape != (1, s, s):
        raise ShapeError(f"encoder expects a 1x{s}x{s} image, got {x.shape}")
    arch = params.arch
    p = params.tensors
    h = ad.relu(ad.conv2d(x, p["conv1.weight"], p["conv1.bias"], arch.conv1[1] // 2))
    if arch.variant == WAFER:
        h = ad.maxpool2d(h)
    a = ad.relu(ad.conv2d(h, p["conv2.weight"], p["conv2.bias"], arch.conv2[1] // 2))
    h = ad.maxpool2d(a) if arch.variant == WAFER else ad.adaptive_avg_pool(a)
    emb = ad.linear(ad.flatten(h), p["embed.weight"], p["embed.bias"])
    return EncoderTrace(emb, a)


def encoder_forward(image, params: ModelParams) -> Tensor:
    return encoder_trace(image, params).embedding


def attention_pool(embeddings: list[Tensor], V: Tensor, w: Tensor) -> tuple[Tensor, Tensor]:
    """Attention pooling: a_k = softmax_k(w . tanh(V h_k)); pooled = sum a_k h_k."""
    if not embeddings:
        raise ValueError("attention_pool needs at least one embedding")
    scores = [ad.linear(ad.tanh(ad.linear(h, V)), w) for h in embeddings]
    weights = ad.softmax(ad.concat(scores))
    pooled = ad.weighted_sum(weights, ad.stack(embeddings))
    return pooled, weights


def concat_pool(embeddings: list[Tensor], num_channels: int | None = None) -> Tensor:
    if num_channels is not None and len(embeddings) != num_channels:
        raise ShapeError(f"concat_pool expects {num_channels} channels, got {len(embeddings)}")
    return ad.concat(embeddings)


class ForwardResult(NamedTuple):
    logits: Tensor
    attention: Tensor | None
    traces: list[EncoderTrace]


def forward(images, params: ModelParams) -> ForwardResult:
    """Run the shared encoder on every channel image ([K, S, S]), pool, classify."""
    imgs = images.data if isinstance(images, Tensor) else np.asarray(images)
    if imgs.ndim != 3:
        raise ShapeError(f"forward expects [K, S, S] images, got shape {imgs.shape}")
    if imgs.shape[0] != params.num_channels:
        raise ShapeError(f"model was built for {params.num_channels} channels, sample has {imgs.shape[0]}")
    imgs = imgs.astype(params.dtype, copy=False)
    traces = [encoder_trace(Tensor(img[None]), params) for img in imgs]
    embeddings = [t.embedding for t in traces]
    p = params.tensors
    if params.pooling_mode == ATTENTION:
        pooled, weights = attention_pool(embeddings, p["attn.V"], p["attn.w"])
    else:
        pooled, weights = concat_pool(embeddings, params.num_channels), None
    logits = ad.linear(pooled, p["classifier.weight"], p["classifier.bias"])
    return ForwardResult(logits, weights, traces)


def predict(images, params: ModelParams) -> int:
    return int(np.argmax(forward(images, params).logits.data))
