"""Vision Transformer classifier on top of :mod:`pcvit.tensor`.

Linear weights are stored ``[in, out]`` and applied as ``x @ W + b``. A patch
vector is flattened channel-major, then row-major within the patch, which is
the layout of a ``[d, 3, p, p]`` convolution kernel reshaped to ``[d, 3p^2]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from pcvit import checkpoint
from pcvit import tensor as T
from pcvit.errors import ContainerError, ContractError, DimensionError
from pcvit.tensor import Tensor


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_size: int = 16
    hidden_dim: int = 768
    num_layers: int = 12
    num_heads: int = 12
    mlp_dim: int = 3072
    num_classes: int = 4
    layer_norm_eps: float = 1e-6
    post_ln: bool = False

    def __post_init__(self):
        for f in ("image_size", "patch_size", "hidden_dim", "num_layers", "num_heads", "mlp_dim", "num_classes"):
            if getattr(self, f) < 1:
                raise ContractError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.image_size % self.patch_size:
            raise ContractError(f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.hidden_dim % self.num_heads:
            raise ContractError(f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}")
        if self.layer_norm_eps <= 0:
            raise ContractError("layer_norm_eps must be positive")

    @classmethod
    def tiny(cls, **overrides) -> "ViTConfig":
        """Desk-scale config: 32px images, 16px patches, d=8, 2 heads, 2 layers."""
        base = dict(image_size=32, patch_size=16, hidden_dim=8, num_layers=2, num_heads=2, mlp_dim=16)
        base.update(overrides)
        return cls(**base)

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                continue
            if kinds[k] in ("bool", bool):
                out[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
            elif kinds[k] in ("float", float):
                out[k] = float(v)
            else:
                out[k] = int(v)
        return cls(**out)


def param_shapes(config: ViTConfig) -> dict[str, tuple]:
    """Ordered map of every parameter name to its shape."""
    d, m, c = config.hidden_dim, config.mlp_dim, config.num_classes
    shapes = {
        "patch_embed.weight": (config.patch_dim, d),
        "patch_embed.bias": (d,),
        "cls_token": (d,),
        "pos_embed": (config.num_patches + 1, d),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "mlp.fc1.weight"] = (d, m)
        shapes[p + "mlp.fc1.bias"] = (m,)
        shapes[p + "mlp.fc2.weight"] = (m, d)
        shapes[p + "mlp.fc2.bias"] = (d,)
    shapes["final_ln.gamma"] = (d,)
    shapes["final_ln.beta"] = (d,)
    shapes["head.weight"] = (d, c)
    shapes["head.bias"] = (c,)
    return shapes


HEAD_PARAMS = ("head.weight", "head.bias")


class ViTParams:
    """All learnable tensors of a :class:`ViTConfig` model, keyed by name."""

    def __init__(self, config: ViTConfig, tensors: dict[str, Tensor]):
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise DimensionError(f"parameter set mismatch; missing {missing[:3]}, unexpected {extra[:3]}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DimensionError(f"parameter {name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if t.requires_grad}

    def set_trainable(self, head_only: bool = False) -> None:
        for name, t in self.tensors.items():
            t.requires_grad = (name in HEAD_PARAMS) or not head_only

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config: ViTConfig, arrays: dict[str, np.ndarray], requires_grad: bool = True) -> "ViTParams":
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in arrays:
                raise DimensionError(f"missing parameter {name}")
            if tuple(np.shape(arrays[name])) != shape:
                raise DimensionError(f"parameter {name}: expected shape {shape}, got {tuple(np.shape(arrays[name]))}")
        return cls(config, {k: Tensor(np.array(arrays[k]), requires_grad=requires_grad, name=k) for k in expected})

    def copy(self) -> "ViTParams":
        out = ViTParams.from_arrays(self.config, self.arrays())
        for k, t in self.tensors.items():
            out.tensors[k].requires_grad = t.requires_grad
        return out

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    # bounds are absolute, as in the reference ViT initialiser
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(config: ViTConfig, seed: int = 0) -> ViTParams:
    """Truncated-normal(0.02) weights and positions; zero biases and CLS; unit gammas."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            arrays[name] = np.ones(shape)
        elif name.endswith((".bias", ".beta")) or name == "cls_token":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = _trunc_normal(rng, shape)
    return ViTParams.from_arrays(config, arrays)


# -- model pieces -------------------------------------------------------------


def patchify(images: Tensor, patch_size: int) -> Tensor:
    """``[B, C, H, W] -> [B, N, C*p*p]``, patches in row-major order."""
    if images.ndim != 4:
        raise DimensionError(f"expected [B, C, H, W] images, got {images.shape}")
    b, c, h, w = images.shape
    p = patch_size
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} is not divisible into {p}x{p} patches")
    x = images.reshape(b, c, h // p, p, w // p, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // p) * (w // p), c * p * p)


def embed(patches: Tensor, params: ViTParams) -> Tensor:
    """Project patches, prepend the CLS token and add positions: ``[B, N+1, d]``."""
    w = params["patch_embed.weight"]
    if patches.ndim != 3 or patches.shape[-1] != w.shape[0]:
        raise DimensionError(f"patch vectors {patches.shape} do not match projection {w.shape}")
    b = patches.shape[0]
    d = w.shape[1]
    tokens = patches @ w + params["patch_embed.bias"]
    cls = T.zeros((b, 1, d)) + params["cls_token"].reshape(1, 1, d)
    z = T.concat([cls, tokens], axis=1)
    if z.shape[1] != params["pos_embed"].shape[0]:
        raise DimensionError(f"{z.shape[1]} tokens but {params['pos_embed'].shape[0]} positional embeddings")
    return z + params["pos_embed"]


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k))`` over the key axis."""
    return T.softmax(T.scale(q @ k.swapaxes(-1, -2), 1.0 / math.sqrt(q.shape[-1])), axis=-1)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention on ``[B, h, T, d_k]`` tensors."""
    if q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"attention: incompatible Q {q.shape}, K {k.shape}, V {v.shape}")
    return attention_weights(q, k) @ v


def _linear(x: Tensor, params: ViTParams, prefix: str) -> Tensor:
    return x @ params[prefix + ".weight"] + params[prefix + ".bias"]


def multi_head_attention(x: Tensor, params: ViTParams, prefix: str, num_heads: int) -> Tensor:
    b, t, d = x.shape
    dk = d // num_heads

    def heads(name):
        return _linear(x, params, f"{prefix}.{name}").reshape(b, t, num_heads, dk).transpose(0, 2, 1, 3)

    out = attention(heads("q"), heads("k"), heads("v"))
    out = out.transpose(0, 2, 1, 3).reshape(b, t, d)
    return _linear(out, params, f"{prefix}.o")


def feed_forward(x: Tensor, params: ViTParams, prefix: str) -> Tensor:
    return _linear(T.gelu(_linear(x, params, prefix + ".fc1")), params, prefix + ".fc2")


def _ln(x: Tensor, params: ViTParams, prefix: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[prefix + ".gamma"], params[prefix + ".beta"], eps)


def encoder_layer(z: Tensor, params: ViTParams, index: int, config: ViTConfig) -> Tensor:
    """One transformer block.

    Pre-LN (default): ``u = z + MHSA(LN1(z)); out = u + FFN(LN2(u))``.
    Post-LN (``config.post_ln``): ``u = LN1(z + MHSA(z)); out = LN2(u + FFN(u))``.
    """
    p = f"layers.{index}"
    eps = config.layer_norm_eps
    if config.post_ln:
        u = _ln(z + multi_head_attention(z, params, p + ".attn", config.num_heads), params, p + ".ln1", eps)
        return _ln(u + feed_forward(u, params, p + ".mlp"), params, p + ".ln2", eps)
    u = z + multi_head_attention(_ln(z, params, p + ".ln1", eps), params, p + ".attn", config.num_heads)
    return u + feed_forward(_ln(u, params, p + ".ln2", eps), params, p + ".mlp")


def _as_images(images, config: ViTConfig) -> Tensor:
    images = images if isinstance(images, Tensor) else Tensor(images)
    s = config.image_size
    if images.ndim != 4 or images.shape[1:] != (3, s, s):
        raise DimensionError(f"expected image batch [B, 3, {s}, {s}], got {images.shape}")
    return images


def forward_logits(images, params: ViTParams, config: ViTConfig | None = None) -> Tensor:
    """Class logits ``[B, C]`` (pre-softmax head output)."""
    config = config or params.config
    z = embed(patchify(_as_images(images, config), config.patch_size), params)
    for i in range(config.num_layers):
        z = encoder_layer(z, params, i, config)
    cls = _ln(z[:, 0, :], params, "final_ln", config.layer_norm_eps)
    return _linear(cls, params, "head")


def forward(images, params: ViTParams, config: ViTConfig | None = None) -> Tensor:
    """Class probabilities ``[B, C]``; every row sums to one."""
    return T.softmax(forward_logits(images, params, config), axis=-1)


# -- persistence --------------------------------------------------------------


def save_params(path, params: ViTParams, metadata: dict | None = None) -> None:
    """Write parameters and their config to a ``.pcvt`` container."""
    meta = {"config": json.dumps(params.config.to_dict(), sort_keys=True)}
    meta.update(metadata or {})
    checkpoint.save(path, params.arrays(), meta)


def load_params(path, config: ViTConfig | None = None) -> ViTParams:
    """Load a checkpoint written by :func:`save_params`.

    ``config`` overrides the one stored in the file; tensors are checked
    against it in declaration order and the first mismatch is reported.
    """
    tensors, meta = checkpoint.load(path)
    if config is None:
        if "config" not in meta:
            raise ContainerError(f"{path}: no model config in checkpoint metadata")
        config = ViTConfig.from_dict(json.loads(meta["config"]))
    return ViTParams.from_arrays(config, tensors)
