"""Feature-reconstruction network: token split, dimension reduce, transformer
encoder, query-driven decoder, dimension restore, plus ablation variants.

Variants:
  * ``attn_query``   full encoder/decoder; a learned query embedding is the
                     decoder input (the mechanism that blocks the identity
                     shortcut).
  * ``no_query``     decoder consumes the encoder output instead of the
                     learned query embedding.
  * ``no_attn``      every attention block is replaced by a per-token
                     concatenation of its query and value streams followed
                     by an affine projection.
  * ``cnn_baseline`` a per-position affine+ReLU stack whose parameter count
                     is matched to the transformer within 10%.

Position and query embeddings are added to attention queries and keys
only, never to values. Layers are post-norm: residual add, then layer
normalization.

Checkpoint format ("ADTRCK01", little-endian throughout):

    magic      8 bytes "ADTRCK01"
    variant    u32 length + that many UTF-8 bytes
    config     eight u32: in_channels, token_dim, n_encoder_layers,
               n_decoder_layers, n_heads, ffn_hidden, height, width
    n_tensors  u32
    tensors    per tensor, in canonical parameter order:
               u32 name length, name bytes, u32 rank, u32 extents[rank],
               float32 payload

``forward`` is read-only on the parameters, so concurrent inference over
different samples with shared frozen parameters is safe; training mutates
parameters and must own them exclusively.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import BinaryIO

import numpy as np

from adtr import autograd as ag
from adtr.errors import AdtrError, BadMagicError, ShapeError, TruncationError
from adtr.features import FeatureMap

VARIANTS = ("attn_query", "no_attn", "no_query", "cnn_baseline")

CHECKPOINT_MAGIC = b"ADTRCK01"

# parameter roles drive both initialization and the weight-decay exclusion set
_W = "affine_weight"
_B = "affine_bias"
_LN_G = "ln_gain"
_LN_B = "ln_bias"
_EMB = "embedding"
NO_DECAY_KINDS = {_LN_G, _LN_B, _EMB}


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 32
    token_dim: int = 16
    n_encoder_layers: int = 1
    n_decoder_layers: int = 1
    n_heads: int = 2
    ffn_hidden: int = 64
    height: int = 16
    width: int = 16
    variant: str = "attn_query"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise AdtrError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.token_dim % self.n_heads != 0:
            raise AdtrError(f"token_dim {self.token_dim} not divisible by n_heads {self.n_heads}")
        for name in ("in_channels", "token_dim", "n_encoder_layers", "n_decoder_layers",
                     "n_heads", "ffn_hidden", "height", "width"):
            if getattr(self, name) < 1:
                raise AdtrError(f"{name} must be >= 1")

    @property
    def token_count(self) -> int:
        return self.height * self.width


@dataclass
class ModelParams:
    """All learnable tensors, keyed by canonical name in canonical order."""

    tensors: dict[str, ag.Tensor]
    no_decay: frozenset[str]

    def with_tensors(self, replacements: dict[str, ag.Tensor]) -> "ModelParams":
        merged = dict(self.tensors)
        merged.update(replacements)
        return ModelParams(tensors=merged, no_decay=self.no_decay)

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def _attention_spec(prefix: str, d: int, variant: str):
    if variant == "no_attn":
        return [(f"{prefix}.w", (2 * d, d), _W), (f"{prefix}.b", (d,), _B)]
    spec = []
    for kind in "qkvo":
        spec.append((f"{prefix}.w{kind}", (d, d), _W))
        spec.append((f"{prefix}.b{kind}", (d,), _B))
    return spec


def _ffn_spec(prefix: str, d: int, hidden: int):
    return [(f"{prefix}.w1", (d, hidden), _W), (f"{prefix}.b1", (hidden,), _B),
            (f"{prefix}.w2", (hidden, d), _W), (f"{prefix}.b2", (d,), _B)]


def _ln_spec(prefix: str, d: int):
    return [(f"{prefix}.g", (d,), _LN_G), (f"{prefix}.b", (d,), _LN_B)]


def params_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, role) list; fixes init, file, and update order."""
    c, d, k = config.in_channels, config.token_dim, config.token_count
    if config.variant == "cnn_baseline":
        spec = []
        widths = _cnn_widths(config)
        dims = [c] + widths + [c]
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            spec.append((f"cnn{i}.w", (din, dout), _W))
            spec.append((f"cnn{i}.b", (dout,), _B))
        return spec

    spec = [("reduce.w", (c, d), _W), ("reduce.b", (d,), _B)]
    for i in range(config.n_encoder_layers):
        spec += _attention_spec(f"enc{i}.attn", d, config.variant)
        spec += _ffn_spec(f"enc{i}.ffn", d, config.ffn_hidden)
        spec += _ln_spec(f"enc{i}.ln1", d)
        spec += _ln_spec(f"enc{i}.ln2", d)
    for i in range(config.n_decoder_layers):
        spec += _attention_spec(f"dec{i}.self", d, config.variant)
        spec += _attention_spec(f"dec{i}.cross", d, config.variant)
        spec += _ffn_spec(f"dec{i}.ffn", d, config.ffn_hidden)
        spec += _ln_spec(f"dec{i}.ln1", d)
        spec += _ln_spec(f"dec{i}.ln2", d)
        spec += _ln_spec(f"dec{i}.ln3", d)
    spec.append(("restore.w", (d, c), _W))
    spec.append(("restore.b", (c,), _B))
    spec.append(("pos_embed", (k, d), _EMB))
    if config.variant != "no_query":
        spec.append(("query_embed", (k, d), _EMB))
    return spec


def count_params(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in params_spec(config))


def _cnn_widths(config: ModelConfig) -> list[int]:
    """Hidden widths whose total parameter count matches the transformer
    of the same config within 10%. Among matching stacks the shallowest
    wins: without normalization layers, depth costs trainability. Search
    is deterministic in the config."""
    target = count_params(replace(config, variant="attn_query"))
    c = config.in_channels
    best: tuple[int, int, int] | None = None  # (n_hidden, |delta|, width)
    for width in range(8, 513, 8):
        for n_hidden in range(1, 65):
            count = (c * width + width) + (n_hidden - 1) * (width * width + width) + (width * c + c)
            delta = abs(count - target)
            if delta <= 0.05 * target and (best is None or (n_hidden, delta) < (best[0], best[1])):
                best = (n_hidden, delta, width)
    if best is None:
        raise AdtrError(f"cannot match transformer parameter budget {target} within 10%")
    n_hidden, _, width = best
    return [width] * n_hidden


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Seeded init: affine weights uniform in +/-1/sqrt(fan_in), biases 0,
    layer-norm gains 1 / biases 0, embeddings Gaussian with std 0.02."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, ag.Tensor] = {}
    no_decay = set()
    for name, shape, role in params_spec(config):
        if role == _W:
            bound = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif role == _B or role == _LN_B:
            data = np.zeros(shape)
        elif role == _LN_G:
            data = np.ones(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        if role in NO_DECAY_KINDS:
            no_decay.add(name)
        tensors[name] = ag.Tensor(data.astype(dtype), requires_grad=True)
    return ModelParams(tensors=tensors, no_decay=frozenset(no_decay))


# ---------------------------------------------------------------------------
# token layout


def tokenize(fm: FeatureMap | np.ndarray, config: ModelConfig | None = None) -> np.ndarray:
    """C x H x W map to K x C tokens, token index = h * W + w."""
    values = fm.values if isinstance(fm, FeatureMap) else np.asarray(fm)
    if config is not None and values.shape != (config.in_channels, config.height, config.width):
        raise ShapeError(f"feature map {values.shape} does not match configured "
                         f"({config.in_channels}, {config.height}, {config.width})")
    c = values.shape[0]
    return values.reshape(c, -1).T.copy()


def detokenize(tokens: np.ndarray, height: int, width: int) -> FeatureMap:
    """Inverse of tokenize."""
    k, c = tokens.shape
    if k != height * width:
        raise ShapeError(f"{k} tokens do not fill a {height}x{width} grid")
    return FeatureMap(tokens.T.reshape(c, height, width).astype(np.float32))


def map_to_tokens_t(f3: ag.Tensor) -> ag.Tensor:
    """Differentiable C x H x W -> K x C."""
    c, h, w = f3.shape
    return ag.transpose(ag.reshape(f3, (c, h * w)))


def tokens_to_map_t(tokens: ag.Tensor, height: int, width: int) -> ag.Tensor:
    """Differentiable K x C -> C x H x W."""
    k, c = tokens.shape
    if k != height * width:
        raise ShapeError(f"{k} tokens do not fill a {height}x{width} grid")
    return ag.reshape(ag.transpose(tokens), (c, height, width))


# ---------------------------------------------------------------------------
# layers


def _multi_head_attention(p: dict[str, ag.Tensor], prefix: str, n_heads: int,
                          q_in: ag.Tensor, k_in: ag.Tensor, v_in: ag.Tensor) -> ag.Tensor:
    kq, d = q_in.shape
    kk = k_in.shape[0]
    dh = d // n_heads
    q = ag.linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = ag.linear(k_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = ag.linear(v_in, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    qh = ag.transpose(ag.reshape(q, (kq, n_heads, dh)), (1, 0, 2))
    kh = ag.transpose(ag.reshape(k, (kk, n_heads, dh)), (1, 0, 2))
    vh = ag.transpose(ag.reshape(v, (kk, n_heads, dh)), (1, 0, 2))
    scores = ag.scale(ag.matmul(qh, ag.transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))
    mixed = ag.matmul(ag.softmax_rows(scores), vh)
    merged = ag.reshape(ag.transpose(mixed, (1, 0, 2)), (kq, d))
    return ag.linear(merged, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _attention_block(p: dict[str, ag.Tensor], prefix: str, config: ModelConfig,
                     q_in: ag.Tensor, k_in: ag.Tensor, v_in: ag.Tensor) -> ag.Tensor:
    if config.variant == "no_attn":
        return ag.linear(ag.concat_axis([q_in, v_in], axis=1), p[f"{prefix}.w"], p[f"{prefix}.b"])
    return _multi_head_attention(p, prefix, config.n_heads, q_in, k_in, v_in)


def _ffn(p: dict[str, ag.Tensor], prefix: str, x: ag.Tensor) -> ag.Tensor:
    hidden = ag.relu(ag.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]))
    return ag.linear(hidden, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _ln(p: dict[str, ag.Tensor], prefix: str, x: ag.Tensor) -> ag.Tensor:
    return ag.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def encoder_layer(x: ag.Tensor, params: ModelParams, config: ModelConfig,
                  layer: int, pos: ag.Tensor) -> ag.Tensor:
    """Self-attention (position added to queries and keys) then FFN,
    each with residual add and layer normalization."""
    p = params.tensors
    prefix = f"enc{layer}"
    with_pos = ag.add(x, pos)
    attended = _attention_block(p, f"{prefix}.attn", config, with_pos, with_pos, x)
    x = _ln(p, f"{prefix}.ln1", ag.add(x, attended))
    x = _ln(p, f"{prefix}.ln2", ag.add(x, _ffn(p, f"{prefix}.ffn", x)))
    return x


def decoder_layer(queries: ag.Tensor, memory: ag.Tensor, params: ModelParams,
                  config: ModelConfig, layer: int, pos: ag.Tensor, qpos: ag.Tensor) -> ag.Tensor:
    """Self-attention over queries, cross-attention into the encoder memory,
    then FFN; three residual+norm stages."""
    p = params.tensors
    prefix = f"dec{layer}"
    q_self = ag.add(queries, qpos)
    attended = _attention_block(p, f"{prefix}.self", config, q_self, q_self, queries)
    x = _ln(p, f"{prefix}.ln1", ag.add(queries, attended))
    crossed = _attention_block(p, f"{prefix}.cross", config,
                               ag.add(x, qpos), ag.add(memory, pos), memory)
    x = _ln(p, f"{prefix}.ln2", ag.add(x, crossed))
    x = _ln(p, f"{prefix}.ln3", ag.add(x, _ffn(p, f"{prefix}.ffn", x)))
    return x


def forward_tokens(tokens: ag.Tensor, params: ModelParams, config: ModelConfig) -> ag.Tensor:
    """Reconstruct K x C_in feature tokens."""
    if tokens.shape != (config.token_count, config.in_channels):
        raise ShapeError(f"tokens {tokens.shape} do not match configured "
                         f"({config.token_count}, {config.in_channels})")
    p = params.tensors

    if config.variant == "cnn_baseline":
        x = tokens
        n_layers = sum(1 for name in p if name.endswith(".w"))
        for i in range(n_layers):
            x = ag.linear(x, p[f"cnn{i}.w"], p[f"cnn{i}.b"])
            if i < n_layers - 1:
                x = ag.relu(x)
        return x

    pos = p["pos_embed"]
    x = ag.linear(tokens, p["reduce.w"], p["reduce.b"])
    for i in range(config.n_encoder_layers):
        x = encoder_layer(x, params, config, i, pos)
    memory = x
    queries = memory if config.variant == "no_query" else p["query_embed"]
    for i in range(config.n_decoder_layers):
        queries = decoder_layer(queries, memory, params, config, i, pos, pos)
    return ag.linear(queries, p["restore.w"], p["restore.b"])


def forward(fm: FeatureMap, params: ModelParams, config: ModelConfig) -> FeatureMap:
    """Reconstruction of a full feature map (inference convenience)."""
    dtype = next(iter(params.tensors.values())).dtype
    tokens = ag.Tensor(tokenize(fm, config).astype(dtype))
    out = forward_tokens(tokens, params, config)
    return detokenize(out.numpy(), config.height, config.width)


# ---------------------------------------------------------------------------
# checkpoints


def _write_u32(fh: BinaryIO, *values: int) -> None:
    fh.write(struct.pack(f"<{len(values)}I", *values))


def save_checkpoint(params: ModelParams, config: ModelConfig, path: str) -> None:
    """Write parameters in canonical order; payload is always 32-bit."""
    spec = params_spec(config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        variant = config.variant.encode()
        _write_u32(fh, len(variant))
        fh.write(variant)
        _write_u32(fh, config.in_channels, config.token_dim, config.n_encoder_layers,
                   config.n_decoder_layers, config.n_heads, config.ffn_hidden,
                   config.height, config.width)
        _write_u32(fh, len(spec))
        for name, shape, _ in spec:
            data = params.tensors[name].data
            if tuple(data.shape) != tuple(shape):
                raise ShapeError(f"parameter {name} has shape {data.shape}, expected {shape}")
            encoded = name.encode()
            _write_u32(fh, len(encoded))
            fh.write(encoded)
            _write_u32(fh, data.ndim, *data.shape)
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncationError(f"checkpoint truncated in {what}: expected {n} bytes, found {len(buf)}")
    return buf


def _read_u32(fh: BinaryIO, count: int, what: str) -> tuple[int, ...]:
    return struct.unpack(f"<{count}I", _read_exact(fh, 4 * count, what))


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r}")
        (vlen,) = _read_u32(fh, 1, "variant")
        variant = _read_exact(fh, vlen, "variant").decode()
        c, d, ne, nd, nh, ffn, h, w = _read_u32(fh, 8, "config")
        config = ModelConfig(in_channels=c, token_dim=d, n_encoder_layers=ne,
                             n_decoder_layers=nd, n_heads=nh, ffn_hidden=ffn,
                             height=h, width=w, variant=variant)
        spec = params_spec(config)
        (n_tensors,) = _read_u32(fh, 1, "tensor count")
        if n_tensors != len(spec):
            raise AdtrError(f"checkpoint lists {n_tensors} tensors, config implies {len(spec)}")
        tensors: dict[str, ag.Tensor] = {}
        no_decay = set()
        for name, shape, role in spec:
            (nlen,) = _read_u32(fh, 1, "tensor name")
            found = _read_exact(fh, nlen, "tensor name").decode()
            if found != name:
                raise AdtrError(f"checkpoint tensor {found!r} out of order, expected {name!r}")
            (rank,) = _read_u32(fh, 1, "tensor rank")
            extents = _read_u32(fh, rank, "tensor extents")
            if extents != tuple(shape):
                raise ShapeError(f"checkpoint tensor {name} has extents {extents}, expected {shape}")
            count = int(np.prod(extents))
            data = np.frombuffer(_read_exact(fh, 4 * count, f"tensor {name}"), dtype="<f4")
            tensors[name] = ag.Tensor(data.reshape(extents).copy(), requires_grad=True)
            if role in NO_DECAY_KINDS:
                no_decay.add(name)
        if fh.read(1):
            raise AdtrError("checkpoint continues past the declared tensors")
    return ModelParams(tensors=tensors, no_decay=frozenset(no_decay)), config
