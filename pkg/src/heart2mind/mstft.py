"""Dual-path temporal/frequency transformer for RRI window classification.

Pipeline: noise-augmented conv embedding + sinusoidal positional encoding,
a causal dilated-convolution path with stochastic skips, a separable-conv
spectral path, cross-attention fusion of the two, a gated self-attention
block, and a pooled classifier head ending in a sigmoid.

All tensors are batch-first [B, L, C]. Eval-mode forwards are pure
functions of (parameters, input); train mode consumes an explicit RNG.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ChecksumError, ConfigError, ShapeError, UnsupportedVersionError

CHECKPOINT_MAGIC = b"H2MC"
CHECKPOINT_VERSION = 1


@dataclass
class Hyperparams:
    """Architecture and optimization knobs; defaults are the tuned full-scale set."""

    noise_var: float = 0.1        # gaussian augmentation variance
    pos_wavelength: float = 1e4   # positional-encoding wavelength base
    embed_dim: int = 64           # conv embedding channels
    n_temporal: int = 2           # dilated causal blocks (dilation 2^i)
    skip_survival: float = 0.8    # stochastic residual survival probability
    n_frequency: int = 2          # separable-conv spectral blocks
    proj_dim: int = 1024          # cross-attention projection width
    key_dim: int = 512            # total attention key width (split across heads)
    heads: int = 16
    aug_strength: float = 0.3     # probability a training window gets noise
    learning_rate: float = 1e-5
    weight_decay: float = 1e-5
    window_len: int = 300
    ffn_expansion: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        # rates/strengths may legally be zero; structural sizes must be positive
        rates = {"noise_var", "aug_strength", "weight_decay", "dropout", "skip_survival"}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in rates:
                if value < 0:
                    raise ConfigError(f"hyperparameter {f.name} must be >= 0, got {value}")
            elif value <= 0:
                raise ConfigError(f"hyperparameter {f.name} must be positive, got {value}")
        if not self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not self.skip_survival <= 1.0:
            raise ConfigError("skip_survival must lie in [0, 1]")
        if self.embed_dim % 2 != 0:
            raise ConfigError("embed_dim must be even for sin/cos positional encoding")
        if self.proj_dim % self.heads != 0:
            raise ConfigError("proj_dim must be divisible by heads")
        if self.key_dim % self.heads != 0:
            raise ConfigError("key_dim must be divisible by heads")
        if self.embed_dim % (2 ** (self.n_temporal - 1)) != 0:
            raise ConfigError("embed_dim must survive per-block channel halving")

    @classmethod
    def desk(cls, **overrides) -> "Hyperparams":
        """Small configuration for CPU-budget runs (same architecture)."""
        base = dict(embed_dim=16, proj_dim=32, key_dim=16, heads=4,
                    ffn_expansion=2, learning_rate=1e-3)
        base.update(overrides)
        return cls(**base)

    @property
    def temporal_channels(self) -> list[int]:
        return [self.embed_dim // (2 ** i) for i in range(self.n_temporal)]

    @property
    def fused_dim(self) -> int:
        return 3 * self.proj_dim


def norm_groups(channels: int) -> int:
    """Largest power-of-two group count <= 8 that keeps >= 4 channels per group."""
    g = 1
    while g < 8 and channels % (2 * g) == 0 and channels // (2 * g) >= 4:
        g *= 2
    return g


def positional_encoding(length: int, dim: int, wavelength: float) -> np.ndarray:
    """Interleaved sin/cos position matrix [length, dim]."""
    if dim % 2 != 0:
        raise ConfigError("positional encoding dimension must be even")
    t = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = t / wavelength ** (2.0 * k / dim)
    enc = np.empty((length, dim), dtype=np.float64)
    enc[:, 0::2] = np.sin(angle)
    enc[:, 1::2] = np.cos(angle)
    return enc


@dataclass
class ForwardTrace:
    """Everything a single forward exposes to callers beyond the probability."""

    prob: np.ndarray                       # [B], strictly inside (0,1)
    prob_node: Tensor                      # [B,1] graph node for the loss
    logit_node: Tensor                     # [B,1] pre-sigmoid score
    attention: dict[str, Tensor] = field(default_factory=dict)
    activations: dict[str, Tensor] = field(default_factory=dict)
    internal_len: int = 0


class MstftModel:
    """Parameter container plus the forward graph builder."""

    def __init__(self, hyper: Hyperparams, seed: int = 0, dtype=np.float64):
        self.hyper = hyper
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._build()

    # -- parameter construction -------------------------------------------------
    def _register(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ConfigError(f"parameter '{name}' registered twice")
        self.params[name] = Tensor(array.astype(self.dtype), requires_grad=True)

    def _uniform(self, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        limit = 1.0 / np.sqrt(fan_in)
        return self.rng.uniform(-limit, limit, size=shape)

    def _conv(self, name: str, k: int, cin: int, cout: int) -> None:
        self._register(f"{name}.w", self._uniform((k, cin, cout), k * cin))
        self._register(f"{name}.b", np.zeros(cout))

    def _linear(self, name: str, din: int, dout: int, bias: bool = True) -> None:
        self._register(f"{name}.w", self._uniform((din, dout), din))
        if bias:
            self._register(f"{name}.b", np.zeros(dout))

    def _norm_affine(self, name: str, channels: int) -> None:
        self._register(f"{name}.gamma", np.ones(channels))
        self._register(f"{name}.beta", np.zeros(channels))

    def _attention(self, name: str, d_model: int, d_out: int) -> None:
        dk = self.hyper.key_dim
        for p in ("w_q", "w_k", "w_v"):
            self._register(f"{name}.{p}", self._uniform((d_model, dk), d_model))
        self._register(f"{name}.w_o", self._uniform((dk, d_out), dk))

    def _build(self) -> None:
        h = self.hyper
        self._conv("embed.conv", 3, 1, h.embed_dim)
        chans = h.temporal_channels
        prev = h.embed_dim
        for i, c in enumerate(chans):
            self._conv(f"temporal.{i}.conv", 3, prev, c)
            self._norm_affine(f"temporal.{i}.norm", c)
            if prev != c:
                self._linear(f"temporal.{i}.skip_proj", prev, c, bias=False)
            prev = c
        c_out = chans[-1]
        self._conv("freq.embed", 3, h.embed_dim, h.embed_dim)
        for j in range(h.n_frequency):
            self._register(f"freq.{j}.depthwise.w", self._uniform((3, h.embed_dim), 3))
            self._conv(f"freq.{j}.pointwise", 1, h.embed_dim, h.embed_dim)
            self._norm_affine(f"freq.{j}.norm", h.embed_dim)
        self._linear("freq.proj", h.embed_dim, c_out, bias=False)

        self._linear("fusion.proj_t", c_out, h.proj_dim, bias=False)
        self._linear("fusion.proj_f", c_out, h.proj_dim, bias=False)
        self._attention("fusion.attn", h.proj_dim, h.proj_dim)
        self._norm_affine("fusion.norm", h.fused_dim)

        self._attention("selfattn.attn", h.fused_dim, h.fused_dim)
        self._linear("selfattn.gate", h.fused_dim, h.fused_dim)
        self._register("selfattn.alpha", np.full(h.fused_dim, 0.01))
        self._linear("selfattn.ffn1", h.fused_dim, h.ffn_expansion * h.fused_dim)
        self._linear("selfattn.ffn2", h.ffn_expansion * h.fused_dim, h.fused_dim)
        self._norm_affine("selfattn.norm", h.fused_dim)

        head_in = 2 * h.fused_dim
        hidden = h.proj_dim
        self._norm_affine("head.batchnorm", head_in)
        self.buffers["head.batchnorm.mean"] = np.zeros(head_in)
        self.buffers["head.batchnorm.var"] = np.ones(head_in)
        self._linear("head.dense1", head_in, hidden)
        self._linear("head.attn_gate", hidden, hidden)
        self._linear("head.residual", head_in, hidden)
        self._norm_affine("head.norm", hidden)
        self._linear("head.out", hidden, 1)

        self._pos = positional_encoding(h.window_len, h.embed_dim, h.pos_wavelength)

    # -- bookkeeping --------------------------------------------------------------
    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, in registration order (checkpoint layout)."""
        out = {name: p.data for name, p in self.params.items()}
        out.update({f"buffer:{k}": v for k, v in self.buffers.items()})
        return out

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, arr in self.state_arrays().items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return digest.hexdigest()

    # -- forward pieces -------------------------------------------------------------
    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def embed(self, x: np.ndarray, mode: str, rng: np.random.Generator) -> Tensor:
        h = self.hyper
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != h.window_len:
            raise ShapeError(f"window length {x.shape[1]} != expected {h.window_len}")
        x = x.astype(self.dtype)
        if mode == "train" and h.noise_var > 0 and rng.random() < h.aug_strength:
            x = x + rng.normal(0.0, np.sqrt(h.noise_var), size=x.shape).astype(self.dtype)
        xt = Tensor(x[:, :, None])
        embedded = ad.conv1d(xt, self._p("embed.conv.w"), self._p("embed.conv.b"),
                             causal=True)
        return ad.add(embedded, Tensor(self._pos.astype(self.dtype)))

    def stochastic_skip(self, x: Tensor, f_x: Tensor, mode: str,
                        rng: np.random.Generator) -> Tensor:
        if x.shape != f_x.shape:
            raise ShapeError(f"skip shapes differ: {x.shape} vs {f_x.shape}")
        p_s = self.hyper.skip_survival
        if mode == "train":
            return ad.add(f_x, x) if rng.random() < p_s else x
        return ad.add(ad.mul(f_x, Tensor(np.array(p_s, dtype=self.dtype))), x)

    def temporal_path(self, x_emb: Tensor, mode: str, rng: np.random.Generator,
                      trace: ForwardTrace) -> Tensor:
        z = x_emb
        for i, c in enumerate(self.hyper.temporal_channels):
            conv = ad.conv1d(z, self._p(f"temporal.{i}.conv.w"),
                             self._p(f"temporal.{i}.conv.b"),
                             dilation=2 ** i, causal=True)
            f_x = ad.group_norm(ad.gelu(conv), self._p(f"temporal.{i}.norm.gamma"),
                                self._p(f"temporal.{i}.norm.beta"), groups=norm_groups(c))
            skip_in = z
            if z.shape[-1] != c:
                skip_in = ad.matmul(z, self._p(f"temporal.{i}.skip_proj.w"))
            z = self.stochastic_skip(skip_in, f_x, mode, rng)
            trace.activations[f"temporal.{i}.out"] = z.retain_grad()
        return z

    def frequency_path(self, x_emb: Tensor, target_len: int) -> Tensor:
        h = self.hyper
        z = ad.conv1d(x_emb, self._p("freq.embed.w"), self._p("freq.embed.b"))
        for j in range(h.n_frequency):
            sep = ad.separable_conv1d(z, self._p(f"freq.{j}.depthwise.w"),
                                      self._p(f"freq.{j}.pointwise.w"),
                                      self._p(f"freq.{j}.pointwise.b"))
            z = ad.group_norm(ad.gelu(sep), self._p(f"freq.{j}.norm.gamma"),
                              self._p(f"freq.{j}.norm.beta"),
                              groups=norm_groups(h.embed_dim))
        z = ad.adaptive_avg_pool(z, target_len)
        return ad.matmul(z, self._p("freq.proj.w"))

    def cross_fusion(self, z_t: Tensor, z_f: Tensor, trace: ForwardTrace) -> Tensor:
        if z_t.shape != z_f.shape:
            raise ShapeError(f"fusion inputs differ: {z_t.shape} vs {z_f.shape}")
        h_t = ad.matmul(z_t, self._p("fusion.proj_t.w"))
        h_f = ad.matmul(z_f, self._p("fusion.proj_f.w"))
        fused, weights = ad.attention(
            h_t, h_f, h_f, heads=self.hyper.heads,
            w_q=self._p("fusion.attn.w_q"), w_k=self._p("fusion.attn.w_k"),
            w_v=self._p("fusion.attn.w_v"), w_o=self._p("fusion.attn.w_o"))
        trace.attention["fusion"] = weights
        out = ad.layer_norm(ad.concat([fused, h_t, h_f], axis=-1),
                            self._p("fusion.norm.gamma"), self._p("fusion.norm.beta"))
        trace.activations["fusion.out"] = out.retain_grad()
        return out

    def self_attention_block(self, f: Tensor, mode: str, rng: np.random.Generator,
                             trace: ForwardTrace) -> Tensor:
        attn, weights = ad.attention(
            f, f, f, heads=self.hyper.heads,
            w_q=self._p("selfattn.attn.w_q"), w_k=self._p("selfattn.attn.w_k"),
            w_v=self._p("selfattn.attn.w_v"), w_o=self._p("selfattn.attn.w_o"))
        trace.attention["self_attention"] = weights
        gate = ad.sigmoid(ad.linear(attn, self._p("selfattn.gate.w"),
                                    self._p("selfattn.gate.b")))
        gated = ad.mul(attn, gate)
        f_prime = ad.add(f, ad.mul(gated, self._p("selfattn.alpha")))
        inner = ad.gelu(ad.linear(f_prime, self._p("selfattn.ffn1.w"),
                                  self._p("selfattn.ffn1.b")))
        ffn = ad.linear(inner, self._p("selfattn.ffn2.w"), self._p("selfattn.ffn2.b"))
        if mode == "train" and self.hyper.dropout > 0:
            ffn = ad.dropout(ffn, self.hyper.dropout, rng)
        out = ad.layer_norm(ad.add(f_prime, ffn), self._p("selfattn.norm.gamma"),
                            self._p("selfattn.norm.beta"))
        trace.activations["self_attention.out"] = out.retain_grad()
        return out

    def classifier_head(self, f: Tensor, mode: str) -> tuple[Tensor, Tensor]:
        pooled = ad.concat([ad.global_avg_pool(f), ad.global_max_pool(f)], axis=-1)
        h_norm = ad.batch_norm(pooled, self._p("head.batchnorm.gamma"),
                               self._p("head.batchnorm.beta"),
                               {"mean": self.buffers["head.batchnorm.mean"],
                                "var": self.buffers["head.batchnorm.var"]},
                               training=(mode == "train" and pooled.shape[0] > 1))
        h1 = ad.gelu(ad.linear(h_norm, self._p("head.dense1.w"), self._p("head.dense1.b")))
        a = ad.sigmoid(ad.linear(h1, self._p("head.attn_gate.w"), self._p("head.attn_gate.b")))
        h_att = ad.mul(h1, a)
        h_res = ad.linear(h_norm, self._p("head.residual.w"), self._p("head.residual.b"))
        h_out = ad.group_norm(ad.add(h_att, h_res), self._p("head.norm.gamma"),
                              self._p("head.norm.beta"),
                              groups=norm_groups(self.hyper.proj_dim))
        logit = ad.linear(h_out, self._p("head.out.w"), self._p("head.out.b"))
        return logit, ad.sigmoid(logit)

    def forward(self, window: np.ndarray, mode: str = "eval",
                rng: np.random.Generator | None = None) -> ForwardTrace:
        """Run the full network on one window or a [B, T] batch."""
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode '{mode}'")
        rng = rng if rng is not None else self.rng
        trace = ForwardTrace(prob=np.empty(0), prob_node=None, logit_node=None)  # type: ignore[arg-type]
        x_emb = self.embed(np.asarray(window), mode, rng)
        z_t = self.temporal_path(x_emb, mode, rng, trace)
        z_f = self.frequency_path(x_emb, target_len=z_t.shape[1])
        fused = self.cross_fusion(z_t, z_f, trace)
        enhanced = self.self_attention_block(fused, mode, rng, trace)
        logit, prob = self.classifier_head(enhanced, mode)
        trace.logit_node = logit
        trace.prob_node = prob
        trace.prob = prob.data.reshape(-1).copy()
        trace.internal_len = z_t.shape[1]
        return trace


def _batch_norm_state(model: MstftModel) -> dict:
    return {"mean": model.buffers["head.batchnorm.mean"],
            "var": model.buffers["head.batchnorm.var"]}


# -- checkpointing ------------------------------------------------------------------

def save_checkpoint(model: MstftModel, path) -> None:
    """Manifest-plus-payload container; payload is little-endian raw floats."""
    entries = []
    payload = bytearray()
    for name, arr in model.state_arrays().items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8"})
        payload.extend(raw)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparams": asdict(model.hyper),
        "seed": model.seed,
        "parameters": entries,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def read_manifest(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise UnsupportedVersionError("not a model checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(mlen).decode())


def load_checkpoint(path) -> MstftModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise UnsupportedVersionError("not a model checkpoint file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode())
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(
                f"checkpoint format {manifest.get('format_version')} unsupported")
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ChecksumError("checkpoint payload does not match manifest checksum")
    hyper = Hyperparams(**manifest["hyperparams"])
    model = MstftModel(hyper, seed=manifest.get("seed", 0))
    offset = 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype=entry["dtype"], count=count,
                            offset=offset).reshape(shape).astype(np.float64)
        offset += count * 8
        name = entry["name"]
        if name.startswith("buffer:"):
            model.buffers[name[len("buffer:"):]] = arr.copy()
        else:
            model.params[name] = Tensor(arr.copy(), requires_grad=True)
    return model
