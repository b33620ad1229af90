"""Bifocal masking-attention network for SSVEP trials.

Two token streams are built from each trial:

* native (NA): the per-channel z-scored time series, one token per sample;
* symmetric/antisymmetric (SA): the complex spectrum, one token per
  real or imaginary frequency bin.

Each stream runs weighted multi-channel filtering, sinusoidal positional
encoding and masking multi-head self-attention encoder layers. The two token
sequences are concatenated and classified by a two-layer MLP head.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import FormatError, ParameterError, ShapeError, SizeError
from .nn import Tensor, as_tensor
from .nn.functional import positional_encoding
from .spectral import SpectralConfig, complex_spectrum_array

STREAMS = ("na", "sa")
ABLATION_FLAGS = {
    "sa": "sa_stream_enabled",
    "na": "na_stream_enabled",
    "wmf": "wmf_enabled",
    "pe": "pe_enabled",
    "mask": "mask_enabled",
}


@dataclass(frozen=True)
class BimaConfig:
    num_channels: int
    num_classes: int
    wmf_kernels: int | None = None
    num_heads: int = 2
    encoder_layers: int = 1
    ff_hidden: int | None = None
    mlp_hidden: int | None = None
    dropout_p: float = 0.5
    mask_enabled: bool = True
    pe_enabled: bool = True
    wmf_enabled: bool = True
    na_stream_enabled: bool = True
    sa_stream_enabled: bool = True
    mask_penalty: float = -1e9
    ln_eps: float = 1e-5

    def __post_init__(self):
        set_ = object.__setattr__
        if self.wmf_kernels is None:
            set_(self, "wmf_kernels", 2 * self.num_channels)
        if self.ff_hidden is None:
            set_(self, "ff_hidden", 2 * self.wmf_kernels)
        if self.mlp_hidden is None:
            set_(self, "mlp_hidden", 6 * self.num_classes)
        if self.num_channels < 1:
            raise ParameterError("num_channels must be >= 1")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if self.num_heads < 1 or self.wmf_kernels % self.num_heads:
            raise ParameterError(
                f"wmf_kernels ({self.wmf_kernels}) must be divisible by num_heads ({self.num_heads})"
            )
        if self.pe_enabled and self.wmf_kernels % 2:
            raise ParameterError("positional encoding needs an even token width (wmf_kernels)")
        if not self.wmf_enabled and self.wmf_kernels % self.num_channels:
            raise ParameterError("without WMF, wmf_kernels must be a multiple of num_channels")
        if not (self.na_stream_enabled or self.sa_stream_enabled):
            raise ParameterError("at least one stream (na or sa) must be enabled")
        if self.encoder_layers < 0 or self.ff_hidden < 1 or self.mlp_hidden < 1:
            raise ParameterError("encoder_layers >= 0, ff_hidden >= 1 and mlp_hidden >= 1 required")
        if not 0 <= self.dropout_p < 1:
            raise ParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not self.mask_penalty < 0:
            raise ParameterError("mask_penalty must be negative")

    @property
    def d_k(self) -> int:
        return self.wmf_kernels // self.num_heads

    def enabled_streams(self) -> tuple[str, ...]:
        return tuple(s for s in STREAMS if getattr(self, f"{s}_stream_enabled"))

    def ablated(self, disable) -> "BimaConfig":
        """Copy with the named components switched off (keys of ABLATION_FLAGS)."""
        disable = set(disable)
        unknown = disable - set(ABLATION_FLAGS)
        if unknown:
            raise ParameterError(f"unknown ablation(s) {sorted(unknown)}; choose from {sorted(ABLATION_FLAGS)}")
        if {"na", "sa"} <= disable:
            raise ParameterError("cannot disable both the na and sa streams")
        return replace(self, **{ABLATION_FLAGS[d]: False for d in disable})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "BimaConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown BimaConfig field(s): {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Array-level building blocks
# ---------------------------------------------------------------------------


def wmf_forward(X, weights):
    """Weighted multi-channel filter: row i of the output is ``weights[i] @ X``.

    X is (C, T), weights is (N, C); returns (N, T).
    """
    X = np.asarray(X, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or weights.ndim != 2 or weights.shape[1] != X.shape[0]:
        raise ShapeError(f"wmf: input {X.shape} does not match kernels {weights.shape}")
    return weights @ X


def zscore_channels(trials):
    """Per-channel z-score over time; constant channels map to zeros."""
    trials = np.asarray(trials, dtype=np.float64)
    mean = trials.mean(axis=-1, keepdims=True)
    std = trials.std(axis=-1, keepdims=True)
    std = np.where(std > 0, std, 1.0)
    return (trials - mean) / std


def stream_token_counts(cfg: BimaConfig, num_samples: int, fs: float, spectral: SpectralConfig):
    t_na = num_samples if cfg.na_stream_enabled else 0
    t_sa = 2 * spectral.num_bins(fs) if cfg.sa_stream_enabled else 0
    return t_na, t_sa


def prepare_inputs(trials, fs, cfg: BimaConfig, spectral: SpectralConfig):
    """Token-major stream inputs for a batch of trials (B, C, T).

    Returns ``{"na": (B, T, C), "sa": (B, 2F, C)}`` for the enabled streams.
    The SA stream consumes the raw trial; the NA stream its z-scored copy.
    """
    trials = np.asarray(trials, dtype=np.float64)
    if trials.ndim != 3 or trials.shape[1] != cfg.num_channels:
        raise ShapeError(f"expected trials of shape (B, {cfg.num_channels}, T), got {trials.shape}")
    out = {}
    if cfg.na_stream_enabled:
        out["na"] = np.ascontiguousarray(zscore_channels(trials).transpose(0, 2, 1))
    if cfg.sa_stream_enabled:
        out["sa"] = np.ascontiguousarray(complex_spectrum_array(trials, fs, spectral).transpose(0, 2, 1))
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: BimaConfig, num_samples: int, fs: float, spectral: SpectralConfig, seed=0) -> nn.ParamStore:
    """Glorot-uniform weights, zero biases, unit/zero layer-norm affine."""
    rng = np.random.default_rng(seed)
    C, N, K = cfg.num_channels, cfg.wmf_kernels, cfg.num_classes
    H, ff = cfg.mlp_hidden, cfg.ff_hidden
    p = nn.ParamStore()

    def ln(name, d):
        p.add(f"{name}.gamma", np.ones(d))
        p.add(f"{name}.beta", np.zeros(d))

    def lin(name, din, dout, bias=True):
        p.add(f"{name}.weight", _glorot(rng, din, dout, (din, dout)))
        if bias:
            p.add(f"{name}.bias", np.zeros(dout))

    for s in cfg.enabled_streams():
        if cfg.wmf_enabled:
            p.add(f"{s}.wmf.weight", _glorot(rng, C, N, (N, C)))
        ln(f"{s}.wmf.ln", N)
        for layer in range(cfg.encoder_layers):
            e = f"{s}.enc{layer}"
            lin(f"{e}.wq", N, N, bias=False)
            lin(f"{e}.wk", N, N, bias=False)
            lin(f"{e}.wv", N, N, bias=False)
            lin(f"{e}.wo", N, N)
            ln(f"{e}.ln1", N)
            lin(f"{e}.ff1", N, ff)
            lin(f"{e}.ff2", ff, N)
            ln(f"{e}.ln2", N)
    t_na, t_sa = stream_token_counts(cfg, num_samples, fs, spectral)
    lin("head.fc1", (t_na + t_sa) * N, H)
    ln("head.ln", H)
    lin("head.fc2", H, K)
    return p


# ---------------------------------------------------------------------------
# Tensor-level forward pass
# ---------------------------------------------------------------------------


class _Dropper:
    def __init__(self, p, training, rng):
        self.p, self.training, self.rng = p, training, rng

    def __call__(self, x):
        return nn.dropout(x, self.p, self.training, self.rng)


def wmf_block(tokens, params, stream, cfg: BimaConfig, drop) -> Tensor:
    """(B, T, C) tokens -> (B, T, N): channel filter, LayerNorm, GELU, dropout."""
    tokens = as_tensor(tokens)
    if cfg.wmf_enabled:
        x = nn.channel_mix(tokens, params[f"{stream}.wmf.weight"])
    else:
        # fixed replication: each input channel repeated N/C times
        x = Tensor(np.repeat(tokens.data, cfg.wmf_kernels // cfg.num_channels, axis=-1))
    x = nn.layer_norm(x, params[f"{stream}.wmf.ln.gamma"], params[f"{stream}.wmf.ln.beta"], cfg.ln_eps)
    return drop(nn.gelu(x))


def mhsa_encoder_forward(X, params, prefix, cfg: BimaConfig, training=False, rng=None, weights_out=None) -> Tensor:
    """One post-norm encoder layer on token-major input (T, N) or (B, T, N).

    Masking multi-head self-attention with residual + LayerNorm, then a
    linear-GELU-dropout-linear feed-forward with residual + LayerNorm.
    Dropout is also applied to each residual branch.
    """
    X = as_tensor(X)
    single = X.ndim == 2
    if single:
        X = nn.reshape(X, (1,) + X.shape)
    if X.shape[-1] != cfg.wmf_kernels:
        raise ShapeError(f"encoder expects token width {cfg.wmf_kernels}, got {X.shape[-1]}")
    drop = _Dropper(cfg.dropout_p, training, rng)
    P = lambda n: params[f"{prefix}.{n}"]
    q = nn.linear(X, P("wq.weight"))
    k = nn.linear(X, P("wk.weight"))
    v = nn.linear(X, P("wv.weight"))
    a = nn.multi_head_attention(q, k, v, cfg.num_heads, cfg.mask_enabled, cfg.mask_penalty, weights_out)
    a = drop(nn.linear(a, P("wo.weight"), P("wo.bias")))
    x = nn.layer_norm(nn.add(X, a), P("ln1.gamma"), P("ln1.beta"), cfg.ln_eps)
    h = nn.gelu(nn.linear(x, P("ff1.weight"), P("ff1.bias")))
    h = drop(nn.linear(drop(h), P("ff2.weight"), P("ff2.bias")))
    out = nn.layer_norm(nn.add(x, h), P("ln2.gamma"), P("ln2.beta"), cfg.ln_eps)
    if single:
        out = nn.reshape(out, out.shape[1:])
    return out


def stream_forward(tokens, params, stream, cfg: BimaConfig, training=False, rng=None, weights_out=None) -> Tensor:
    drop = _Dropper(cfg.dropout_p, training, rng)
    x = wmf_block(tokens, params, stream, cfg, drop)
    if cfg.pe_enabled:
        x = nn.add_constant(x, positional_encoding(x.shape[-2], x.shape[-1]))
    for layer in range(cfg.encoder_layers):
        x = mhsa_encoder_forward(x, params, f"{stream}.enc{layer}", cfg, training, rng, weights_out)
    return x


def fuse_tokens(na_tokens, sa_tokens) -> Tensor:
    """Concatenate token sequences along the token axis, native tokens first.

    Either argument may be None (disabled stream).
    """
    parts = [as_tensor(t) for t in (na_tokens, sa_tokens) if t is not None]
    if not parts:
        raise ShapeError("fuse_tokens needs at least one stream")
    if len(parts) == 1:
        return parts[0]
    a, b = parts
    if a.ndim != b.ndim or a.shape[-1] != b.shape[-1] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"cannot fuse token blocks of shapes {a.shape} and {b.shape}")
    return nn.concat(parts, axis=-2)


def mlp_head_forward(fused, params, cfg: BimaConfig, training=False, rng=None) -> Tensor:
    """Flatten (row-major) -> FC1 -> LayerNorm -> GELU -> dropout -> FC2 -> logits."""
    fused = as_tensor(fused)
    single = fused.ndim == 2
    batch = 1 if single else fused.shape[0]
    width = int(np.prod(fused.shape[-2:]))
    w1 = params["head.fc1.weight"]
    if w1.shape[0] != width:
        raise ShapeError(f"head expects {w1.shape[0]} flattened features, got {fused.shape[-2:]} = {width}")
    x = nn.reshape(fused, (batch, width))
    h = nn.linear(x, w1, params["head.fc1.bias"])
    h = nn.layer_norm(h, params["head.ln.gamma"], params["head.ln.beta"], cfg.ln_eps)
    h = nn.dropout(nn.gelu(h), cfg.dropout_p, training, rng)
    logits = nn.linear(h, params["head.fc2.weight"], params["head.fc2.bias"])
    if single:
        logits = nn.reshape(logits, (cfg.num_classes,))
    return logits


def forward_tokens(inputs: dict, params, cfg: BimaConfig, training=False, rng=None, weights_out=None) -> Tensor:
    """Logits (B, K) from prepared stream inputs (see ``prepare_inputs``)."""
    streams = {
        s: stream_forward(inputs[s], params, s, cfg, training, rng, weights_out)
        for s in cfg.enabled_streams()
    }
    fused = fuse_tokens(streams.get("na"), streams.get("sa"))
    return mlp_head_forward(fused, params, cfg, training, rng)


# ---------------------------------------------------------------------------
# Model wrapper and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class BimaModel:
    """Configuration, input geometry and parameters of one network instance."""

    config: BimaConfig
    spectral: SpectralConfig
    sampling_rate_hz: float
    num_samples: int
    params: nn.ParamStore
    seed: int = 0

    @classmethod
    def create(cls, config: BimaConfig, sampling_rate_hz, num_samples, spectral=None, seed=0) -> "BimaModel":
        spectral = spectral or SpectralConfig()
        if config.sa_stream_enabled:
            spectral.check(sampling_rate_hz, num_samples)
        params = init_params(config, num_samples, sampling_rate_hz, spectral, seed)
        return cls(config, spectral, float(sampling_rate_hz), int(num_samples), params, int(seed))

    def token_counts(self):
        return stream_token_counts(self.config, self.num_samples, self.sampling_rate_hz, self.spectral)

    def prepare(self, trials):
        trials = np.asarray(trials, dtype=np.float64)
        if trials.shape[-1] != self.num_samples:
            raise ShapeError(f"model expects {self.num_samples} samples per trial, got {trials.shape[-1]}")
        return prepare_inputs(trials, self.sampling_rate_hz, self.config, self.spectral)

    def forward(self, trials, training=False, rng=None) -> Tensor:
        return forward_tokens(self.prepare(trials), self.params, self.config, training, rng)

    def logits(self, trials, batch_size=64) -> np.ndarray:
        """Inference logits (B, K), evaluated in chunks."""
        trials = np.asarray(trials, dtype=np.float64)
        out = [self.forward(trials[i : i + batch_size]).data for i in range(0, len(trials), batch_size)]
        return np.concatenate(out, axis=0)

    def predict(self, trials, batch_size=64) -> np.ndarray:
        return np.argmax(self.logits(trials, batch_size), axis=-1)


def model_forward(trial, model: BimaModel, training=False, rng=None) -> np.ndarray:
    """Logits for one trial (C, T) -> (K,) or a batch (B, C, T) -> (B, K)."""
    trial = np.asarray(trial, dtype=np.float64)
    single = trial.ndim == 2
    batch = trial[None] if single else trial
    logits = model.forward(batch, training, rng).data
    return logits[0] if single else logits


CHECKPOINT_FORMAT = "BIMA-CKPT"
CHECKPOINT_VERSION = 1


def encode_checkpoint(model: BimaModel) -> bytes:
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "spectral": asdict(model.spectral),
        "sampling_rate_hz": model.sampling_rate_hz,
        "num_samples": model.num_samples,
        "seed": model.seed,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in model.params.items()],
    }
    head = (json.dumps(manifest, separators=(",", ":")) + "\n").encode("utf-8")
    payload = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in model.params.values())
    return head + payload


def decode_checkpoint(raw: bytes) -> BimaModel:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("checkpoint manifest is not newline-terminated")
    try:
        m = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint manifest is not valid JSON: {exc}") from None
    if not isinstance(m, dict) or m.get("format") != CHECKPOINT_FORMAT or m.get("version") != CHECKPOINT_VERSION:
        raise FormatError("not a version-1 BIMA-CKPT checkpoint")
    for key in ("config", "spectral", "sampling_rate_hz", "num_samples", "seed", "params"):
        if key not in m:
            raise FormatError(f"checkpoint manifest is missing field '{key}'")
    payload = raw[nl + 1 :]
    sizes = [int(np.prod(p["shape"], dtype=np.int64)) for p in m["params"]]
    if len(payload) != 8 * sum(sizes):
        raise SizeError(f"checkpoint payload is {len(payload)} bytes, manifest declares {8 * sum(sizes)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    store = nn.ParamStore()
    offset = 0
    for p, n in zip(m["params"], sizes):
        store.add(p["name"], values[offset : offset + n].reshape(p["shape"]))
        offset += n
    return BimaModel(
        config=BimaConfig.from_dict(m["config"]),
        spectral=SpectralConfig(**m["spectral"]),
        sampling_rate_hz=float(m["sampling_rate_hz"]),
        num_samples=int(m["num_samples"]),
        params=store,
        seed=int(m["seed"]),
    )


def save_checkpoint(model: BimaModel, path) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def load_checkpoint(path) -> BimaModel:
    return decode_checkpoint(Path(path).read_bytes())
