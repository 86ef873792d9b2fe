"""VAE classifier: ResNet encoder, reparameterized latent, decoder, classifier.

Data flow for one input ``x`` of length ``input_len``::

    x -> conv stem -> residual blocks -> flatten --+
    x -> dense branch -----------------------------+-> mu, log_var heads
    z = mu + exp(log_var / 2) * eps
    z -> dense projection -> transposed convs -> flatten --+
    z -> dense branch -------------------------------------+-> dense(input_len) = x_hat
    x_hat -> dense -> relu -> dense -> softmax = probs

Every function accepts a single vector ``(input_len,)`` or a batch
``(batch, input_len)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import diffnet as dn
from .diffnet import ParamStore, Var

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
# posterior starts narrow so early latent noise does not swamp the decoder
INIT_LOG_VAR = -4.0


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 1250
    latent_dim: int = 32
    n_res_blocks: int = 15
    channels: int = 16
    kernel_size: int = 7
    stem_stride: int = 4
    dense_branch_widths: tuple[int, ...] = (256, 64)
    decoder_seed_len: int = 39
    decoder_stride: int = 2
    n_decoder_convs: int = 2
    classifier_hidden: int = 64
    n_classes: int = 2
    classify_from_latent: bool = False
    normalize_input: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dense_branch_widths", tuple(int(w) for w in self.dense_branch_widths))
        positive = ("input_len", "latent_dim", "n_res_blocks", "channels", "kernel_size",
                    "stem_stride", "decoder_seed_len", "decoder_stride", "classifier_hidden")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.n_classes < 2:
            raise ValueError("ModelConfig.n_classes must be at least 2")
        if self.kernel_size % 2 == 0:
            raise ValueError("ModelConfig.kernel_size must be odd (residual blocks keep length)")
        if self.n_decoder_convs < 1:
            raise ValueError("ModelConfig.n_decoder_convs must be at least 1")
        if not self.dense_branch_widths or min(self.dense_branch_widths) < 1:
            raise ValueError("ModelConfig.dense_branch_widths must be non-empty and positive")

    @property
    def encoded_len(self) -> int:
        pad = self.kernel_size // 2
        return (self.input_len + 2 * pad - self.kernel_size) // self.stem_stride + 1

    @property
    def decoded_conv_len(self) -> int:
        n = self.decoder_seed_len
        for _ in range(self.n_decoder_convs):
            n = (n - 1) * self.decoder_stride + self.kernel_size
        return n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_branch_widths"] = list(self.dense_branch_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class LatentGaussian(NamedTuple):
    mu: np.ndarray
    log_var: np.ndarray


class ForwardOutput(NamedTuple):
    reconstruction: np.ndarray
    probs: np.ndarray
    latent: LatentGaussian
    z: np.ndarray


@dataclass
class Graph:
    """Graph nodes kept from one forward pass, for building the loss."""

    mu: Var
    log_var: Var
    z: Var
    reconstruction: Var
    probs: Var
    eps: np.ndarray = field(repr=False)

    def output(self) -> ForwardOutput:
        return ForwardOutput(
            self.reconstruction.value,
            self.probs.value,
            LatentGaussian(self.mu.value, self.log_var.value),
            self.z.value,
        )


def _he(rng, shape, fan_in, gain=1.0):
    return rng.standard_normal(shape) * (gain * np.sqrt(2.0 / fan_in))


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """He-initialised parameters; biases start at zero."""
    rng = np.random.default_rng(seed)
    c, k = config.channels, config.kernel_size
    store = ParamStore()

    def dense_layer(path, n_in, n_out):
        store.add(f"{path}/weight", _he(rng, (n_out, n_in), n_in))
        store.add(f"{path}/bias", np.zeros(n_out))

    def conv_layer(path, shape, fan_in, gain=1.0):
        store.add(f"{path}/weight", _he(rng, shape, fan_in, gain))
        store.add(f"{path}/bias", np.zeros(shape[0]))

    store.add("encoder/stem/weight", _he(rng, (c, 1, k), k))
    store.add("encoder/stem/bias", np.zeros(c))
    # second conv scaled down so deep stacks start close to the identity map
    block_gain = 1.0 / np.sqrt(config.n_res_blocks)
    for i in range(config.n_res_blocks):
        conv_layer(f"encoder/block{i:02d}/conv1", (c, c, k), c * k)
        conv_layer(f"encoder/block{i:02d}/conv2", (c, c, k), c * k, block_gain)
    n_in = config.input_len
    for j, width in enumerate(config.dense_branch_widths):
        dense_layer(f"encoder/branch{j}", n_in, width)
        n_in = width
    head_in = c * config.encoded_len + config.dense_branch_widths[-1]
    dense_layer("encoder/mu", head_in, config.latent_dim)
    store.add("encoder/log_var/weight", 0.1 * _he(rng, (config.latent_dim, head_in), head_in))
    store.add("encoder/log_var/bias", np.full(config.latent_dim, INIT_LOG_VAR))

    dense_layer("decoder/project", config.latent_dim, c * config.decoder_seed_len)
    for i in range(config.n_decoder_convs):
        c_out = 1 if i == config.n_decoder_convs - 1 else c
        store.add(f"decoder/transp{i}/weight", _he(rng, (c, c_out, k), c * k))
        store.add(f"decoder/transp{i}/bias", np.zeros(c_out))
    n_in = config.latent_dim
    for j, width in enumerate(reversed(config.dense_branch_widths)):
        dense_layer(f"decoder/branch{j}", n_in, width)
        n_in = width
    n_out_in = config.decoded_conv_len + config.dense_branch_widths[0]
    # small output layer: the reconstruction starts near the all-zero baseline
    store.add("decoder/out/weight", 0.1 * _he(rng, (config.input_len, n_out_in), n_out_in))
    store.add("decoder/out/bias", np.zeros(config.input_len))

    cls_in = config.latent_dim if config.classify_from_latent else config.input_len
    dense_layer("classifier/hidden", cls_in, config.classifier_hidden)
    dense_layer("classifier/out", config.classifier_hidden, config.n_classes)
    return store


def _leaf(params: ParamStore, path: str) -> Var:
    return params.var(path)


def _dense(h, params, path):
    return dn.dense(h, _leaf(params, f"{path}/weight"), _leaf(params, f"{path}/bias"))


def _as_batch(x, length: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != length:
        raise ValueError(f"{what}: expected length {length}, got shape {x.shape}")
    return x, single


def _encode_graph(x: np.ndarray, params: ParamStore, config: ModelConfig) -> tuple[Var, Var]:
    k = config.kernel_size
    h = dn.conv1d(x[:, None, :], _leaf(params, "encoder/stem/weight"),
                  _leaf(params, "encoder/stem/bias"), stride=config.stem_stride, padding=k // 2)
    h = dn.relu(h)
    for i in range(config.n_res_blocks):
        p = f"encoder/block{i:02d}"
        h = dn.residual_block(h, _leaf(params, f"{p}/conv1/weight"), _leaf(params, f"{p}/conv1/bias"),
                              _leaf(params, f"{p}/conv2/weight"), _leaf(params, f"{p}/conv2/bias"))
    conv_feat = dn.reshape(h, (x.shape[0], -1))
    b = dn.as_var(x)
    for j in range(len(config.dense_branch_widths)):
        b = dn.relu(_dense(b, params, f"encoder/branch{j}"))
    feat = dn.concat([conv_feat, b], axis=-1)
    mu = _dense(feat, params, "encoder/mu")
    log_var = dn.clip(_dense(feat, params, "encoder/log_var"), LOG_VAR_MIN, LOG_VAR_MAX)
    return mu, log_var


def _sample_graph(mu: Var, log_var: Var, eps: np.ndarray) -> Var:
    sigma = dn.exp(dn.scale(log_var, 0.5))
    return dn.add(mu, dn.mul(sigma, eps))


def _decode_graph(z, params: ParamStore, config: ModelConfig) -> Var:
    batch = z.value.shape[0]
    h = dn.relu(_dense(z, params, "decoder/project"))
    h = dn.reshape(h, (batch, config.channels, config.decoder_seed_len))
    for i in range(config.n_decoder_convs):
        h = dn.conv1d_transpose(h, _leaf(params, f"decoder/transp{i}/weight"),
                                _leaf(params, f"decoder/transp{i}/bias"), stride=config.decoder_stride)
        if i < config.n_decoder_convs - 1:
            h = dn.relu(h)
    conv_feat = dn.reshape(h, (batch, -1))
    b = z
    for j in range(len(config.dense_branch_widths)):
        b = dn.relu(_dense(b, params, f"decoder/branch{j}"))
    return _dense(dn.concat([conv_feat, b], axis=-1), params, "decoder/out")


def _classify_graph(h, params: ParamStore) -> Var:
    h = dn.relu(_dense(h, params, "classifier/hidden"))
    return dn.softmax(_dense(h, params, "classifier/out"))


def _draw_eps(rng, shape) -> np.ndarray:
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return rng.standard_normal(shape)


def build_graph(x, params: ParamStore, config: ModelConfig, rng=None, eps=None) -> Graph:
    """Forward pass that keeps every node for :func:`afvae.diffnet.backward`.

    ``eps`` overrides the standard-normal draw from ``rng``; it is a
    constant of the graph either way.
    """
    xb, _ = _as_batch(x, config.input_len, "forward")
    mu, log_var = _encode_graph(xb, params, config)
    if eps is None:
        eps = _draw_eps(rng, mu.value.shape)
    eps = np.asarray(eps, dtype=float).reshape(mu.value.shape)
    z = _sample_graph(mu, log_var, eps)
    recon = _decode_graph(z, params, config)
    probs = _classify_graph(z if config.classify_from_latent else recon, params)
    if not np.all(np.isfinite(probs.value)) or not np.all(np.isfinite(recon.value)):
        raise dn.GraphError("forward pass produced non-finite values")
    return Graph(mu, log_var, z, recon, probs, eps)


def _maybe_single(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


def encode(x, params: ParamStore, config: ModelConfig) -> LatentGaussian:
    xb, single = _as_batch(x, config.input_len, "encode")
    mu, log_var = _encode_graph(xb, params, config)
    return LatentGaussian(_maybe_single(mu.value, single), _maybe_single(log_var.value, single))


def sample_latent(latent: LatentGaussian, rng=None, eps=None) -> np.ndarray:
    """z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) unless supplied."""
    mu = np.asarray(latent.mu, dtype=float)
    log_var = np.clip(np.asarray(latent.log_var, dtype=float), LOG_VAR_MIN, LOG_VAR_MAX)
    if eps is None:
        eps = _draw_eps(rng, mu.shape)
    return mu + np.exp(0.5 * log_var) * np.asarray(eps, dtype=float)


def decode(z, params: ParamStore, config: ModelConfig) -> np.ndarray:
    zb, single = _as_batch(z, config.latent_dim, "decode")
    return _maybe_single(_decode_graph(dn.as_var(zb), params, config).value, single)


def classify(h, params: ParamStore, config: ModelConfig) -> np.ndarray:
    n = config.latent_dim if config.classify_from_latent else config.input_len
    hb, single = _as_batch(h, n, "classify")
    return _maybe_single(_classify_graph(dn.as_var(hb), params).value, single)


def forward(x, params: ParamStore, config: ModelConfig, rng=None, eps=None) -> ForwardOutput:
    """encode -> sample -> decode -> classify. Same rng state, same output."""
    single = np.ndim(x) == 1
    out = build_graph(x, params, config, rng=rng, eps=eps).output()
    if not single:
        return out
    return ForwardOutput(out.reconstruction[0], out.probs[0],
                         LatentGaussian(out.latent.mu[0], out.latent.log_var[0]), out.z[0])


def head_probs(latent: LatentGaussian, params: ParamStore, config: ModelConfig,
               rng=None, eps=None) -> np.ndarray:
    """Class probabilities for an already-encoded batch; used for repeated passes."""
    z = sample_latent(latent, rng=rng, eps=eps)
    zb = np.atleast_2d(z)
    h = zb if config.classify_from_latent else _decode_graph(dn.as_var(zb), params, config)
    probs = _classify_graph(h, params).value
    return probs[0] if np.ndim(z) == 1 else probs
