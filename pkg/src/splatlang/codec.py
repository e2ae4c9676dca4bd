"""Lightweight autoencoder compressing region embeddings to the latent space.

The encoder maps a D_feat-dim feature vector down to D_lat dims, the
decoder maps it back. Both are plain fully-connected stacks with a
leaky-rectifier (slope 0.01) on hidden layers and a linear output layer.
Training minimizes

    mean |v - D(E(v))| + (1 - cos(v, D(E(v))))

over mini-batches with adaptive-moment steps; gradients are computed by
hand (see ``_loss_and_grads``) so they can be checked against finite
differences. Weights start from uniform fan-in scaling with a fixed
seed, biases from zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .optim import Adam

DEFAULT_FEATURE_DIM = 512
DEFAULT_LATENT_DIM = 3
ENCODER_WIDTHS = (256, 128, 128, 64, 32, 3)
DECODER_WIDTHS = (16, 32, 64, 128, 256, 256, 512)
LEAKY_SLOPE = 0.01

DEFAULT_LEARNING_RATE = 0.0006
DEFAULT_EPOCHS = 300
DEFAULT_BATCH_SIZE = 64

# L1-based losses grow polynomially rather than overflowing, so divergence
# is flagged on this ceiling as well as on non-finite values. Legitimate
# losses on (near-)unit-norm banks are O(1).
DIVERGENCE_CEILING = 1e12


class CodecDivergenceError(RuntimeError):
    """Training loss became non-finite or absurdly large."""


def default_widths(
    feature_dim: int, latent_dim: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Canonical layer widths, with the endpoints tied to the given dims."""
    enc = ENCODER_WIDTHS[:-1] + (latent_dim,)
    dec = DECODER_WIDTHS[:-1] + (feature_dim,)
    return enc, dec


@dataclass
class CodecParams:
    """All layer weights/biases; weights are (out, in), biases (out,)."""

    encoder_weights: list[np.ndarray]
    encoder_biases: list[np.ndarray]
    decoder_weights: list[np.ndarray]
    decoder_biases: list[np.ndarray]

    @property
    def feature_dim(self) -> int:
        return self.encoder_weights[0].shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encoder_weights[-1].shape[0]

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.encoder_weights)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.decoder_weights)

    def all_arrays(self) -> list[np.ndarray]:
        return (
            self.encoder_weights
            + self.encoder_biases
            + self.decoder_weights
            + self.decoder_biases
        )


def init_params(
    feature_dim: int = DEFAULT_FEATURE_DIM,
    latent_dim: int = DEFAULT_LATENT_DIM,
    encoder_widths: tuple[int, ...] | None = None,
    decoder_widths: tuple[int, ...] | None = None,
    seed: int = 0,
) -> CodecParams:
    if encoder_widths is None or decoder_widths is None:
        enc_def, dec_def = default_widths(feature_dim, latent_dim)
        encoder_widths = encoder_widths or enc_def
        decoder_widths = decoder_widths or dec_def
    if encoder_widths[-1] != latent_dim:
        raise ValueError(
            f"encoder must end at latent dim {latent_dim}, got {encoder_widths}"
        )
    if decoder_widths[-1] != feature_dim:
        raise ValueError(
            f"decoder must end at feature dim {feature_dim}, got {decoder_widths}"
        )
    rng = np.random.default_rng(seed)

    def make(widths, in_dim):
        # Uniform fan-in scaling (variance 1/fan_in) keeps activation
        # magnitude roughly constant through the stack; smaller bounds make
        # the deep thin encoder vanish and its latents collapse.
        ws, bs = [], []
        for out_dim in widths:
            bound = np.sqrt(3.0 / in_dim)
            ws.append(rng.uniform(-bound, bound, size=(out_dim, in_dim)))
            bs.append(np.zeros(out_dim))
            in_dim = out_dim
        return ws, bs

    enc_w, enc_b = make(encoder_widths, feature_dim)
    dec_w, dec_b = make(decoder_widths, latent_dim)
    return CodecParams(enc_w, enc_b, dec_w, dec_b)


def _forward_stack(x, weights, biases, keep_intermediates=False):
    """Linear layers with leaky rectifier on all but the last layer."""
    pre, post = [], [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.where(z >= 0.0, z, LEAKY_SLOPE * z) if i < last else z
        post.append(h)
    if keep_intermediates:
        return h, pre, post
    return h


def _check_input(v: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    if single:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != dim:
        raise ValueError(f"{what}: expected vectors of dim {dim}, got shape {v.shape}")
    return v, single


def encode(v: np.ndarray, params: CodecParams) -> np.ndarray:
    """Deterministic forward pass through the encoder (1-D or batched)."""
    x, single = _check_input(v, params.feature_dim, "encode")
    z = _forward_stack(x, params.encoder_weights, params.encoder_biases)
    return z[0] if single else z


def decode(z: np.ndarray, params: CodecParams) -> np.ndarray:
    """Deterministic forward pass through the decoder (1-D or batched)."""
    x, single = _check_input(z, params.latent_dim, "decode")
    r = _forward_stack(x, params.decoder_weights, params.decoder_biases)
    return r[0] if single else r


def reconstruction_loss(v: np.ndarray, r: np.ndarray) -> float:
    """mean |v - r| + (1 - cos(v, r)), averaged over the batch."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    l1 = np.abs(r - v).mean(axis=1)
    vn = np.linalg.norm(v, axis=1)
    rn = np.linalg.norm(r, axis=1)
    safe = (vn > 1e-12) & (rn > 1e-12)
    cos = np.zeros(v.shape[0])
    cos[safe] = (v[safe] * r[safe]).sum(axis=1) / (vn[safe] * rn[safe])
    return float((l1 + (1.0 - cos)).mean())


def _loss_and_grads(batch: np.ndarray, params: CodecParams):
    """Reconstruction loss and analytic gradients for every layer."""
    n, d = batch.shape
    z, enc_pre, enc_post = _forward_stack(
        batch, params.encoder_weights, params.encoder_biases, keep_intermediates=True
    )
    r, dec_pre, dec_post = _forward_stack(
        z, params.decoder_weights, params.decoder_biases, keep_intermediates=True
    )

    diff = r - batch
    l1 = np.abs(diff).mean(axis=1)
    vn = np.linalg.norm(batch, axis=1)
    rn = np.linalg.norm(r, axis=1)
    safe = (vn > 1e-12) & (rn > 1e-12)
    dot = (batch * r).sum(axis=1)
    cos = np.zeros(n)
    cos[safe] = dot[safe] / (vn[safe] * rn[safe])
    loss = float((l1 + (1.0 - cos)).mean())

    # d/dr of mean|r-v|/D is sign/D; d/dr of -cos(v,r) as below. The 1/n
    # batch average is folded in here once.
    grad_r = np.sign(diff) / d
    dcos = np.zeros_like(r)
    dcos[safe] = (
        batch[safe] / (vn[safe] * rn[safe])[:, None]
        - (cos[safe] / rn[safe] ** 2)[:, None] * r[safe]
    )
    grad_r = (grad_r - dcos) / n

    def backprop(delta, weights, pre, post):
        grads_w, grads_b = [None] * len(weights), [None] * len(weights)
        last = len(weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                delta = delta * np.where(pre[i] >= 0.0, 1.0, LEAKY_SLOPE)
            grads_w[i] = delta.T @ post[i]
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ weights[i]
        return grads_w, grads_b, delta

    dec_gw, dec_gb, delta = backprop(
        grad_r, params.decoder_weights, dec_pre, dec_post
    )
    enc_gw, enc_gb, _ = backprop(delta, params.encoder_weights, enc_pre, enc_post)
    return loss, enc_gw + enc_gb + dec_gw + dec_gb


def train_codec(
    vectors,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH_SIZE,
    latent_dim: int = DEFAULT_LATENT_DIM,
    encoder_widths: tuple[int, ...] | None = None,
    decoder_widths: tuple[int, ...] | None = None,
    seed: int = 0,
) -> tuple[CodecParams, np.ndarray]:
    """Fit the autoencoder on a bank of feature vectors.

    Returns the trained parameters and the per-epoch mean loss trace.
    Raises :class:`CodecDivergenceError` when the loss blows up.
    """
    data = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if data.shape[0] < 1:
        raise ValueError("need at least one vector to train the codec")
    params = init_params(
        feature_dim=data.shape[1],
        latent_dim=latent_dim,
        encoder_widths=encoder_widths,
        decoder_widths=decoder_widths,
        seed=seed,
    )
    arrays = params.all_arrays()
    opt = Adam(learning_rate)
    rng = np.random.default_rng(seed + 1)
    trace = np.zeros(epochs)
    for epoch in range(epochs):
        order = rng.permutation(data.shape[0])
        losses = []
        for start in range(0, data.shape[0], batch_size):
            batch = data[order[start : start + batch_size]]
            loss, grads = _loss_and_grads(batch, params)
            if not np.isfinite(loss) or loss > DIVERGENCE_CEILING:
                raise CodecDivergenceError(
                    f"codec training diverged at epoch {epoch} "
                    f"(loss={loss:.3e}, lr={learning_rate})"
                )
            opt.step(arrays, grads)
            losses.append(loss)
        trace[epoch] = float(np.mean(losses))
    return params, trace


class LatentCodec(BaseEstimator, TransformerMixin):
    """Estimator facade: fit on feature vectors, transform = encode,
    inverse_transform = decode."""

    def __init__(
        self,
        latent_dim: int = DEFAULT_LATENT_DIM,
        encoder_widths: tuple[int, ...] | None = None,
        decoder_widths: tuple[int, ...] | None = None,
        learning_rate: float = DEFAULT_LEARNING_RATE,
        epochs: int = DEFAULT_EPOCHS,
        batch_size: int = DEFAULT_BATCH_SIZE,
        seed: int = 0,
    ):
        self.latent_dim = latent_dim
        self.encoder_widths = encoder_widths
        self.decoder_widths = decoder_widths
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y=None):
        self.params_, self.loss_trace_ = train_codec(
            X,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            latent_dim=self.latent_dim,
            encoder_widths=self.encoder_widths,
            decoder_widths=self.decoder_widths,
            seed=self.seed,
        )
        return self

    @classmethod
    def from_params(cls, params: CodecParams) -> "LatentCodec":
        codec = cls(latent_dim=params.latent_dim)
        codec.params_ = params
        codec.loss_trace_ = np.zeros(0)
        return codec

    def _require_fitted(self) -> CodecParams:
        if not hasattr(self, "params_"):
            raise NotFittedError("LatentCodec is not fitted")
        return self.params_

    def transform(self, X) -> np.ndarray:
        return encode(np.atleast_2d(np.asarray(X, dtype=np.float64)), self._require_fitted())

    def inverse_transform(self, Z) -> np.ndarray:
        return decode(np.atleast_2d(np.asarray(Z, dtype=np.float64)), self._require_fitted())

    def encode(self, v: np.ndarray) -> np.ndarray:
        """Single-vector (or batched) encoder pass."""
        return encode(v, self._require_fitted())

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Single-vector (or batched) decoder pass."""
        return decode(z, self._require_fitted())
