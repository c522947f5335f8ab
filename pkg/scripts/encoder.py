"""
EdgeNet context encoder.

Ads and the user are embedded independently, processed as one token set by
a pre-norm transformer, and pooled into a context vector:

    e_i = x_i A + a            (ad tokens)
    e_y = y U + u + t_user     (user token, t_user is a learned type embedding)
    h   = Transformer([e_y, e_1..e_N])
    c   = tanh(mean(h) P + p)

There are no positional encodings, so ad outputs permute with the input and
c is invariant to candidate order. Bids never enter the encoder.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, Union

import numpy as np

import numgrad as ng
from auction import AuctionBatch
from layers import Shape, check_width, layer_norm, layer_norm_shapes, linear, linear_shapes
from models import AuctionInstance, EdgeNetConfig
from numgrad import Tensor

if TYPE_CHECKING:
    from edgenet import EdgeNetParams


@dataclass(frozen=True)
class EmbeddedTokens:
    """Token embeddings before the transformer: ads (B, N, d_e), user (B, d_e)."""
    ads: Tensor
    user: Tensor


@dataclass(frozen=True)
class EncodedContext:
    """Encoder outputs: ads (B, N, d_h), user (B, d_h), context (B, d_c)."""
    ads: Tensor
    user: Tensor
    context: Tensor

    @property
    def n_ads(self) -> int:
        return self.ads.shape[1]

    def take(self, rows: np.ndarray) -> "EncodedContext":
        """Select (or repeat) batch rows; gradients flow back to the shared rows."""
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedContext(ads=self.ads[rows], user=self.user[rows], context=self.context[rows])


def param_shapes(config: EdgeNetConfig) -> Dict[str, Shape]:
    shapes: Dict[str, Shape] = {}
    shapes.update(linear_shapes("enc.ad_embed", config.d_x, config.d_e))
    shapes.update(linear_shapes("enc.user_embed", config.d_y, config.d_e))
    shapes["enc.user_type"] = (config.d_e,)
    shapes.update(linear_shapes("enc.in_proj", config.d_e, config.d_h))
    for layer in range(config.n_layers):
        prefix = f"enc.l{layer}"
        shapes.update(layer_norm_shapes(f"{prefix}.ln1", config.d_h))
        for name in ("q", "k", "v", "o"):
            shapes.update(linear_shapes(f"{prefix}.attn.{name}", config.d_h, config.d_h))
        shapes.update(layer_norm_shapes(f"{prefix}.ln2", config.d_h))
        shapes.update(linear_shapes(f"{prefix}.ff1", config.d_h, config.d_ff))
        shapes.update(linear_shapes(f"{prefix}.ff2", config.d_ff, config.d_h))
    shapes.update(layer_norm_shapes("enc.ln_out", config.d_h))
    shapes.update(linear_shapes("enc.pool", config.d_h, config.d_c))
    return shapes


def embed(source: Union[AuctionInstance, AuctionBatch], params: "EdgeNetParams") -> EmbeddedTokens:
    """
    Map ad and user features to token embeddings.

    A single instance is treated as a batch of one; outputs always carry
    the batch axis.

    Raises:
        ShapeError: If feature lengths differ from the configured d_x / d_y
    """
    batch = AuctionBatch.from_instances([source]) if isinstance(source, AuctionInstance) else source
    config, weights = params.config, params.tensors
    check_width("ad features", batch.ad_features, config.d_x)
    check_width("user features", batch.user_features, config.d_y)

    ads = linear(Tensor(batch.ad_features), weights, "enc.ad_embed")
    user = linear(Tensor(batch.user_features), weights, "enc.user_embed") + weights["enc.user_type"]
    return EmbeddedTokens(ads=ads, user=user)


def _self_attention(x: Tensor, params: "EdgeNetParams", prefix: str) -> Tensor:
    weights = params.tensors
    b, t, d = x.shape
    n_heads = params.config.n_heads
    d_k = d // n_heads

    def split(z: Tensor) -> Tensor:
        return z.reshape(b, t, n_heads, d_k).transpose(0, 2, 1, 3)

    q = split(linear(x, weights, f"{prefix}.q"))
    k = split(linear(x, weights, f"{prefix}.k"))
    v = split(linear(x, weights, f"{prefix}.v"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d_k))
    mixed = (ng.softmax(scores, axis=-1) @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return linear(mixed, weights, f"{prefix}.o")


def encode(tokens: EmbeddedTokens, params: "EdgeNetParams") -> EncodedContext:
    """
    Run the transformer over [user, ads] and pool the context vector.

    Token 0 is the user; the mean pool runs over all N+1 outputs.
    """
    weights = params.tensors
    b, n, d_e = tokens.ads.shape
    if n < 1:
        raise ValueError("encode needs at least one ad")

    x = ng.concat([tokens.user.reshape(b, 1, d_e), tokens.ads], axis=1)
    x = linear(x, weights, "enc.in_proj")
    for layer in range(params.config.n_layers):
        prefix = f"enc.l{layer}"
        x = x + _self_attention(layer_norm(x, weights, f"{prefix}.ln1"), params, f"{prefix}.attn")
        hidden = ng.relu(linear(layer_norm(x, weights, f"{prefix}.ln2"), weights, f"{prefix}.ff1"))
        x = x + linear(hidden, weights, f"{prefix}.ff2")
    h = layer_norm(x, weights, "enc.ln_out")

    context = ng.tanh(linear(ng.mean(h, axis=1), weights, "enc.pool"))
    return EncodedContext(ads=h[:, 1:, :], user=h[:, 0, :], context=context)
