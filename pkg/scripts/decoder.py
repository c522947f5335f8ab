"""
EdgeNet slot-by-slot decoder and output heads.

Decoding (one GRU step per slot, initial state = encoder context c):

    c_j     = GRU(input_j, c_{j-1}),  input_1 = start token, input_j = h of slot j-1's ad
    mu_i^j  = v . tanh(W1 h_i + W2 c_j) + exp(w3) * b_i

Each slot selects an unmasked ad (argmax, or a categorical sample during
training rollouts) and masks it for the remaining slots.

Heads:
    F^R_ij = exp(w_R) * mu_i^j                                     allocation channel
    F^p_ij = MLP([tanh(W1 h_i + W2 c_j), mu_i^j, logit q_i])
             + exp(w_q) * logit q_i                                payment channel
    R      = column softmax of F^R over unmasked ads, rows capped at 1
    p~_i   = sigmoid(mean_j F^p_ij)

q_i is the ad's threshold bid over its own bid (threshold_ratios()).

F^R is a positive rescaling of mu, so column argmax of R agrees with the
sequential selection and stays monotone in the ad's own bid.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Literal, Optional

import numpy as np

import numgrad as ng
from encoder import EncodedContext
from layers import Shape
from numgrad import Tensor

if TYPE_CHECKING:
    from edgenet import EdgeNetParams


THRESHOLD_CLIP = 1e-3


class DecodeError(ValueError):
    """Raised when decode preconditions fail (more slots than ads, shape mismatch)."""


@dataclass(frozen=True)
class DecodeTrace:
    """
    Everything the heads need from one decode.

    Shapes (B = batch, N = ads, K = slots):
        logits    (B, N, K) raw mu, finite everywhere
        features  (B, N, K, d_a) tanh(W1 h_i + W2 c_j)
        states    (B, K, d_c) recurrent state c_j per slot
        selected  (B, K) int, ad chosen for each slot
        masked    (B, N, K) bool, True where ad i was chosen before slot j
    """
    logits: Tensor
    features: Tensor
    states: Tensor
    selected: np.ndarray
    masked: np.ndarray
    bids: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.selected.shape[1]

    def logit_matrix(self) -> np.ndarray:
        """mu with masked entries set to -inf."""
        return np.where(self.masked, -np.inf, self.logits.data)


@dataclass(frozen=True)
class HeadOutputs:
    """allocation (B, N, K) row-capped R, column_probs (B, N, K), fractions (B, N)."""
    allocation: Tensor
    column_probs: Tensor
    fractions: Tensor


def param_shapes(d_h: int, d_c: int, d_a: int, head_hidden: int) -> Dict[str, Shape]:
    shapes: Dict[str, Shape] = {"dec.start": (d_h,)}
    for gate in ("z", "r", "n"):
        shapes[f"dec.gru.W{gate}"] = (d_h, d_c)
        shapes[f"dec.gru.U{gate}"] = (d_c, d_c)
        shapes[f"dec.gru.b{gate}"] = (d_c,)
    shapes.update({
        "dec.attn.W1": (d_h, d_a),
        "dec.attn.W2": (d_c, d_a),
        "dec.attn.v": (d_a, 1),
        "dec.attn.w3": (),
        "head.w_R": (),
        "head.W": (d_a + 2, head_hidden),
        "head.b": (head_hidden,),
        "head.w_p": (head_hidden, 1),
        "head.w_q": (),
        "head.b_p": (),
    })
    return shapes


def _gru(x: Tensor, state: Tensor, params: "EdgeNetParams") -> Tensor:
    w = params.tensors
    z = ng.sigmoid(x @ w["dec.gru.Wz"] + state @ w["dec.gru.Uz"] + w["dec.gru.bz"])
    r = ng.sigmoid(x @ w["dec.gru.Wr"] + state @ w["dec.gru.Ur"] + w["dec.gru.br"])
    n = ng.tanh(x @ w["dec.gru.Wn"] + r * (state @ w["dec.gru.Un"]) + w["dec.gru.bn"])
    return (1.0 - z) * n + z * state


def select_argmax(logits: np.ndarray, masked: np.ndarray, bids: np.ndarray) -> np.ndarray:
    """Row-wise argmax over unmasked entries; ties go to the higher bid, then the lower index."""
    scores = np.where(masked, -np.inf, logits)
    best = scores == scores.max(axis=1, keepdims=True)
    tied_bids = np.where(best, bids, -np.inf)
    best &= tied_bids == tied_bids.max(axis=1, keepdims=True)
    return best.argmax(axis=1)


def select_sample(logits: np.ndarray, masked: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row from the softmax of unmasked logits."""
    scores = np.where(masked, -np.inf, logits)
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    cumulative = np.cumsum(weights, axis=1)
    draws = rng.random(len(scores))[:, None] * cumulative[:, -1:]
    return (cumulative > draws).argmax(axis=1)


def decode(
    ctx: EncodedContext,
    bids: np.ndarray,
    params: "EdgeNetParams",
    n_slots: int,
    mode: Literal["argmax", "sample"] = "argmax",
    seed: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> DecodeTrace:
    """
    Autoregressively fill ``n_slots`` slots.

    Args:
        ctx: Encoder output for B instances
        bids: (B, N) reported bids
        params: Network parameters
        n_slots: K
        mode: "argmax" (deployment) or "sample" (exploration)
        seed: Seed for sample mode, ignored when ``rng`` is given
        rng: Generator to draw from in sample mode

    Raises:
        DecodeError: If K > N or bids do not match the context
    """
    weights = params.tensors
    bids = np.asarray(bids, dtype=np.float64)
    if bids.ndim == 1:
        bids = bids[None]
    b, n, d_h = ctx.ads.shape
    if bids.shape != (b, n):
        raise DecodeError(f"bids shape {bids.shape} does not match context ({b}, {n})")
    if n_slots > n:
        raise DecodeError(f"Cannot fill {n_slots} slots with {n} ads")
    if mode == "sample" and rng is None:
        rng = np.random.default_rng(seed)

    keys = ctx.ads @ weights["dec.attn.W1"]
    bid_term = ng.exp(weights["dec.attn.w3"]) * bids
    rows = np.arange(b)
    state = ctx.context
    step_input = weights["dec.start"].reshape(1, d_h)
    masked = np.zeros((b, n), dtype=bool)

    logits: List[Tensor] = []
    features: List[Tensor] = []
    states: List[Tensor] = []
    selected = np.zeros((b, n_slots), dtype=np.int64)
    mask_history = np.zeros((b, n, n_slots), dtype=bool)

    for j in range(n_slots):
        state = _gru(step_input, state, params)
        feature = ng.tanh(keys + (state @ weights["dec.attn.W2"]).reshape(b, 1, -1))
        mu = (feature @ weights["dec.attn.v"]).reshape(b, n) + bid_term

        mask_history[:, :, j] = masked
        if mode == "sample":
            choice = select_sample(mu.data, masked, rng)
        else:
            choice = select_argmax(mu.data, masked, bids)
        selected[:, j] = choice
        masked = masked.copy()
        masked[rows, choice] = True

        logits.append(mu)
        features.append(feature)
        states.append(state)
        step_input = ctx.ads[rows, choice]

    return DecodeTrace(
        logits=ng.stack(logits, axis=2),
        features=ng.stack(features, axis=2),
        states=ng.stack(states, axis=1),
        selected=selected,
        masked=mask_history,
        bids=bids,
    )


def threshold_ratios(trace: DecodeTrace, bid_weight: float) -> np.ndarray:
    """
    Bid needed to keep (or, for losers, take) a slot, over the ad's own bid.

    For ad i at slot j the threshold t_ij solves
    mu_i^j - exp(w3) * (b_i - t_ij) = max over other unmasked k of mu_k^j.
    Winners read their own slot, losers the last one. Returns (B, N),
    gradient-free, clipped to [THRESHOLD_CLIP, 1 - THRESHOLD_CLIP].
    """
    scores = trace.logit_matrix()
    b, n, k = scores.shape
    ranked = np.sort(scores, axis=1)
    top = ranked[:, -1:, :]
    runner_up = ranked[:, -2:-1, :] if n > 1 else np.full((b, 1, k), -np.inf)
    best_other = np.where(scores == top, runner_up, top)

    slot = np.full((b, n), k - 1)
    slot[np.arange(b)[:, None], trace.selected] = np.arange(k)[None, :]
    own = np.take_along_axis(scores, slot[:, :, None], axis=2)[:, :, 0]
    rival = np.take_along_axis(best_other, slot[:, :, None], axis=2)[:, :, 0]

    bids = np.maximum(trace.bids, np.finfo(float).tiny)
    ratios = 1.0 - (own - rival) / (bid_weight * bids)
    ratios = np.nan_to_num(ratios, nan=THRESHOLD_CLIP, neginf=THRESHOLD_CLIP, posinf=1.0)
    return np.clip(ratios, THRESHOLD_CLIP, 1.0 - THRESHOLD_CLIP)


def output_heads(trace: DecodeTrace, params: "EdgeNetParams") -> HeadOutputs:
    """
    Allocation matrix R and payment fractions p~ from a finished trace.

    F^R is exp(w_R) * mu rather than a separate learned projection, so R
    ranks ads exactly as the decoder does. Every F^p_ij also carries
    exp(w_q) * logit(q_i), where q_i = threshold_ratios(); with the MLP
    silenced a winner pays its threshold bid.
    """
    w = params.tensors
    b, n, k = trace.logits.shape

    allocation_logits = ng.exp(w["head.w_R"]) * trace.logits
    column_probs = ng.softmax(allocation_logits, axis=1, mask=trace.masked)
    row_mass = ng.sum_(column_probs, axis=2, keepdims=True)
    allocation = column_probs / ng.maximum(row_mass, 1.0)

    ratios = threshold_ratios(trace, float(np.exp(w["dec.attn.w3"].data)))
    ratio_logits = np.log(ratios / (1.0 - ratios))
    ratio_feature = np.repeat(ratio_logits[:, :, None, None], k, axis=2)
    head_in = ng.concat([trace.features, trace.logits.reshape(b, n, k, 1), ratio_feature], axis=3)
    hidden = ng.tanh(head_in @ w["head.W"] + w["head.b"])
    payment_logits = (
        (hidden @ w["head.w_p"]).reshape(b, n, k)
        + ng.exp(w["head.w_q"]) * ratio_logits[:, :, None]
        + w["head.b_p"]
    )
    fractions = ng.sigmoid(ng.mean(payment_logits, axis=2))
    return HeadOutputs(allocation=allocation, column_probs=column_probs, fractions=fractions)
