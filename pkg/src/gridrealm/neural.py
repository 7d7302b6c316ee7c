"""Policy/value network with hand-written gradients; no ML framework.

Architecture: each crop tile index is embedded to 7 dims and concatenated
with its occupant count; the flattened tile block is joined with a 32-dim
max-pool over projected entity records; one hidden affine layer with a
rectifying nonlinearity feeds three affine heads (move logits, attack
logits, value). Max pooling makes the network invariant to entity order and
duplication, and handles the variable number of visible agents.

All math is float64 numpy. forward/backward are pure with respect to the
parameters, so one parameter snapshot can serve any number of rollouts.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .config import NeuralConfig
from .observations import ENTITY_FEATURES, EncodedObs, N_ATTACKS, N_MOVES, N_TILE_INDICES


@dataclass
class PolicyParams:
    tile_embed: np.ndarray  # [7, tile_embed_dim]
    w_ent: np.ndarray       # [ENTITY_FEATURES, entity_dim]
    b_ent: np.ndarray       # [entity_dim]
    w_main: np.ndarray      # [tile_block + entity_dim, hidden]
    b_main: np.ndarray      # [hidden]
    w_move: np.ndarray      # [hidden, 5]
    b_move: np.ndarray      # [5]
    w_att: np.ndarray       # [hidden, 3]
    b_att: np.ndarray       # [3]
    w_val: np.ndarray       # [hidden, 1]
    b_val: np.ndarray       # [1]
    nonlinearity: str = "relu"

    def arrays(self) -> list:
        return [getattr(self, f.name) for f in fields(self) if f.name != "nonlinearity"]

    def array_names(self) -> list:
        return [f.name for f in fields(self) if f.name != "nonlinearity"]

    def count(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "PolicyParams":
        kwargs = {name: getattr(self, name).copy() for name in self.array_names()}
        return PolicyParams(nonlinearity=self.nonlinearity, **kwargs)

    def checksum(self) -> int:
        crc = 0
        for a in self.arrays():
            crc = zlib.crc32(np.ascontiguousarray(a, dtype=np.float32).tobytes(), crc)
        return crc


def init_params(cfg: NeuralConfig, crop_size: int, seed: int) -> PolicyParams:
    """Fan-in-scaled uniform initialization, biases zero, deterministic in seed."""
    rng = np.random.default_rng(seed)
    tile_block = crop_size * crop_size * (cfg.tile_embed_dim + 1)

    def affine(n_in, n_out):
        bound = cfg.init_scale / np.sqrt(n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)

    embed_bound = cfg.init_scale / np.sqrt(cfg.tile_embed_dim)
    tile_embed = rng.uniform(-embed_bound, embed_bound, size=(N_TILE_INDICES, cfg.tile_embed_dim))
    w_ent, b_ent = affine(ENTITY_FEATURES, cfg.entity_dim)
    w_main, b_main = affine(tile_block + cfg.entity_dim, cfg.hidden_dim)
    w_move, b_move = affine(cfg.hidden_dim, N_MOVES)
    w_att, b_att = affine(cfg.hidden_dim, N_ATTACKS)
    w_val, b_val = affine(cfg.hidden_dim, 1)
    return PolicyParams(tile_embed, w_ent, b_ent, w_main, b_main,
                        w_move, b_move, w_att, b_att, w_val, b_val,
                        nonlinearity=cfg.nonlinearity)


class EncodedBatch(NamedTuple):
    """Stacked encoded observations with entity padding.

    tile_idx [B, T] int; nents [B, T]; entities [B, E, A]; ent_mask [B, E]
    (True where a real entity exists; every row has at least one).
    """
    tile_idx: np.ndarray
    nents: np.ndarray
    entities: np.ndarray
    ent_mask: np.ndarray


def stack_observations(encoded: list) -> EncodedBatch:
    """Pad a list of EncodedObs to a common entity count and stack."""
    batch = len(encoded)
    tiles = encoded[0].tile_idx.size
    max_ents = max(e.entities.shape[0] for e in encoded)
    tile_idx = np.empty((batch, tiles), dtype=np.int16)
    nents = np.empty((batch, tiles))
    entities = np.zeros((batch, max_ents, ENTITY_FEATURES))
    mask = np.zeros((batch, max_ents), dtype=bool)
    for i, e in enumerate(encoded):
        tile_idx[i] = e.tile_idx
        nents[i] = e.nents
        n = e.entities.shape[0]
        entities[i, :n] = e.entities
        mask[i, :n] = True
    return EncodedBatch(tile_idx, nents, entities, mask)


def batch_of_one(e: EncodedObs) -> EncodedBatch:
    return stack_observations([e])


class ForwardOutput(NamedTuple):
    move_logits: np.ndarray  # [B, 5]
    att_logits: np.ndarray   # [B, 3]
    value: np.ndarray        # [B]
    # intermediates retained for backward
    hidden: np.ndarray       # [B, H] post-nonlinearity
    pre_act: np.ndarray      # [B, H]
    concat: np.ndarray       # [B, tile_block + entity_dim]
    pool_argmax: np.ndarray  # [B, entity_dim] winning entity index per channel


def forward(params: PolicyParams, batch: EncodedBatch) -> ForwardOutput:
    """Batched forward pass; every row must contain at least one real entity."""
    if batch.entities.shape[2] != params.w_ent.shape[0]:
        raise ValueError(
            f"entity feature width {batch.entities.shape[2]} != {params.w_ent.shape[0]}"
        )
    if not batch.ent_mask.any(axis=1).all():
        raise ValueError("every observation needs at least one entity (self)")
    b, t = batch.tile_idx.shape
    emb = params.tile_embed[batch.tile_idx]              # [B, T, D]
    tile_block = np.concatenate([emb, batch.nents[..., None]], axis=2).reshape(b, -1)

    proj = batch.entities @ params.w_ent + params.b_ent  # [B, E, K]
    masked = np.where(batch.ent_mask[..., None], proj, -np.inf)
    pool_argmax = masked.argmax(axis=1)                  # first max wins ties
    pooled = np.take_along_axis(proj, pool_argmax[:, None, :], axis=1)[:, 0, :]

    concat = np.concatenate([tile_block, pooled], axis=1)
    if concat.shape[1] != params.w_main.shape[0]:
        raise ValueError(
            f"input width {concat.shape[1]} != main layer width {params.w_main.shape[0]}"
        )
    pre_act = concat @ params.w_main + params.b_main
    if params.nonlinearity == "relu":
        hidden = np.maximum(pre_act, 0.0)
    elif params.nonlinearity == "tanh":
        hidden = np.tanh(pre_act)
    else:
        raise ValueError(f"unknown nonlinearity {params.nonlinearity!r}")
    move_logits = hidden @ params.w_move + params.b_move
    att_logits = hidden @ params.w_att + params.b_att
    value = (hidden @ params.w_val + params.b_val)[:, 0]
    return ForwardOutput(move_logits, att_logits, value, hidden, pre_act, concat, pool_argmax)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one action index from softmax(logits) using the given stream."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    return int(np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, p.size - 1))


def sample_batch(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row; consumes exactly B uniforms from the stream."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


@dataclass
class LossStats:
    policy_loss: float
    value_loss: float
    entropy: float

    @property
    def total(self) -> float:
        return self.policy_loss + self.value_loss - self.entropy


def loss_terms(params: PolicyParams, batch: EncodedBatch, move_idx: np.ndarray,
               att_idx: np.ndarray, returns: np.ndarray, advantages: np.ndarray,
               value_coef: float, entropy_coef: float,
               out: Optional[ForwardOutput] = None) -> LossStats:
    """Scalar loss terms (summed over the batch); used by the gradient oracle."""
    if out is None:
        out = forward(params, batch)
    rows = np.arange(len(move_idx))
    log_pm = log_softmax(out.move_logits)
    log_pa = log_softmax(out.att_logits)
    policy = -float(np.sum(advantages * (log_pm[rows, move_idx] + log_pa[rows, att_idx])))
    value = value_coef * float(np.sum((out.value - returns) ** 2))
    pm = softmax(out.move_logits)
    pa = softmax(out.att_logits)
    entropy = entropy_coef * float(-np.sum(pm * log_pm) - np.sum(pa * log_pa))
    return LossStats(policy, value, entropy)


def backward(params: PolicyParams, batch: EncodedBatch, move_idx: np.ndarray,
             att_idx: np.ndarray, returns: np.ndarray, advantages: np.ndarray,
             value_coef: float, entropy_coef: float) -> tuple:
    """Analytic gradients of the policy-gradient loss.

    Loss (summed over the batch): -sum adv * (log pi_move + log pi_attack)
    + value_coef * sum (value - return)^2 - entropy_coef * sum entropies.
    Returns (grads: PolicyParams-shaped, stats: LossStats, out: ForwardOutput).
    """
    out = forward(params, batch)
    b = batch.tile_idx.shape[0]
    rows = np.arange(b)

    log_pm = log_softmax(out.move_logits)
    log_pa = log_softmax(out.att_logits)
    pm = np.exp(log_pm)
    pa = np.exp(log_pa)
    h_m = -np.sum(pm * log_pm, axis=1)
    h_a = -np.sum(pa * log_pa, axis=1)

    stats = LossStats(
        -float(np.sum(advantages * (log_pm[rows, move_idx] + log_pa[rows, att_idx]))),
        value_coef * float(np.sum((out.value - returns) ** 2)),
        entropy_coef * float(np.sum(h_m + h_a)),
    )
    for term, name in ((stats.policy_loss, "policy"), (stats.value_loss, "value"),
                       (stats.entropy, "entropy")):
        if not np.isfinite(term):
            raise ValueError(f"non-finite {name} loss term: {term}")

    # d/dlogits of -adv*log pi is adv*(pi - onehot); the entropy bonus adds
    # entropy_coef * pi * (log pi + H) per row.
    onehot_m = np.zeros_like(pm)
    onehot_m[rows, move_idx] = 1.0
    onehot_a = np.zeros_like(pa)
    onehot_a[rows, att_idx] = 1.0
    adv = advantages[:, None]
    d_move = adv * (pm - onehot_m) + entropy_coef * pm * (log_pm + h_m[:, None])
    d_att = adv * (pa - onehot_a) + entropy_coef * pa * (log_pa + h_a[:, None])
    d_val = 2.0 * value_coef * (out.value - returns)

    hidden = out.hidden
    g_w_move = hidden.T @ d_move
    g_b_move = d_move.sum(axis=0)
    g_w_att = hidden.T @ d_att
    g_b_att = d_att.sum(axis=0)
    g_w_val = hidden.T @ d_val[:, None]
    g_b_val = np.array([d_val.sum()])

    d_hidden = d_move @ params.w_move.T + d_att @ params.w_att.T + d_val[:, None] @ params.w_val.T
    if params.nonlinearity == "relu":
        d_pre = d_hidden * (out.pre_act > 0)
    else:
        d_pre = d_hidden * (1.0 - hidden ** 2)

    g_w_main = out.concat.T @ d_pre
    g_b_main = d_pre.sum(axis=0)
    d_concat = d_pre @ params.w_main.T

    entity_dim = params.w_ent.shape[1]
    d_tile_block = d_concat[:, :-entity_dim]
    d_pool = d_concat[:, -entity_dim:]

    # Route pool gradients to the argmax entity of each channel.
    n_ent = batch.entities.shape[1]
    d_proj = np.zeros((b * n_ent, entity_dim))
    flat_rows = (rows[:, None] * n_ent + out.pool_argmax).ravel()
    flat_cols = np.tile(np.arange(entity_dim), b)
    np.add.at(d_proj, (flat_rows, flat_cols), d_pool.ravel())
    d_proj = d_proj.reshape(b, n_ent, entity_dim)
    ents_flat = batch.entities.reshape(b * n_ent, -1)
    g_w_ent = ents_flat.T @ d_proj.reshape(b * n_ent, entity_dim)
    g_b_ent = d_proj.sum(axis=(0, 1))

    embed_dim = params.tile_embed.shape[1]
    d_tiles = d_tile_block.reshape(b, -1, embed_dim + 1)[..., :embed_dim]
    g_embed = np.zeros_like(params.tile_embed)
    np.add.at(g_embed, batch.tile_idx.ravel(), d_tiles.reshape(-1, embed_dim))

    grads = PolicyParams(g_embed, g_w_ent, g_b_ent, g_w_main, g_b_main,
                         g_w_move, g_b_move, g_w_att, g_b_att, g_w_val, g_b_val,
                         nonlinearity=params.nonlinearity)
    return grads, stats, out


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params: PolicyParams) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in params.arrays()],
                   v=[np.zeros_like(a) for a in params.arrays()], t=0)


def adam_step(state: AdamState, params: PolicyParams, grads: PolicyParams,
              cfg: NeuralConfig) -> PolicyParams:
    """One Adam update with decoupled multiplicative weight decay, in place."""
    state.t += 1
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
    decay = 1.0 - lr * cfg.weight_decay
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params.arrays(), grads.arrays())):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay:
            p *= decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


CHECKPOINT_MAGIC = b"GRPC"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable, corrupt, or shape-incompatible checkpoint."""


def save_checkpoint(path, params: PolicyParams) -> None:
    """Binary layout: magic, u32 version, u32 array count, then per array
    u32 ndim + u32 dims + row-major float32 payload, all little-endian,
    ending with a CRC32 of every preceding byte."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    arrays = params.arrays()
    blob += struct.pack("<I", len(arrays))
    for a in arrays:
        blob += struct.pack("<I", a.ndim)
        blob += struct.pack(f"<{a.ndim}I", *a.shape)
        blob += np.ascontiguousarray(a, dtype="<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_checkpoint(path, nonlinearity: str = "relu") -> PolicyParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt")
    offset = 4
    version, n_arrays = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    arrays = []
    for _ in range(n_arrays):
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        size = int(np.prod(shape))
        payload = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        arrays.append(payload.reshape(shape).astype(np.float64))
    names = [f.name for f in fields(PolicyParams) if f.name != "nonlinearity"]
    if len(arrays) != len(names):
        raise CheckpointError(f"{path}: expected {len(names)} arrays, found {len(arrays)}")
    return PolicyParams(nonlinearity=nonlinearity, **dict(zip(names, arrays)))
