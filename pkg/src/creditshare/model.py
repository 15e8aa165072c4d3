"""Return decomposition model: temporal causal attention over steps, then
coalition-masked attention over agents whose Monte Carlo average yields a
per-agent per-step credit. The model's scalar return prediction is, by
definition, the sum of the credit matrix, so the efficiency identity holds
exactly on every forward pass.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, LayerNorm, Linear

NEG_INF = ad.NEG_INF
HADAMARD = ad.HADAMARD


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    state_dim: int
    n_actions: int
    n_agents: int
    max_horizon: int
    embed_dim: int = 64
    n_heads: int = 4
    ffw_dim: int = 128
    n_layers: int = 1
    k_samples: int = 3
    mask_mode: str = NEG_INF            # coalition masking semantics
    positional: str = "learned"         # or "sinusoidal"
    coalition_sampling: str = "permutation"  # or "uniform"
    per_step_coalitions: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ModelConfigError("n_layers must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ModelConfigError("n_heads must divide embed_dim")
        if self.k_samples < 1:
            raise ModelConfigError("k_samples must be >= 1")
        if self.mask_mode not in (NEG_INF, HADAMARD):
            raise ModelConfigError(f"unknown mask_mode {self.mask_mode!r}")
        if self.coalition_sampling not in ("permutation", "uniform"):
            raise ModelConfigError(
                f"unknown coalition_sampling {self.coalition_sampling!r}")

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# coalition masks
# ---------------------------------------------------------------------------

def sample_coalitions(n_agents, focal, k, rng, law="permutation"):
    """K presence masks (focal bit always 1) for one focal agent.

    permutation law: the coalition is the set of agents preceding the focal
    agent in a uniform random permutation, which makes an unweighted mean of
    per-coalition values an unbiased estimate of the size-weighted sum.
    uniform law: every other agent joins independently with probability 1/2.
    """
    if k < 1 or n_agents < 1:
        raise ValueError("need k >= 1 and n_agents >= 1")
    masks = np.zeros((k, n_agents))
    for s in range(k):
        if law == "permutation":
            perm = rng.permutation(n_agents)
            for j in perm:
                masks[s, j] = 1.0
                if j == focal:
                    break
        else:
            masks[s] = (rng.random(n_agents) < 0.5).astype(float)
            masks[s, focal] = 1.0
    return masks


def sample_coalition_matrices(n_agents, k, rng, law="permutation"):
    """K full NxN mask matrices; row i is focal agent i's presence mask.

    With the permutation law a single permutation per sample supplies a
    consistent prefix coalition to every focal agent at once.
    """
    masks = np.zeros((k, n_agents, n_agents))
    for s in range(k):
        if law == "permutation":
            perm = rng.permutation(n_agents)
            rank = np.empty(n_agents, dtype=np.int64)
            rank[perm] = np.arange(n_agents)
            masks[s] = (rank[None, :] <= rank[:, None]).astype(float)
        else:
            for i in range(n_agents):
                row = (rng.random(n_agents) < 0.5).astype(float)
                row[i] = 1.0
                masks[s, i] = row
    return masks


def exhaustive_coalition_matrices(n_agents):
    """All n! permutation-prefix mask matrices, uniformly weighted."""
    mats = []
    for perm in itertools.permutations(range(n_agents)):
        rank = np.empty(n_agents, dtype=np.int64)
        rank[list(perm)] = np.arange(n_agents)
        mats.append((rank[None, :] <= rank[:, None]).astype(float))
    masks = np.array(mats)
    weights = np.full(len(mats), 1.0 / len(mats))
    return masks, weights


def weighted_subset_matrices(n_agents):
    """One mask matrix per coalition index with exact size-based weights.

    Row i of matrix s encodes the s-th subset of the other agents (ordered
    by size, then lexicographically), so every focal agent shares the same
    subset-size sequence and therefore the same weight vector.
    """
    n = n_agents
    count = 2 ** (n - 1)
    masks = np.zeros((count, n, n))
    weights = np.zeros(count)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        s = 0
        for size in range(n):
            w = (math.factorial(size) * math.factorial(n - size - 1)
                 / math.factorial(n))
            for combo in itertools.combinations(others, size):
                masks[s, i, i] = 1.0
                for j in combo:
                    masks[s, i, j] = 1.0
                weights[s] = w
                s += 1
    return masks, weights


# ---------------------------------------------------------------------------
# attention blocks
# ---------------------------------------------------------------------------

def _split_heads(x, b, t, n, h, dh):
    # [B,T,N,d] -> [B,T,N,H,dh]
    return ad.reshape(x, (b, t, n, h, dh))


class _AttentionCore:
    def __init__(self, cfg, rng):
        d = cfg.embed_dim
        self.cfg = cfg
        self.ln1 = LayerNorm(d)
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def params(self):
        out = []
        for m in (self.ln1, self.wq, self.wk, self.wv, self.wo):
            out.extend(m.params())
        return out


class _BlockBase(_AttentionCore):
    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.ln2 = LayerNorm(cfg.embed_dim)
        self.ffw = MLP(cfg.embed_dim, [cfg.ffw_dim], cfg.embed_dim, rng,
                       activation="relu")

    def params(self):
        return super().params() + self.ln2.params() + self.ffw.params()


class TemporalBlock(_BlockBase):
    """Per-agent self-attention along time with a strict causal mask.

    The causal mask always uses exclusion (neg-inf) semantics: output at
    step t must not depend on later steps at all.
    """

    def __call__(self, x, causal_mask):
        b, t, n, d = x.shape
        h = self.cfg.n_heads
        dh = d // h
        z = self.ln1(x)
        axes = (0, 2, 3, 1, 4)  # [B,T,N,H,dh] -> [B,N,H,T,dh]
        q = ad.transpose(_split_heads(self.wq(z), b, t, n, h, dh), axes)
        k = ad.transpose(_split_heads(self.wk(z), b, t, n, h, dh), axes)
        v = ad.transpose(_split_heads(self.wv(z), b, t, n, h, dh), axes)
        scores = (q @ ad.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / np.sqrt(dh))
        att = ad.masked_softmax(scores, causal_mask, mode=NEG_INF)
        out = att @ v                                  # [B,N,H,T,dh]
        out = ad.transpose(out, (0, 3, 1, 2, 4))       # [B,T,N,H,dh]
        out = self.wo(ad.reshape(out, (b, t, n, d)))
        x = x + out
        return x + self.ffw(self.ln2(x))


class SpatialBlock(_BlockBase):
    """Self-attention across agents at each step (grand coalition).

    Used for the intermediate layers of a stacked model; the coalition-
    masked credit estimation happens in the final CoalitionHead.
    """

    def __call__(self, x):
        b, t, n, d = x.shape
        h = self.cfg.n_heads
        dh = d // h
        z = self.ln1(x)
        axes = (0, 1, 3, 2, 4)  # [B,T,N,H,dh] -> [B,T,H,N,dh]
        q = ad.transpose(_split_heads(self.wq(z), b, t, n, h, dh), axes)
        k = ad.transpose(_split_heads(self.wk(z), b, t, n, h, dh), axes)
        v = ad.transpose(_split_heads(self.wv(z), b, t, n, h, dh), axes)
        scores = (q @ ad.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / np.sqrt(dh))
        att = ad.softmax(scores)
        out = att @ v
        out = ad.transpose(out, (0, 1, 3, 2, 4))
        out = self.wo(ad.reshape(out, (b, t, n, d)))
        x = x + out
        return x + self.ffw(self.ln2(x))


class CoalitionHead(_BlockBase):
    """Coalition-masked attention over agents plus a scalar credit head.

    For each sampled mask matrix, focal agent i attends only to the agents
    present in its coalition (row i of the mask); the attended vector is
    mapped to a scalar per-coalition value and the weighted mean over the
    sampled coalitions is the credit estimate.
    """

    def __init__(self, cfg, rng):
        super().__init__(cfg, rng)
        self.head = Linear(cfg.embed_dim, 1, rng)

    def params(self):
        return super().params() + self.head.params()

    def __call__(self, x, masks, weights=None, return_attention=False):
        b, t, n, d = x.shape
        h = self.cfg.n_heads
        dh = d // h
        k_samples = masks.shape[0]
        z = self.ln1(x)
        axes = (0, 1, 3, 2, 4)
        q = ad.transpose(_split_heads(self.wq(z), b, t, n, h, dh), axes)
        k = ad.transpose(_split_heads(self.wk(z), b, t, n, h, dh), axes)
        v = ad.transpose(_split_heads(self.wv(z), b, t, n, h, dh), axes)
        scores = (q @ ad.transpose(k, (0, 1, 2, 4, 3))) * (1.0 / np.sqrt(dh))
        # [B,T,H,N,N] -> broadcast a sample axis: [B,K,T,H,N,N]
        scores = ad.reshape(scores, (b, 1, t, h, n, n)) + Tensor(
            np.zeros((1, k_samples, 1, 1, 1, 1)))
        if masks.ndim == 3:          # shared across steps: [K,N,N]
            m = masks.reshape(1, k_samples, 1, 1, n, n)
        else:                        # per-step masks: [K,T,N,N]
            m = masks.reshape(1, k_samples, t, 1, n, n)
        att = ad.masked_softmax(scores, m, mode=self.cfg.mask_mode)
        v6 = ad.reshape(v, (b, 1, t, h, n, dh))
        out = att @ v6                                   # [B,K,T,H,N,dh]
        out = ad.transpose(out, (0, 1, 2, 4, 3, 5))      # [B,K,T,N,H,dh]
        out = self.wo(ad.reshape(out, (b, k_samples, t, n, d)))
        zk = ad.reshape(x, (b, 1, t, n, d)) + out
        zk = zk + self.ffw(self.ln2(zk))
        per_coalition = ad.reshape(self.head(zk), (b, k_samples, t, n))
        if weights is None:
            credits = per_coalition.mean(axis=1)
        else:
            w = Tensor(np.asarray(weights).reshape(1, -1, 1, 1))
            credits = (per_coalition * w).sum(axis=1)
        if return_attention:
            return credits, att
        return credits


class ReturnDecomposer:
    """Full pipeline: embed, L-1 temporal+spatial layers, final temporal
    block + coalition head. A single layer is the plain variant; stacking
    layers alternates temporal and spatial blocks."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        d = cfg.embed_dim
        self.embed_mlp = MLP(cfg.state_dim + cfg.n_actions, [d], d, rng,
                             activation="relu")
        if cfg.positional == "learned":
            self.pos = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_horizon, d)),
                              requires_grad=True)
        elif cfg.positional == "sinusoidal":
            self.pos = Tensor(_sinusoidal_table(cfg.max_horizon, d))
        else:
            raise ModelConfigError(f"unknown positional {cfg.positional!r}")
        self.temporal = [TemporalBlock(cfg, rng) for _ in range(cfg.n_layers)]
        self.spatial = [SpatialBlock(cfg, rng) for _ in range(cfg.n_layers - 1)]
        self.coalition_head = CoalitionHead(cfg, rng)

    def params(self):
        out = self.embed_mlp.params()
        if self.pos.requires_grad:
            out.append(self.pos)
        for blk in self.temporal:
            out.extend(blk.params())
        for blk in self.spatial:
            out.extend(blk.params())
        out.extend(self.coalition_head.params())
        return out

    # forward pieces ------------------------------------------------------
    def embed(self, states, actions):
        """[B,T,N,ds] states + [B,T,N] int actions -> [B,T,N,d] embeddings."""
        b, t, n, _ = states.shape
        if t > self.cfg.max_horizon:
            raise ModelConfigError(
                f"horizon {t} exceeds positional table {self.cfg.max_horizon}")
        one_hot = np.zeros((b, t, n, self.cfg.n_actions))
        idx = np.indices((b, t, n))
        one_hot[idx[0], idx[1], idx[2], actions] = 1.0
        x = Tensor(np.concatenate([states, one_hot], axis=-1))
        e = self.embed_mlp(x)
        pos = ad.reshape(self.pos[0:t], (1, t, 1, self.cfg.embed_dim))
        return e + pos

    def forward(self, states, actions, masks, weights=None, valid=None):
        """Credit matrix [B,T,N] and its per-episode sum [B].

        `masks` come from sample_coalition_matrices (or an exhaustive
        enumeration); `valid` is an optional [B,T] 0/1 padding mask.
        """
        b, t, n, _ = states.shape
        causal = np.tril(np.ones((t, t)))
        x = self.embed(states, actions)
        for layer in range(self.cfg.n_layers):
            x = self.temporal[layer](x, causal)
            if layer < self.cfg.n_layers - 1:
                x = self.spatial[layer](x)
        credits = self.coalition_head(x, masks, weights)
        if valid is not None:
            credits = credits * Tensor(valid.reshape(b, t, 1))
        predicted_return = credits.sum(axis=(1, 2))
        return credits, predicted_return

    # inference / training ------------------------------------------------
    def draw_masks(self, rng, k=None, horizon=None):
        cfg = self.cfg
        k = k or cfg.k_samples
        if cfg.per_step_coalitions:
            if horizon is None:
                raise ValueError("per-step coalitions need the horizon")
            return np.array([
                sample_coalition_matrices(cfg.n_agents, horizon, rng,
                                          cfg.coalition_sampling)
                for _ in range(k)
            ])
        return sample_coalition_matrices(cfg.n_agents, k, rng,
                                         cfg.coalition_sampling)

    def predict_credits(self, trajectory, rng=None, masks=None, weights=None):
        """Credit matrix [T,N] for one trajectory, no gradient recording."""
        states = trajectory.states[None]
        actions = trajectory.actions[None]
        if masks is None:
            if rng is None:
                raise ValueError("need rng or explicit masks")
            masks = self.draw_masks(rng, horizon=trajectory.length)
        credits, _ = self.forward(states, actions, masks, weights)
        return credits.data[0]

    def exhaustive_credits(self, trajectory):
        """Average credit over all coalition permutations (small N only)."""
        masks, weights = exhaustive_coalition_matrices(self.cfg.n_agents)
        return self.predict_credits(trajectory, masks=masks, weights=weights)

    def loss(self, batch, rng, masks=None):
        """Mean squared error between true and reconstructed returns."""
        if not batch:
            raise ValueError("empty trajectory batch")
        states, actions, valid, returns = pad_batch(batch)
        if masks is None:
            masks = self.draw_masks(rng, horizon=states.shape[1])
        _, predicted = self.forward(states, actions, masks, valid=valid)
        err = predicted - Tensor(returns)
        return (err * err).mean()

    # checkpointing -------------------------------------------------------
    def save(self, path):
        arrays = {f"p{i}": p.data for i, p in enumerate(self.params())}
        np.savez(path, config_json=json.dumps(asdict(self.cfg)),
                 config_hash=self.cfg.hash(), **arrays)

    @classmethod
    def load(cls, path, expected_config: ModelConfig | None = None):
        with np.load(path, allow_pickle=False) as blob:
            cfg = ModelConfig(**json.loads(str(blob["config_json"])))
            stored_hash = str(blob["config_hash"])
            if stored_hash != cfg.hash():
                raise ValueError("checkpoint hash does not match its config")
            if expected_config is not None and expected_config.hash() != stored_hash:
                raise ValueError("checkpoint architecture differs from expected config")
            model = cls(cfg, np.random.default_rng(0))
            for i, p in enumerate(model.params()):
                data = blob[f"p{i}"]
                if data.shape != p.shape:
                    raise ValueError("checkpoint parameter shape mismatch")
                p.data = data.copy()
        return model


def _sinusoidal_table(length, dim):
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def pad_batch(batch):
    """Stack variable-length trajectories into padded arrays.

    Returns states [B,Tmax,N,ds], actions [B,Tmax,N], valid [B,Tmax] and
    episodic returns [B]. Padding trails, so the causal mask alone keeps
    valid steps from attending to padding.
    """
    b = len(batch)
    tmax = max(tr.length for tr in batch)
    n = batch[0].n_agents
    ds = batch[0].states.shape[2]
    states = np.zeros((b, tmax, n, ds))
    actions = np.zeros((b, tmax, n), dtype=np.int64)
    valid = np.zeros((b, tmax))
    returns = np.zeros(b)
    for idx, tr in enumerate(batch):
        t = tr.length
        states[idx, :t] = tr.states
        actions[idx, :t] = tr.actions
        valid[idx, :t] = 1.0
        returns[idx] = tr.episodic_return
    return states, actions, valid, returns
