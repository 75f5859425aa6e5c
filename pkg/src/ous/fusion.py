"""Type Fusion Encoder: cross-type attention driven by one shared bank of learnable queries."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .data import substream
from .errors import ShapeError
from .nn import MLP, LayerNorm, Linear, Module, merge_heads, split_heads


class LearnableQueries(Module):
    def __init__(self, values, mu, sigma):
        self.Q_learn = Parameter(values)
        self.init_mu = mu
        self.init_sigma = sigma


def init_queries(n_q, d_f, mu, sigma, seed):
    """Elementwise independent N(mu, sigma^2) query bank, deterministic in ``seed``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = substream(seed, "learnable-queries")
    return LearnableQueries(mu + sigma * rng.standard_normal((n_q, d_f)), mu, sigma)


@dataclass
class FusedFeatures:
    O_final: Tensor
    pooled: Tensor


class TFEBlock(Module):
    """One cross-type attention block.

    Keys/values of each type are layer-normalized first, both types are
    attended with the same query projection, the two results are summed and
    normalized, then an MLP and a final normalization follow.  With
    ``residual`` the block input is added before each of the two output
    normalizations.
    """

    def __init__(self, d, heads, mlp_hidden, queries, rng, residual=True):
        if d % heads:
            raise ShapeError(f"fusion width {d} not divisible by {heads} heads")
        self.queries = queries
        self.heads = heads
        self.residual = residual
        self.ln_face = LayerNorm(d)
        self.ln_scene = LayerNorm(d)
        self.wq = Linear(d, d, rng)
        self.wk_face = Linear(d, d, rng, bias=False)
        self.wv_face = Linear(d, d, rng)
        self.wk_scene = Linear(d, d, rng, bias=False)
        self.wv_scene = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln_attn = LayerNorm(d)
        self.mlp = MLP(d, mlp_hidden, rng)
        self.ln_out = LayerNorm(d)

    def _query_heads(self, q_state, inject):
        q_in = q_state + self.queries.Q_learn if inject else q_state
        return split_heads(self.wq(q_in), self.heads)

    def attention_weights(self, q_state, face_kv, scene_kv, inject=False):
        q = self._query_heads(q_state, inject)
        scale = 1.0 / np.sqrt(q.shape[-1])
        out = []
        for kv, ln, wk in ((face_kv, self.ln_face, self.wk_face), (scene_kv, self.ln_scene, self.wk_scene)):
            k = split_heads(wk(ln(kv)), self.heads)
            out.append(ag.softmax(ag.matmul(q, k.swapaxes(-1, -2)) * scale, axis=-1))
        return out

    def __call__(self, q_state, face_kv, scene_kv, inject=False):
        d = q_state.shape[-1]
        if face_kv.shape[-1] != d or scene_kv.shape[-1] != d:
            raise ShapeError("query state and key/value sets must share the fusion width")
        face_n = self.ln_face(face_kv)
        scene_n = self.ln_scene(scene_kv)
        q = self._query_heads(q_state, inject)
        a_face = ag.scaled_dot_attention(
            q, split_heads(self.wk_face(face_n), self.heads), split_heads(self.wv_face(face_n), self.heads)
        )
        a_scene = ag.scaled_dot_attention(
            q, split_heads(self.wk_scene(scene_n), self.heads), split_heads(self.wv_scene(scene_n), self.heads)
        )
        attn = self.wo(merge_heads(a_face + a_scene))
        o_attn = self.ln_attn(q_state + attn if self.residual else attn)
        o_ff = self.mlp(o_attn)
        return self.ln_out(o_attn + o_ff if self.residual else o_ff)


class TypeFusionEncoder(Module):
    """Stack of TFE blocks over [V_pol; V_ft'] face tokens and [V_pol; V_st'] scene tokens.

    The first block's query state is the broadcast query bank; later blocks
    take the previous output and re-add the shared bank to their queries.
    """

    def __init__(self, cfg, d_pol, d_face, d_scene, rng, seed=0):
        self.queries = init_queries(cfg.n_q, cfg.D_f, cfg.mu, cfg.sigma, seed)
        self.pol_face = Linear(d_pol, cfg.D_f, rng)
        self.pol_scene = Linear(d_pol, cfg.D_f, rng)
        self.face_in = Linear(d_face, cfg.D_f, rng)
        self.scene_in = Linear(d_scene, cfg.D_f, rng)
        self.blocks = [
            TFEBlock(cfg.D_f, cfg.heads, cfg.mlp_hidden, self.queries, rng, cfg.residual)
            for _ in range(cfg.blocks)
        ]

    def tokens(self, v_ftp, v_stp, v_pol):
        face_kv = ag.stack([self.pol_face(v_pol), self.face_in(v_ftp)], axis=1)
        scene_kv = ag.stack([self.pol_scene(v_pol), self.scene_in(v_stp)], axis=1)
        return face_kv, scene_kv

    def __call__(self, v_ftp, v_stp, v_pol):
        face_kv, scene_kv = self.tokens(v_ftp, v_stp, v_pol)
        q = self.queries.Q_learn
        state = ag.broadcast_to(q, (v_ftp.shape[0],) + q.shape)
        for i, block in enumerate(self.blocks):
            state = block(state, face_kv, scene_kv, inject=i > 0)
        return FusedFeatures(state, ag.mean(state, axis=1))


def tfe_forward(encoder, v_ftp, v_stp, v_pol):
    return encoder(v_ftp, v_stp, v_pol)
