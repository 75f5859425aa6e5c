"""Learnable prompts, the frozen text tower and the cosine/temperature class head."""

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .data import EMOTIONS, substream
from .errors import DomainError, NumericError
from .nn import Linear, Module, TransformerBlock


class PromptContext(Module):
    """One context bank [V]_1..[V]_M shared by every class."""

    def __init__(self, length, width, rng, std=0.02):
        self.vectors = Parameter(rng.standard_normal((length, width)) * std)

    @property
    def M(self):
        return self.vectors.shape[0]


class ClassVocabulary(Module):
    """Fixed random unit embedding per emotion name, in label order."""

    def __init__(self, width, seed):
        rows = []
        for name in EMOTIONS:
            v = substream(seed, f"class-token/{name}").standard_normal(width)
            rows.append(v / np.linalg.norm(v))
        self.tokens = Parameter(np.stack(rows), trainable=False)


class Temperature(Module):
    def __init__(self, tau):
        self.log_tau = Parameter(np.log(tau))

    def value(self):
        return ag.exp(self.log_tau)


def build_prompt(class_id, context, vocab):
    """[V]_1 ... [V]_M followed by the class token: (M + 1) x D_t."""
    if isinstance(class_id, bool) or not 0 <= int(class_id) < vocab.tokens.shape[0]:
        raise DomainError(f"class id {class_id!r} outside 0..{vocab.tokens.shape[0] - 1}")
    cls = vocab.tokens[int(class_id):int(class_id) + 1]
    return ag.concat([context.vectors, cls], axis=0)


class TextEncoder(Module):
    """Frozen transformer over a prompt, mean-pooled, projected and L2-normalized."""

    def __init__(self, width, out_width, depth, heads, rng):
        self.blocks = [TransformerBlock(width, heads, rng) for _ in range(depth)]
        self.proj = Linear(width, out_width, rng, bias=False)
        self.freeze()

    def __call__(self, prompts):
        x = prompts if prompts.ndim == 3 else prompts.reshape(1, *prompts.shape)
        for block in self.blocks:
            x = block(x)
        out = ag.l2_normalize(self.proj(ag.mean(x, axis=1)), axis=-1)
        return out if prompts.ndim == 3 else out[0]


def text_encode(encoder, prompt):
    return encoder(prompt)


def class_logits(fused, class_embeddings, temperature):
    """cosine(fused_b, class_k) / tau for every batch row and class."""
    norms = np.linalg.norm(fused.data, axis=-1)
    if (norms == 0).any():
        raise NumericError("zero-norm fused feature cannot be scored by cosine")
    tau = temperature.value() if isinstance(temperature, Temperature) else temperature
    cos = ag.matmul(ag.l2_normalize(fused, axis=-1), class_embeddings.T)
    return cos / tau


class PromptHead(Module):
    """Everything between fused features and the seven emotion logits."""

    def __init__(self, cfg, d_out, rng):
        self.context = PromptContext(cfg.prompt_length, cfg.D_t, rng, cfg.context_std)
        self.vocab = ClassVocabulary(cfg.D_t, cfg.vocab_seed)
        self.text = TextEncoder(cfg.D_t, d_out, cfg.depth, cfg.heads, rng)
        self.temperature = Temperature(cfg.tau_init)

    def class_embeddings(self):
        prompts = ag.stack(
            [build_prompt(k, self.context, self.vocab) for k in range(len(EMOTIONS))], axis=0
        )
        return self.text(prompts)

    def __call__(self, fused):
        return class_logits(fused, self.class_embeddings(), self.temperature)
