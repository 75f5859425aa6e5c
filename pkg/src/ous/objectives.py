"""Losses, the alpha gate, the adaptive-moment optimizer and the plateau schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, DomainError


def cross_entropy(logits, targets):
    targets = np.asarray(targets, dtype=int)
    logp = ag.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(targets)), targets]
    return -ag.mean(picked)


def polarity_loss(logits, labels):
    """Mean negative log-likelihood of the true polarity under softmax(logits)."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 2):
        raise DomainError("polarity labels must lie in 0..2")
    return cross_entropy(logits, labels)


def similarity_loss(v_face, v_scene):
    """Mean over the batch of 1 - cosine(face_b, scene_b)."""
    return ag.mean(1.0 - ag.cosine(v_face, v_scene, axis=-1))


def contrastive_loss(anchors, candidates, targets, tau):
    """InfoNCE of each anchor against a shared candidate set.

    Row b scores ``sim(anchor_b, candidate_j) / tau`` for every j and takes
    the negative log-softmax at ``targets[b]``; the result is the batch mean.
    """
    if candidates.shape[0] == 0:
        raise ContractError("contrastive loss needs at least one candidate")
    sims = ag.matmul(ag.l2_normalize(anchors, axis=-1), ag.l2_normalize(candidates, axis=-1).T)
    return cross_entropy(sims / tau, targets)


def pair_contrast_loss(v_scene, v_face, tau):
    """Scene-vs-face InfoNCE over the batch; the positive for scene i is face i."""
    return contrastive_loss(v_scene, v_face, np.arange(v_scene.shape[0]), tau)


def global_loss(l_polarity, l_similarity, l_contrast, alpha, prev_global):
    """Loss to differentiate and whether the gate is open.

    While the previous step's global loss exceeds ``alpha`` the three losses
    are summed; otherwise only the contrastive loss is used.
    """
    active = prev_global > alpha
    if active:
        return l_polarity + l_similarity + l_contrast, True
    return l_contrast, False


@dataclass
class LossReport:
    L_polarity: float
    L_similarity: float
    L_contrast: float
    L_global: float
    gate_active: bool
    step: int
    epoch: int


class Adam:
    """Adaptive-moment optimizer with bias correction; frozen parameters are skipped."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.trainable]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.assign(p.data - lr * update)


@dataclass
class PlateauSchedule:
    """Divide the learning rate when validation loss stops improving.

    After ``patience`` consecutive epochs without a strict decrease below the
    best value seen, ``lr`` is multiplied by ``factor`` and the counter resets.
    """

    lr: float
    patience: int = 5
    factor: float = 1 / 3
    floor: float = 1e-7
    overfit_guard: float = 0.80
    best: float = math.inf
    bad_epochs: int = 0
    decays: int = 0
    history: list = field(default_factory=list)

    def step(self, val_loss, train_acc=None):
        decayed = False
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
                self.decays += 1
                decayed = True
        flags = {
            "lr_decayed": decayed,
            "converged": self.lr < self.floor,
            "overfit": train_acc is not None and train_acc > self.overfit_guard,
        }
        self.history.append((val_loss, self.lr, flags))
        return self.lr, flags
