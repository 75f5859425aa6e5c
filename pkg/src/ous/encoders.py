"""Dual-stream spatial encoding, early LSTM fusion and temporal reduction."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .data import split_face_scene
from .errors import ShapeError
from .nn import LayerNorm, Linear, Module, TransformerBlock


def patchify(frames, patch):
    """(n, C, H, W) pixels -> (n, N, C*patch*patch) flattened patches, row-major grid."""
    frames = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    n, C, H, W = frames.shape
    if H % patch or W % patch:
        raise ShapeError(f"{H}x{W} frame is not divisible into {patch}x{patch} patches")
    gh, gw = H // patch, W // patch
    x = frames.reshape(n, C, gh, patch, gw, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n, gh * gw, C * patch * patch)


def patch_embed(frames, E, E_pos, patch):
    """[v1 E; ...; vN E] + E_pos for every frame in ``frames``."""
    patches = patchify(frames, patch)
    if E_pos.shape[0] != patches.shape[1]:
        raise ShapeError(f"E_pos has {E_pos.shape[0]} rows for {patches.shape[1]} patches")
    return ag.matmul(ag.as_tensor(patches, E), E) + E_pos


@dataclass
class StreamFeatures:
    tokens: Tensor
    early: Tensor


class VisionEncoder(Module):
    """Patch embedding followed by ``depth`` pre-norm attention blocks.

    Positional embeddings cover the full frame grid; a smaller input (the face
    crop) reads the centred sub-grid, matching where the crop came from.
    """

    def __init__(self, cfg, channels, grid, rng):
        self.patch = cfg.patch
        self.early_blocks = cfg.early_blocks
        self.grid = tuple(grid)
        d_patch = channels * cfg.patch * cfg.patch
        self.E = Parameter(rng.standard_normal((d_patch, cfg.D)) / np.sqrt(d_patch))
        self.E_pos = Parameter(rng.standard_normal((grid[0] * grid[1], cfg.D)) * 0.02)
        self.blocks = [TransformerBlock(cfg.D, cfg.heads, rng, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.ln_out = LayerNorm(cfg.D)

    def positions(self, gh, gw):
        GH, GW = self.grid
        if gh > GH or gw > GW:
            raise ShapeError(f"{gh}x{gw} patch grid exceeds the encoder grid {GH}x{GW}")
        top, left = (GH - gh) // 2, (GW - gw) // 2
        rows = [(top + r) * GW + left + c for r in range(gh) for c in range(gw)]
        if rows == list(range(GH * GW)):
            return self.E_pos
        return self.E_pos[np.array(rows)]

    def embed(self, frames):
        H, W = frames.shape[-2:]
        if H % self.patch or W % self.patch:
            raise ShapeError(f"{H}x{W} frame is not divisible into {self.patch}-pixel patches")
        return patch_embed(frames, self.E, self.positions(H // self.patch, W // self.patch), self.patch)

    def truncated(self, frames, n_blocks):
        x = self.embed(frames)
        for block in self.blocks[:n_blocks]:
            x = block(x)
        return x

    def __call__(self, frames):
        x = self.embed(frames)
        early = None
        for i, block in enumerate(self.blocks, start=1):
            x = block(x)
            if i == self.early_blocks:
                early = x
        return StreamFeatures(self.ln_out(x), early)


def vision_encode(encoder, frames, frozen=True):
    """Run the shared encoder on (B*T) x C x H x W frames of one stream."""
    if np.ndim(frames.data if isinstance(frames, Tensor) else frames) != 4:
        raise ShapeError("vision_encode expects (B*T) x C x H x W frames")
    if frozen:
        with ag.no_grad():
            return encoder(frames)
    return encoder(frames)


def pool_tokens(tokens, batch):
    """(B*T) x N x D -> B x T x D by averaging tokens."""
    pooled = ag.mean(tokens, axis=1)
    return pooled.reshape(batch, pooled.shape[0] // batch, pooled.shape[1])


class LSTM(Module):
    """Standard LSTM cell (input/forget/output gates, tanh candidate) run along T."""

    def __init__(self, d_in, d_hidden, rng):
        std = 1.0 / np.sqrt(d_hidden)
        self.hidden = d_hidden
        self.W_x = Parameter(rng.uniform(-std, std, (d_in, 4 * d_hidden)))
        self.W_h = Parameter(rng.uniform(-std, std, (d_hidden, 4 * d_hidden)))
        self.b = Parameter(np.zeros(4 * d_hidden))

    def __call__(self, x):
        B, T, _ = x.shape
        if T < 1:
            raise ShapeError("LSTM needs at least one step")
        H = self.hidden
        xw = ag.matmul(x, self.W_x) + self.b
        h = ag.as_tensor(np.zeros((B, H), dtype=xw.dtype))
        c = h
        outputs = []
        for t in range(T):
            z = xw[:, t] + ag.matmul(h, self.W_h)
            i = ag.sigmoid(z[:, :H])
            f = ag.sigmoid(z[:, H:2 * H])
            g = ag.tanh(z[:, 2 * H:3 * H])
            o = ag.sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            h = o * ag.tanh(c)
            outputs.append(h)
        return ag.stack(outputs, axis=1)


def lstm_fuse(lstm, sequence):
    return lstm(sequence)


class FramesEncoder(Module):
    """Temporal transformer with learned position embeddings, mean over T, then a linear map."""

    def __init__(self, d_in, d_out, depth, heads, max_frames, rng):
        self.pos = Parameter(rng.standard_normal((max_frames, d_in)) * 0.02)
        self.blocks = [TransformerBlock(d_in, heads, rng) for _ in range(depth)]
        self.proj = Linear(d_in, d_out, rng)

    def __call__(self, x):
        T = x.shape[1]
        if T > self.pos.shape[0]:
            raise ShapeError(f"{T} frames exceed the {self.pos.shape[0]} position embeddings")
        x = x + self.pos[:T]
        for block in self.blocks:
            x = block(x)
        return self.proj(ag.mean(x, axis=1))

    def set_identity(self):
        for block in self.blocks:
            block.set_identity()


def frame_encode(encoder, sequence):
    return encoder(sequence)


def frames_mean(sequence):
    """Arithmetic mean over the frame axis of a B x T x F sequence."""
    if sequence.shape[1] < 1:
        raise ShapeError("frames_mean needs at least one frame")
    return ag.mean(sequence, axis=1)


class PolarityEncoder(Module):
    """Two-layer MLP on pooled early scene features; the hidden layer is V_pol."""

    def __init__(self, d_in, d_pol, rng):
        self.fc1 = Linear(d_in, d_pol, rng)
        self.head = Linear(d_pol, 3, rng)

    def __call__(self, pooled_early):
        v_pol = ag.relu(self.fc1(pooled_early))
        return v_pol, self.head(v_pol)


def pool_early(early, batch):
    """(B*T) x N x D early tokens -> B x D (mean over tokens, then frames)."""
    return ag.mean(pool_tokens(early, batch), axis=1)


def polarity_encode(encoder, early, batch):
    return encoder(pool_early(early, batch))


class AlignProjector(Module):
    """1-D convolution over the feature axis followed by a fully connected layer."""

    def __init__(self, d_in, d_out, kernel, rng):
        delta = np.zeros(kernel)
        delta[kernel // 2] = 1.0
        self.kernel = Parameter(delta + rng.standard_normal(kernel) * 0.02)
        self.conv_bias = Parameter(0.0)
        self.fc = Linear(d_in, d_out, rng)

    def __call__(self, x):
        return self.fc(ag.conv1d_same(x, self.kernel, self.conv_bias))

    def set_identity(self):
        delta = np.zeros(self.kernel.shape)
        delta[len(delta) // 2] = 1.0
        self.kernel.assign(delta)
        self.conv_bias.assign(0.0)
        self.fc.set_identity()


def align_project(face_projector, scene_projector, v_ft, v_st):
    return face_projector(v_ft), scene_projector(v_st)


@dataclass
class FrozenFeatures:
    """Outputs of the frozen front end (split + shared encoder + token pooling)."""

    face: np.ndarray
    scene: np.ndarray
    scene_early: np.ndarray

    def __len__(self):
        return len(self.face)

    def take(self, index):
        return FrozenFeatures(self.face[index], self.scene[index], self.scene_early[index])

    @property
    def vision_tap(self):
        return self.face.mean(axis=1)


def encode_frozen(encoder, clips, face_size, scene_input="full", chunk=64):
    """Frozen front end for a B x T x C x H x W batch of clips, in chunks of clips."""
    clips = np.asarray(clips)
    B, T = clips.shape[:2]
    dtype = encoder.E.dtype
    faces, scenes, earlies = [], [], []
    for start in range(0, B, chunk):
        part = clips[start:start + chunk].astype(dtype)
        b = len(part)
        face, scene = split_face_scene(part, face_size)
        if scene_input == "zero":
            scene = np.zeros_like(scene)
        f = vision_encode(encoder, face.reshape(b * T, *face.shape[2:]))
        s = vision_encode(encoder, scene.reshape(b * T, *scene.shape[2:]))
        with ag.no_grad():
            faces.append(pool_tokens(f.tokens, b).data)
            scenes.append(pool_tokens(s.tokens, b).data)
            earlies.append(pool_early(s.early, b).data)
    return FrozenFeatures(np.concatenate(faces), np.concatenate(scenes), np.concatenate(earlies))
