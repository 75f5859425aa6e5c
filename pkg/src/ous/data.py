"""Synthetic scene+face clip corpus, the clip container format and the frozen split.

Every clip shows a centred face square carrying a moving sinusoidal pattern
whose parameters identify the emotion, inside a scene whose colour, texture
and object blobs identify the polarity.  For a fraction of the clips of the
confusable pairs (happy/fear, sad/surprise) the face pattern is drawn from
the pair's shared mixture, so only the scene can separate them.
"""

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .config import GeneratorConfig
from .errors import DomainError, FormatError, ShapeError

EMOTIONS = ("happy", "sad", "neutral", "angry", "surprise", "disgust", "fear")
POLARITIES = ("positive", "neutral", "negative")
_POLARITY_OF = (0, 2, 1, 2, 1, 2, 2)
CONFUSABLE_PAIRS = ((0, 6), (1, 4))
RNG_ALGORITHM = "numpy-Philox4x64-10;substream-key=sha256(seed:stream)[:16]"

CLIP_MAGIC = b"OUSC"
CLIP_VERSION = 1
_HEADER = struct.Struct("<4s5I")
_MAX_ELEMENTS = 2**31


def polarity_from_emotion(emotion):
    if isinstance(emotion, bool) or not isinstance(emotion, (int, np.integer)):
        raise DomainError(f"emotion must be an integer id, got {emotion!r}")
    if not 0 <= emotion < len(EMOTIONS):
        raise DomainError(f"emotion id {emotion} outside 0..6")
    return _POLARITY_OF[emotion]


def _partner(emotion):
    for a, b in CONFUSABLE_PAIRS:
        if emotion == a:
            return b
        if emotion == b:
            return a
    return None


def substream(seed, stream):
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# -- clip container ---------------------------------------------------------

def write_clip(path, clip):
    clip = np.asarray(clip)
    if clip.ndim != 4 or min(clip.shape) < 1:
        raise ShapeError(f"clip must be a non-empty T x C x H x W array, got {clip.shape}")
    header = _HEADER.pack(CLIP_MAGIC, CLIP_VERSION, *clip.shape)
    payload = np.ascontiguousarray(clip, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def decode_clip(blob):
    if len(blob) < 4 or blob[:4] != CLIP_MAGIC:
        raise FormatError("bad clip magic", 0)
    if len(blob) < _HEADER.size:
        raise FormatError("truncated clip header", len(blob))
    _, version, *dims = _HEADER.unpack_from(blob)
    if version != CLIP_VERSION:
        raise FormatError(f"unsupported clip version {version}", 4)
    for i, extent in enumerate(dims):
        if extent < 1:
            raise FormatError(f"clip extent {'TCHW'[i]} must be >= 1", 8 + 4 * i)
    count = int(np.prod(dims, dtype=np.uint64))
    if count >= _MAX_ELEMENTS:
        raise FormatError("clip extents overflow the element limit", 8)
    need = _HEADER.size + 4 * count
    if len(blob) < need:
        raise FormatError("truncated clip payload", len(blob))
    if len(blob) > need:
        raise FormatError("trailing bytes after clip payload", need)
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=_HEADER.size)
    return data.astype(np.float32).reshape(dims)


def read_clip(path):
    with open(path, "rb") as fh:
        return decode_clip(fh.read())


# -- corpus records ---------------------------------------------------------

@dataclass
class ClipRecord:
    clip_id: str
    emotion: int
    polarity: int
    ambiguous: bool
    split: str
    file: str


@dataclass(frozen=True)
class ClipLatents:
    """Generator-side parameters that decide a clip's label evidence."""

    face_pattern: int
    scene_polarity: int


@dataclass
class Manifest:
    seed: int
    config: GeneratorConfig
    clips: list
    rng: str = RNG_ALGORITHM

    def to_json(self):
        doc = {
            "seed": self.seed,
            "config": asdict(self.config),
            "rng": self.rng,
            "clips": [asdict(c) for c in self.clips],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        clips = [ClipRecord(**c) for c in doc["clips"]]
        return cls(doc["seed"], GeneratorConfig(**doc["config"]), clips, doc.get("rng", RNG_ALGORITHM))

    @classmethod
    def load(cls, data_dir):
        with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def split(self, name):
        return [c for c in self.clips if c.split == name]


def plan_corpus(config):
    """Labels, splits and latent parameters for every clip, without pixels."""
    n = config.clips_per_class
    n_val = round(7 * n * config.val_fraction)
    base, extra = divmod(n_val, 7)
    n_amb = round(n * config.ambiguous_fraction)
    plan = []
    for emotion, name in enumerate(EMOTIONS):
        val_count = base + (emotion < extra)
        val_rank = substream(config.seed, f"split/{name}").permutation(n)
        partner = _partner(emotion)
        amb_rank = substream(config.seed, f"ambiguity/{name}").permutation(n)
        for i in range(n):
            clip_id = f"{name}_{i:04d}"
            ambiguous = partner is not None and amb_rank[i] < n_amb
            # Alternate own/partner pattern so the mixture is exactly balanced.
            pattern = partner if ambiguous and amb_rank[i] % 2 else emotion
            polarity = polarity_from_emotion(emotion)
            record = ClipRecord(
                clip_id=clip_id,
                emotion=emotion,
                polarity=polarity,
                ambiguous=bool(ambiguous),
                split="val" if val_rank[i] < val_count else "train",
                file=f"clips/{clip_id}.ousc",
            )
            plan.append((record, ClipLatents(int(pattern), polarity)))
    return plan


# -- pixel synthesis --------------------------------------------------------

# cycles per face width, orientation (rad), phase velocity (rad/frame), tint
_FACE_PATTERNS = (
    (1.0, 0.00, 0.70, (1.00, 0.85, 0.20)),
    (3.0, 1.57, -0.50, (0.20, 0.35, 1.00)),
    (2.0, 0.79, 0.00, (0.60, 0.60, 0.60)),
    (4.0, 2.36, 0.90, (1.00, 0.20, 0.20)),
    (1.5, 0.39, -0.90, (0.30, 1.00, 0.90)),
    (3.5, 1.18, 0.35, (0.50, 0.90, 0.20)),
    (2.5, 1.96, -0.25, (0.70, 0.30, 0.90)),
)
_SCENE_COLORS = ((0.90, 0.78, 0.40), (0.55, 0.55, 0.55), (0.28, 0.14, 0.20))
_SCENE_TEXTURE = (0.04, 0.07, 0.14)
_BLOB_COLORS = ((1.00, 0.95, 0.20), (0.75, 0.75, 0.80), (0.55, 0.02, 0.05))
_BLOB_COUNTS = (3, 2, 4)


def render_clip(config, record, latents):
    rng = substream(config.seed, record.clip_id)
    T, C, H, W, S = config.T, config.C, config.H, config.W, config.face_size
    scene = _render_scene(rng, latents.scene_polarity, T, C, H, W)
    face = _render_face(rng, latents.face_pattern, T, C, S)
    top, left = (H - S) // 2, (W - S) // 2
    scene[:, :, top:top + S, left:left + S] = face
    if config.noise_std > 0:
        scene = scene + rng.normal(0.0, config.noise_std, scene.shape)
    return np.clip(scene, 0.0, 1.0).astype(np.float32)


def _channels(color, C):
    color = np.asarray(color, dtype=float)
    if C <= 3:
        return color[:C]
    return np.resize(color, C)


def _render_face(rng, pattern, T, C, S):
    freq, theta, velocity, tint = _FACE_PATTERNS[pattern]
    freq *= rng.uniform(0.92, 1.08)
    theta += rng.uniform(-0.08, 0.08)
    phase0 = rng.uniform(0, 2 * np.pi)
    base = 0.2 + 0.5 * _channels(tint, C) + rng.uniform(-0.05, 0.05)
    yy, xx = np.mgrid[0:S, 0:S] / S
    along = xx * np.cos(theta) + yy * np.sin(theta)
    t = np.arange(T)[:, None, None]
    wave = np.sin(2 * np.pi * freq * along[None] + phase0 + velocity * t)
    return base[None, :, None, None] + 0.25 * wave[:, None]


def _render_scene(rng, polarity, T, C, H, W):
    color = _channels(_SCENE_COLORS[polarity], C) + rng.uniform(-0.05, 0.05, C)
    coarse = rng.standard_normal((C, H // 8 + 1, W // 8 + 1))
    texture = np.repeat(np.repeat(coarse, 8, axis=1), 8, axis=2)[:, :H, :W]
    fine = rng.standard_normal((C, H, W)) * 0.5
    canvas = color[:, None, None] + _SCENE_TEXTURE[polarity] * (texture + fine)
    yy, xx = np.mgrid[0:H, 0:W]
    blob = _channels(_BLOB_COLORS[polarity], C)
    for _ in range(_BLOB_COUNTS[polarity]):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        radius = rng.uniform(4, 8)
        if polarity == 1:
            mask = (np.abs(yy - cy) < radius) & (np.abs(xx - cx) < 1.5 * radius)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < radius**2
        canvas[:, mask] = blob[:, None]
    drift = rng.uniform(-0.5, 0.5)
    frames = [np.roll(canvas, int(round(drift * t)), axis=2) for t in range(T)]
    return np.stack(frames)


def generate_corpus(config, out_dir):
    """Write every clip plus ``manifest.json`` under ``out_dir``."""
    config.validate()
    os.makedirs(os.path.join(out_dir, "clips"), exist_ok=True)
    plan = plan_corpus(config)
    for record, latents in plan:
        write_clip(os.path.join(out_dir, record.file), render_clip(config, record, latents))
    manifest = Manifest(config.seed, config, [record for record, _ in plan])
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    return manifest


def load_clips(data_dir, records):
    return np.stack([read_clip(os.path.join(data_dir, r.file)) for r in records])


# -- frozen preprocessing ---------------------------------------------------

def split_face_scene(clip, face_size):
    """Centred face crop and the scene with the face square mean-filled.

    Works on any array whose last three axes are C x H x W.  The fill value is
    the per-frame, per-channel mean of the pixels outside the face square.
    """
    clip = np.asarray(clip)
    H, W = clip.shape[-2:]
    if face_size > min(H, W) or face_size < 1:
        raise ShapeError(f"face_size {face_size} does not fit a {H}x{W} frame")
    top, left = (H - face_size) // 2, (W - face_size) // 2
    rows, cols = slice(top, top + face_size), slice(left, left + face_size)
    face = clip[..., rows, cols].copy()
    outside = np.ones((H, W), dtype=bool)
    outside[rows, cols] = False
    scene = clip.copy()
    if outside.any():
        fill = clip[..., outside].mean(axis=-1)
        scene[..., rows, cols] = fill[..., None, None]
    return face, scene


# -- brute-force label oracle -----------------------------------------------

def latent_bayes_accuracy(config, keys=("face",)):
    """Accuracy on ambiguous clips of the majority-vote classifier over latents.

    ``keys`` selects which generator parameters the classifier may see:
    ``("face",)`` for the face pattern alone, ``("face", "scene")`` for the
    pattern plus the scene polarity.  The classifier is fit by counting over
    the full corpus plan, i.e. it is the empirical Bayes rule.
    """
    plan = plan_corpus(config)

    def key(latents):
        parts = []
        if "face" in keys:
            parts.append(latents.face_pattern)
        if "scene" in keys:
            parts.append(latents.scene_polarity)
        return tuple(parts)

    counts = {}
    for record, latents in plan:
        table = counts.setdefault(key(latents), np.zeros(7, dtype=int))
        table[record.emotion] += 1
    rule = {k: int(np.argmax(v)) for k, v in counts.items()}
    amb = [(r, lat) for r, lat in plan if r.ambiguous]
    if not amb:
        return float("nan")
    return float(np.mean([rule[key(lat)] == r.emotion for r, lat in amb]))
