"""The assembled scene-guided recognizer."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import substream
from .encoders import (
    LSTM,
    AlignProjector,
    FramesEncoder,
    FrozenFeatures,
    PolarityEncoder,
    VisionEncoder,
    encode_frozen,
    frames_mean,
)
from .errors import ShapeError
from .fusion import TypeFusionEncoder
from .nn import Module
from .textual import PromptHead


@dataclass
class Outputs:
    logits: Tensor
    polarity_logits: Tensor
    V_ft: Tensor
    V_st: Tensor
    V_ft_aligned: Tensor
    V_st_aligned: Tensor
    V_pol: Tensor
    fused: Tensor

    def taps(self, features):
        """Feature snapshots at the four clustering taps, as numpy arrays."""
        return {
            "vision_encoder": features.vision_tap,
            "frame_encoder": self.V_ft.data,
            "pre_tfe_aligned": np.concatenate([self.V_ft_aligned.data, self.V_st_aligned.data], axis=1),
            "post_tfe_fused": self.fused.data,
        }


class OUSModel(Module):
    """Frozen shared vision encoder feeding trainable temporal, polarity, fusion and prompt parts.

    The vision encoder and the text tower stand in for pretrained weights, so
    their initialisation depends on their own seeds rather than the training
    seed.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        d, v, s = cfg.data, cfg.vision, cfg.streams
        grid = (d.H // v.patch, d.W // v.patch)
        self.vision = VisionEncoder(v, d.C, grid, substream(v.seed, "vision-encoder")).freeze()
        rng = substream(cfg.train.seed, "model-init")
        self.lstm = LSTM(v.D, v.D, rng)
        self.frames = FramesEncoder(v.D, s.F, s.frames_depth, s.frames_heads, d.T, rng)
        self.align_face = AlignProjector(s.F, s.F, s.conv_kernel, rng)
        self.align_scene = AlignProjector(v.D, s.F, s.conv_kernel, rng)
        self.polarity = PolarityEncoder(v.D, s.F_p, rng)
        if cfg.tfe.fusion == "tfe":
            self.tfe = TypeFusionEncoder(cfg.tfe, s.F_p, s.F, s.F, rng, seed=cfg.train.seed)
        else:
            self.tfe = None
        self.head = PromptHead(cfg.text, cfg.tfe.D_f, substream(cfg.text.vocab_seed, "text-tower"))
        # the prompt context is trainable, so it follows the training seed
        self.head.context.vectors.assign(
            rng.standard_normal(self.head.context.vectors.shape) * cfg.text.context_std
        )
        self.assign_names()

    def routing_groups(self):
        """Parameters updated by the similarity and polarity losses respectively."""
        similarity = self.frames.parameters() + self.align_face.parameters() + self.align_scene.parameters()
        return {"similarity": similarity, "polarity": self.polarity.parameters()}

    def encode(self, clips, chunk=64):
        return encode_frozen(
            self.vision, clips, self.cfg.data.face_size, self.cfg.streams.scene_input, chunk
        )

    def forward(self, features):
        B = len(features)
        face = ag.as_tensor(features.face, self.lstm.W_x)
        scene = ag.as_tensor(features.scene, self.lstm.W_x)
        early = ag.as_tensor(features.scene_early, self.lstm.W_x)
        v_ft = self.frames(self.lstm(face))
        v_st = frames_mean(self.lstm(scene))
        v_ftp = self.align_face(v_ft)
        v_stp = self.align_scene(v_st)
        v_pol, pol_logits = self.polarity(early)
        if self.tfe is not None:
            fused = self.tfe(v_ftp, v_stp, v_pol).pooled
        else:
            fused = (v_ftp + v_stp) * 0.5
        logits = self.head(fused)
        F, F_p = self.cfg.streams.F, self.cfg.streams.F_p
        if v_ftp.shape != (B, F) or v_stp.shape != (B, F) or v_pol.shape != (B, F_p):
            raise ShapeError("feature shape chain broken")
        return Outputs(logits, pol_logits, v_ft, v_st, v_ftp, v_stp, v_pol, fused)

    def forward_clips(self, clips):
        return self.forward(self.encode(clips))


def astype_features(features, dtype):
    return FrozenFeatures(
        features.face.astype(dtype), features.scene.astype(dtype), features.scene_early.astype(dtype)
    )
