"""Shared test configuration helpers."""

from ous.config import RunConfig


def tiny_config(**sections):
    """Small enough to train for a couple of epochs in a few seconds."""
    base = RunConfig().replace(
        data={"clips_per_class": 6, "T": 4, "H": 32, "W": 32, "face_size": 16},
        vision={"D": 16, "depth": 3, "heads": 2, "early_blocks": 2, "mlp_ratio": 2},
        streams={"F": 16, "F_p": 8, "frames_heads": 2},
        tfe={"blocks": 2, "n_q": 4, "D_f": 16, "heads": 2, "mlp_hidden": 32},
        text={"prompt_length": 4, "D_t": 16, "depth": 1, "heads": 2},
        train={"max_epochs": 2, "batch": 8},
    )
    return base.replace(**sections) if sections else base
