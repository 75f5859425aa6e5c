"""A configuration small enough for the demos to finish in about a minute."""

from ous.config import RunConfig

SMALL = RunConfig().replace(
    data={"clips_per_class": 40, "T": 4, "H": 32, "W": 32, "face_size": 16},
    vision={"D": 32, "depth": 3, "heads": 2, "early_blocks": 2, "mlp_ratio": 2},
    streams={"F": 32, "F_p": 16, "frames_heads": 2},
    tfe={"blocks": 4, "n_q": 4, "D_f": 32, "heads": 2, "mlp_hidden": 64},
    text={"prompt_length": 8, "D_t": 32, "depth": 1, "heads": 2},
    train={"max_epochs": 12, "batch": 16},
)
