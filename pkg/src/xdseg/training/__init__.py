from xdseg.training.adam import Adam, AdamState, adam_step
from xdseg.training.losses import (
    combined_loss,
    cross_entropy_loss,
    disc_loss,
    gen_adv_loss,
    pixel_cross_entropy,
)
from xdseg.training.loop import (
    LossCsvWriter,
    LossReport,
    TrainConfig,
    TrainingDiverged,
    make_batch,
    recalibrate_batch_stats,
    train_loop,
)

__all__ = [
    "Adam", "AdamState", "adam_step",
    "combined_loss", "cross_entropy_loss", "disc_loss", "gen_adv_loss", "pixel_cross_entropy",
    "LossCsvWriter", "LossReport", "TrainConfig", "TrainingDiverged", "make_batch", "recalibrate_batch_stats", "train_loop",
]
