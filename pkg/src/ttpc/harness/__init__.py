from ttpc.harness.optim import SGDMomentum, cosine_lr, sgd_momentum_step
from ttpc.harness.train import (
    EpochMetrics,
    TrainConfig,
    evaluate,
    split_streams,
    train,
)
from ttpc.harness.ablate import ablate

__all__ = [
    "SGDMomentum",
    "cosine_lr",
    "sgd_momentum_step",
    "EpochMetrics",
    "TrainConfig",
    "evaluate",
    "split_streams",
    "train",
    "ablate",
]
