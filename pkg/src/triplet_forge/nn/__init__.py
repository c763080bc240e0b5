from .layers import Conv2D, Dense, Flatten, GlobalAvgPool, L2Normalize, MaxPool2D, ReLU, Residual
from .network import DEFAULT_LAYERS, EmbeddingNet, ModelSpec
from .optim import Adam

__all__ = [
    "Adam", "Conv2D", "DEFAULT_LAYERS", "Dense", "EmbeddingNet", "Flatten", "GlobalAvgPool",
    "L2Normalize", "MaxPool2D", "ModelSpec", "ReLU", "Residual",
]
