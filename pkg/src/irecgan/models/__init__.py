from .agent import AgentModel, sample_slate, sample_slates, top_k
from .base import ModelDims
from .batch import Batch
from .discriminator import DiscriminatorModel
from .user import UserModel

__all__ = [
    "AgentModel",
    "Batch",
    "DiscriminatorModel",
    "ModelDims",
    "UserModel",
    "sample_slate",
    "sample_slates",
    "top_k",
]
