from .base_repository import BaseRepository
from .model_repository import ModelRepository, builtin_models
from .graphon_repository import GraphonRepository
from .run_repository import RunRepository

__all__ = ["BaseRepository", "ModelRepository", "GraphonRepository", "RunRepository", "builtin_models"]
