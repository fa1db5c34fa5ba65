from .utils import DEFAULT_CONFIG
from .Actor import UepActor
