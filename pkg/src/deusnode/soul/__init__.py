from .concerned import ConcernedSoul
from .consumer import ConsumerSoul
from .provider import ContributionSoul

__all__ = ["ConcernedSoul", "ConsumerSoul", "ContributionSoul"]
