"""
Exceptions raised by the simulation and estimation layers
"""

from typing import Optional


class TreeWalkError(Exception):
    """Base class for every error raised by the lab"""


class DomainError(TreeWalkError):
    """A formula was evaluated outside its domain (e.g. psi(t) = +inf)"""


class NoRootError(TreeWalkError):
    """psi stays negative on (1, t_max]: kappa is infinite"""


class CappedGrowth(TreeWalkError):
    """Environment growth would exceed the configured depth or vertex cap"""

    def __init__(self, reason: str, vertex: Optional[int] = None):
        super().__init__(reason)
        self.reason = reason
        self.vertex = vertex


class StepCapExceeded(CappedGrowth):
    """A walk ran past its step budget before completing tau^p"""

    def __init__(self, steps: int):
        super().__init__("steps")
        self.steps = steps


class DepthCapExceeded(CappedGrowth):
    """A walk or range reached the depth cap"""

    def __init__(self, vertex: Optional[int] = None):
        super().__init__("depth", vertex)


class BranchMismatch(TreeWalkError):
    """Limit constants were requested for a kappa branch that is not populated"""


class ConfigError(TreeWalkError):
    """Invalid experiment configuration"""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
