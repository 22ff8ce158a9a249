"""
Verification suites - one module per experiment kind, each exposing run(plan)
"""

from . import constants
from . import oracle_check
from . import prop_joint
from . import regeneration
from . import theorem1
from . import theorem2
from . import yaglom

__all__ = [
    'constants',
    'oracle_check',
    'prop_joint',
    'regeneration',
    'theorem1',
    'theorem2',
    'yaglom',
]
