"""
Random dynamical systems with randomly chosen jumps.

A state ``(x, i)`` follows semiflow ``Pi_i`` for an exponential waiting time,
lands on ``y``, takes a jump ``q_s(y)`` chosen with probability ``pbar_s(y)``
and switches to a new semiflow with probability ``p_ij``.  The package
simulates the chain, applies its transition operator, couples pairs of
chains, measures Fortet-Mourier distances and runs the ergodicity
diagnostics built on them.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError,
    ConfigurationError,
    DomainError,
    NumericError,
    ProbabilityError,
    RangeError,
    RDSError,
    SamplingError,
)
from .core import *  # noqa: E402,F401,F403
from .sim import *  # noqa: E402,F401,F403
from .measure import *  # noqa: E402,F401,F403
from .observables import *  # noqa: E402,F401,F403
from .operator import *  # noqa: E402,F401,F403
from .coupling import *  # noqa: E402,F401,F403
from .analysis import *  # noqa: E402,F401,F403
from .models import *  # noqa: E402,F401,F403
