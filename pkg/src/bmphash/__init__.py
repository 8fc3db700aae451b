"""Two-stage hashing by binary matrix pursuit.

Stage one infers +-1 target codes whose (weighted) inner products fit a
pairwise affinity matrix; stage two trains hash functions that predict them.
"""

from .affinity import AffinityMatrix, Mode
from .errors import BmpError
from .pursuit import CodeMatrix, PursuitConfig, run

__all__ = ["AffinityMatrix", "BmpError", "CodeMatrix", "Mode", "PursuitConfig", "run"]
__version__ = "0.1.0"
