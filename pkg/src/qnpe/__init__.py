"""Classical NPE and a statevector simulation of its quantum counterpart."""

from .classical import run_classical_npe
from .errors import QnpeError
from .pipeline import QnpeConfig, QnpeResult, run_quantum_npe
from .store import DataMatrix, NeighborSets, TreeStore, build_store, ingest_csv

__all__ = [
    "DataMatrix",
    "NeighborSets",
    "QnpeConfig",
    "QnpeError",
    "QnpeResult",
    "TreeStore",
    "build_store",
    "ingest_csv",
    "run_classical_npe",
    "run_quantum_npe",
]
__version__ = "0.1.0"
