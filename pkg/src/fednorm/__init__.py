"""Feature-norm-regularized federated learning at desk scale.

Modules:

- :mod:`fednorm.model`: numpy feed-forward network with exact gradients
- :mod:`fednorm.partition`: synthetic data and non-i.i.d. partition plans
- :mod:`fednorm.norms`: per-class feature-norm tables and their differences
- :mod:`fednorm.federation`: FNR-FL, FedAvg and FedProx round protocols
- :mod:`fednorm.metrics`: traffic accounting and accuracy-per-cost metrics
- :mod:`fednorm.convergence`: recurrence checks on quadratic federations
- :mod:`fednorm.experiment` and :mod:`fednorm.cli`: experiment runner and CLI
"""

from .errors import ConfigurationError, FedNormError, GenerationError, ProtocolError, UsageError
from .federation import FederationConfig, RoundReport, run_federation
from .model import ModelParams, init_params
from .partition import Dataset, PartitionPlan, make_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "Dataset",
    "FedNormError",
    "FederationConfig",
    "GenerationError",
    "ModelParams",
    "PartitionPlan",
    "ProtocolError",
    "RoundReport",
    "UsageError",
    "init_params",
    "make_synthetic_dataset",
    "run_federation",
]
