"""Two-tier fog capacity planning: split a compute budget between shallow and deep cloudlets."""

from .errors import (
    DomainError,
    EmptyTraceError,
    FogcapError,
    ModelError,
    ParameterError,
    TraceParseError,
    ValidityError,
)
from .fluid_sim import Scenario, SimOutput, simulate, sweep
from .workload import (
    EmpiricalTrace,
    GaussianAR1,
    GaussianIID,
    Uniform,
    WorkloadStats,
    generate,
    load_trace,
    stats_of_model,
)

__version__ = "0.1.0"
