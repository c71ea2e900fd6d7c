"""Force-field construction for ODE-style generative models.

Conditional trajectory families with closed-form kernels, the exact
posterior-weighted oracle field over a dataset, terminal-prior samplers,
a small trainable field network, backward-ODE generation, desk-scale
sample metrics, and a numerical verification suite.
"""

__version__ = "0.1.0"

from .data_io import Dataset, builtin, read_csv, write_csv
from .errors import (
    ConfigError,
    CsvParseError,
    DegenerateInput,
    ForceFieldError,
    InvalidInput,
    NonConvergence,
    NumericFault,
    SingularityGuard,
)
from .field import LearnedField, OracleField, divergence_residual, learned_field, oracle_field
from .metrics import MetricReport, composite_index, estimate_score, sliced_wasserstein
from .ode import GenerationResult, Method, SolverConfig, TrajectoryRecord, generate, integrate
from .rng import stream
from .sampler import (
    PriorKind,
    PriorSpec,
    TrainingBatch,
    TrainingPair,
    radial_density,
    sample_pfgm,
    sample_training_pair,
    sample_unit_sphere,
)
from .trainer import (
    FieldNet,
    OptimState,
    TrainerConfig,
    TrainResult,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    train,
)
from .trajectory import (
    AnchorSet,
    BridgeSchedules,
    Family,
    TrajectorySpec,
    conditional_kernel,
    poisson_kernel_full,
    position,
    velocity,
)

__all__ = [name for name in dir() if not name.startswith("_")]
