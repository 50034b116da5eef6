"""stopgibbs: a stopped-process Gibbs sampler on dense qubit Hamiltonians.

The package simulates a weak-measurement process that is halted by a
level-dependent stop coin; the states collected at the stopping time average
to the thermal state of the measured Hamiltonian.  Deterministic evaluators
(closed forms and certified truncated series), brute-force thermal oracles,
a partition-function estimator, and a noise-resilience experiment accompany
the Monte-Carlo engine so every reported quantity can be cross-checked.
"""

__version__ = "0.1.0"

from .engine import (
    EnsembleStats,
    TrajectoryRecord,
    expected_state_closed,
    expected_state_series,
    expected_stopping_time_exact,
    expected_stopping_time_series,
    mix_seed,
    run_ensemble,
    run_trajectory,
    sample_probability,
    tau_max_bound,
)
from .estimators import (
    FaultReport,
    PartitionEstimate,
    estimate_observable,
    estimate_partition,
    fault_resilience_experiment,
    gibbs_error_budget,
    partition_exact_inversion,
)
from .hamiltonian import (
    GibbsOracle,
    LocalHamiltonian,
    PauliTerm,
    exact_gibbs,
    exact_partition,
    jump_operator,
    parse_hamiltonian,
    to_dense,
)
from .instrument import (
    Instrument,
    NoiseModel,
    PerturbedChannel,
    apply_E0,
    build_K_ideal,
    build_K_product,
    k_deviation,
    perturb_instrument,
)
from .linalg import (
    DenseOperator,
    Spectrum,
    channel_delta_estimate,
    eig_h,
    fidelity,
    matrix_function,
    operator_norm,
    trace_norm,
)
from .stopping import (
    StoppingSchedule,
    cosh_schedule,
    general_schedule,
    lambda_param,
    stop_weight,
)

__all__ = [
    "DenseOperator", "Spectrum", "eig_h", "matrix_function", "trace_norm",
    "operator_norm", "fidelity", "channel_delta_estimate",
    "PauliTerm", "LocalHamiltonian", "GibbsOracle", "parse_hamiltonian",
    "to_dense", "jump_operator", "exact_gibbs", "exact_partition",
    "Instrument", "NoiseModel", "PerturbedChannel", "build_K_product",
    "build_K_ideal", "apply_E0", "k_deviation", "perturb_instrument",
    "StoppingSchedule", "lambda_param", "cosh_schedule", "general_schedule",
    "stop_weight",
    "TrajectoryRecord", "EnsembleStats", "run_trajectory", "run_ensemble",
    "expected_state_series", "expected_state_closed",
    "expected_stopping_time_exact", "expected_stopping_time_series",
    "tau_max_bound", "sample_probability", "mix_seed",
    "PartitionEstimate", "FaultReport", "estimate_partition",
    "partition_exact_inversion", "estimate_observable", "gibbs_error_budget",
    "fault_resilience_experiment",
]
