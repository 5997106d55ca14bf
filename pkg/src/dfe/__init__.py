"""Fidelity estimation for quantum states and unitary channels by importance-sampled Pauli measurements."""
from dfe.channels import (
    ChannelDfeResult,
    ChannelModel,
    ChannelPairSampler,
    CliffordCircuit,
    avg_fidelity_from_entanglement,
    char_fn_channel,
    clifford_propagate,
    eigenbasis_product_state,
    entanglement_fidelity_exact,
    estimate_entanglement_fidelity,
    sample_channel_pair,
)
from dfe.engine import DfeConfig, DfeResult, alpha_of, estimate_fidelity, expected_copies_bound, settings_count
from dfe.harness import ExperimentSpec, run_calibration, run_fig1
from dfe.measurement import ShotRecord, copies_for_channel_setting, copies_for_state_setting, simulate_shot
from dfe.pauli import PauliOp, char_fn, char_fn_full, index_of, pauli_expectation, pauli_from_index
from dfe.sampling import (
    ImportanceDistribution,
    TruncatedTarget,
    build_exhaustive,
    sample_stabilizer,
    sample_w_state,
    truncate,
    w_state_prob,
)
from dfe.states import (
    DensityMatrix,
    NoiseModel,
    PureState,
    StabilizerTableau,
    dephase,
    depolarize,
    make_dicke,
    make_ghz,
    make_haar_random,
    make_w,
)

__version__ = "0.1.0"
