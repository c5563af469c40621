"""Discrete-event Monte Carlo toolkit for offer/confirmation-wave transactions."""
from .engine import (
    COVERAGE_ATOL,
    DEGENERATE,
    NO_OUTCOME,
    Always,
    CoinOutcome,
    ConfirmationWave,
    EmitterState,
    EventKind,
    IncipientTransaction,
    LedgerEvent,
    OfferWave,
    ResolutionStrategy,
    SpacetimePoint,
    StrategyError,
    TransactionFailed,
    TransactionSucceeded,
    TrialLedger,
    check_bilking,
    form_incipient,
    record_emitter_state,
    resolve_global,
    resolve_hierarchy,
    resolve_step,
    respond,
    sort_by_interval,
    spacetime_interval2,
    trigger_satisfied,
)
from .experiments import (
    BUILTIN_EXPERIMENTS,
    AbsorberConfig,
    CoinConfig,
    ContingencyRule,
    DceMode,
    DivertChannel,
    ExperimentSpec,
    PlaceAbsorber,
    RemoveScreen,
    ScreenModel,
    SpecError,
    TrialResult,
    builtin_spec,
    dce_coinflip_spec,
    dce_spec,
    initial_transactions,
    load_spec,
    maudlin_spec,
    miller_spec,
    run_trial,
    screen_amplitudes,
    screen_distribution,
    spec_to_document,
    validate_spec,
)
from .montecarlo import (
    CHUNK_TRIALS,
    EMPIRICAL_SMOOTHING,
    ComparisonReport,
    ConsistencyReport,
    FrequencyTable,
    Histogram,
    RunConfig,
    compare_to_expected,
    conditional_frequency,
    frequency,
    histogram_csv,
    run_experiment,
    run_payload,
    trial_uniforms,
    visibility,
)
from .program import TrialProgram, compile_program, outcome_distribution
from .quantum import (
    ATOL,
    Observable,
    PrePostEnsemble,
    StateVector,
    abl_probability,
    born_weight,
    complete_weights,
    inner_product,
    normalize,
    rebase,
    residual_probability,
)

__version__ = "0.1.0"
