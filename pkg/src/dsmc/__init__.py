"""Parallel-in-time particle smoothing by divide-and-conquer stitching."""

from .conditional import (
    GibbsState,
    conditional_combine,
    conditional_init_leaves,
    pgibbs_sweep,
    run_cdsmc,
    run_pgibbs,
    update_rate,
)
from .errors import (
    ConfigurationError,
    DegenerateWeightsError,
    DominationError,
    DsmcError,
    InvalidInputError,
    InvalidReferenceError,
    IterationError,
    LinearizationError,
)
from .fk import FeynmanKacModel, GaussianTransitionFK, log_init_weight, log_stitch_weight
from .gaussian import (
    GaussianMarginals,
    LinearGaussianModel,
    NonlinearGaussianSSM,
    ieks,
    kalman_filter,
    kalman_smoother,
    linearize,
    sample_posterior,
)
from .resampling import (
    DensePairSource,
    FunctionPairSource,
    GaussianPairSource,
    PairSample,
    PairWeightSource,
    Resampler,
    mh_lazy_pairs,
    multinomial_pairs,
    rejection_lazy_pairs,
    systematic_pairs,
    track_weight_buffers,
)
from .rng import Role, SlotStream, StreamKey, derive_stream, replicate_seed
from .smoother import (
    BlockEstimate,
    CombineSchedule,
    LeafEstimate,
    RunMetadata,
    build_schedule,
    combine,
    estimate,
    init_leaves,
    run_dsmc,
)
from .baselines import FilterOutput, ffbs_sample, particle_filter

__version__ = "0.1.0"
