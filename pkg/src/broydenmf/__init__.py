"""Online matrix factorization with Broyden-style rank-one dictionary updates."""
from .baselines import (
    SgmfState,
    StepSchedule,
    nmf_mu_step,
    nmf_run,
    sgmf_gradients,
    sgmf_run,
    sgmf_step,
)
from .core import (
    DegenerateStepError,
    DimensionError,
    FactorState,
    OmfbConfig,
    objective,
    solve_spd,
)
from .dataio import (
    DatasetSpec,
    ParseError,
    column_sampler,
    export_image_grid,
    generate_mask,
    load_matrix,
    save_matrix,
)
from .metrics import Trace, TraceRecord, reconstruction_error, snr_db
from .minibatch import (
    MiniBatch,
    dictionary_update_batch,
    minibatch_run,
    minibatch_step,
    solve_coefficients_batch,
)
from .missing import (
    MaskedColumn,
    expand_mask,
    impute,
    masked_dictionary_update,
    masked_solve_coefficients,
    omfb_missing_run,
)
from .omfb import (
    StepReport,
    dictionary_update_direct,
    dictionary_update_rank1,
    omfb_run,
    omfb_step,
    solve_coefficients,
)

__version__ = "0.1.0"
