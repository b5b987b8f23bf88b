"""Two-task machine unlearning toolkit.

Gradient extraction over a minimal autodiff engine, the family of dynamic
scalarization combiners (including the normalized gradient difference),
probe-based automatic learning rates, deterministic benchmark problems,
the unlearning run loop, and a CLI around it all.
"""

from .autodiff import (
    DimensionError,
    FlatGradient,
    Graph,
    GraphStateError,
    NumericError,
    ParameterLayout,
    ParameterVector,
    Segment,
    Tensor,
    axpy_update,
    backward,
    forward,
)
from .bench import (
    ForgetRetainSplit,
    LabeledBatch,
    gen_gaussian_clusters,
    load_batch_csv,
    mlp_factory,
    save_batch_csv,
    split_forget_retain,
)
from .combiners import (
    CombinerOutput,
    CombinerSpec,
    coefficient_trace,
    combine,
    tail_variation,
)
from .engine import (
    ConfigError,
    EvalResult,
    GaussianProblem,
    LrConfig,
    NpoSpec,
    NumericAbort,
    ParetoPoint,
    QuadProblemConfig,
    RunConfig,
    RunRecord,
    Seeds,
    StepRow,
    config_from_dict,
    config_to_dict,
    dominated_by,
    evaluate,
    finetune,
    non_dominated_set,
    pass_overhead,
    record_from_json,
    record_to_json,
    run_unlearning,
    write_trace_csv,
)
from .objectives import (
    LossPair,
    NpoConfig,
    NpoLoss,
    QuadPairProblem,
    UnboundedProblemError,
    lsp_gradient,
    lsp_minimizer,
    lsp_value,
    npo_loss,
    npo_loss_and_grad,
)
from .scheduler import (
    LrState,
    ProbeError,
    QuadraticFit,
    fit_quadratic,
    maybe_update,
    optimal_lr,
    probe_losses,
)

__version__ = "0.1.0"
