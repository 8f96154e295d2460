"""Block-partitioned low-rank adapters (BoRA) with LoRA and MELoRA as special cases."""

__version__ = "0.1.0"

from .adapters import (  # noqa: E402
    AdapterConfig,
    AdapterParams,
    Checkpoint,
    SigmaTransform,
    Variant,
    build_sigma,
    count_flops_per_token,
    count_params,
    forward,
    init_params,
    load_checkpoint,
    materialize,
    materialize_via_factorization,
    save_checkpoint,
)
from .analysis import SpectrumReport, compare_spectra, spectrum  # noqa: E402
from .estimator import AdapterRegressor  # noqa: E402
from .grad import Gradients, backward, backward_delta, finite_difference_check  # noqa: E402
from .linalg import SvdResult, frobenius_norm, matmul, numerical_rank, svd  # noqa: E402
from .optim import OptimState, adamw_step, sgd_step  # noqa: E402
from .tasks import (  # noqa: E402
    ApproxTask,
    RegressionTask,
    TrainReport,
    budget_sweep,
    make_approx_task,
    make_regression_task,
    run_approximation,
    run_regression,
)
