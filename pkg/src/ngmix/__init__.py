"""Mixed-effects models for longitudinal data with normal variance-mean
mixture random effects, measurement noise and continuous-time stochastic
process components, fitted by preconditioned stochastic-gradient maximum
likelihood."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DataError,
    DivergenceError,
    DomainError,
    FactorizationError,
    NgmixError,
    NumericalError,
    ParameterError,
    RangeError,
    ShapeError,
)
from .mixtures import NvmSpec  # noqa: F401
from .fem import OperatorSpec, assemble, default_grid  # noqa: F401
from .model import (  # noqa: F401
    ModelParams,
    SubjectRecord,
    marginal_loglik_gaussian,
    simulate,
)
from .tvswitch import (  # noqa: F401
    SwitchRule,
    apply_switch,
    tv_distance,
    tv_to_nearest_cauchy,
    tv_to_nearest_gaussian,
)
from .estimator import (  # noqa: F401
    FitResult,
    FitSettings,
    StepSchedule,
    build_plan,
    fit,
    form_groups,
    louis_observed_fim,
    p_bounds,
)
from .predict import (  # noqa: F401
    DeclineCriterion,
    PredictRequest,
    PredictiveSummary,
    egfr_from_scr,
    excursion_probability,
    predict,
)
from .config import RunConfig, config_from_dict, load_config  # noqa: F401
from .data import ingest  # noqa: F401
from .report import read_params, write_results  # noqa: F401
from .cli import run_command  # noqa: F401
