"""Split conformal prediction and decision-theoretic evaluation of prediction sets."""

from .conformal import (
    APS,
    LAC,
    PredictionSet,
    ScoreFn,
    SplitConformalClassifier,
    calibrate,
    coverage,
    group_coverage,
    predict_set,
    replicate_coverage,
    score,
    set_size_stats,
)
from .decision import (
    DecisionProblem,
    LossEstimate,
    Pipeline,
    bayes_action,
    evaluate_strategy,
    rational_baseline,
    rational_benchmark,
    value_of_information,
)
from .dgp import (
    GaussianMixtureDGP,
    LabeledSample,
    PrivateSignalDGP,
    Samples,
    TabularDGP,
    make_private_worstcase,
)
from .predictor import (
    LogisticPredictor,
    OraclePredictor,
    TemperatureScaler,
    TemperedPredictor,
    ece,
    fit_logistic,
    fit_temperature,
    multical_residual,
    reliability,
    temper,
)
from .probcore import Distribution, JointTable, RngStream, bayes_posterior, entropy, normalize, sample

__version__ = "0.1.0"

__all__ = [
    "APS",
    "LAC",
    "PredictionSet",
    "ScoreFn",
    "SplitConformalClassifier",
    "calibrate",
    "coverage",
    "group_coverage",
    "predict_set",
    "replicate_coverage",
    "score",
    "set_size_stats",
    "DecisionProblem",
    "LossEstimate",
    "Pipeline",
    "bayes_action",
    "evaluate_strategy",
    "rational_baseline",
    "rational_benchmark",
    "value_of_information",
    "GaussianMixtureDGP",
    "LabeledSample",
    "PrivateSignalDGP",
    "Samples",
    "TabularDGP",
    "make_private_worstcase",
    "LogisticPredictor",
    "OraclePredictor",
    "TemperatureScaler",
    "TemperedPredictor",
    "ece",
    "fit_logistic",
    "fit_temperature",
    "multical_residual",
    "reliability",
    "temper",
    "Distribution",
    "JointTable",
    "RngStream",
    "bayes_posterior",
    "entropy",
    "normalize",
    "sample",
    "__version__",
]
