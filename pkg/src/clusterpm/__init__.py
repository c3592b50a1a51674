"""Multi-scale clusterwise regression: fit one regressor per k-means cluster at
several scales k and average the resulting predictors."""

from .clustering import (Clustering, RestartKMeans, RestartPolicy, assign_point, assign_points,
                         find_k_empty, kmeans_best_of)
from .dataset_io import (Dataset, DatasetError, FoldPlan, NormalizationParams, SymmetricMinMaxScaler,
                         apply_normalization, fit_normalization, kfold_split, load_csv, load_registry)
from .ensemble import (EnsembleConfig, MultiScaleEnsembleRegressor, average_first_j, heuristic_j,
                       nested_cv_selection, select_j_heuristic, select_j_nested_cv)
from .evaluation import (ErrorProfile, ExperimentReport, build_error_profile, mae, paired_ttest,
                         run_experiment)
from .prediction_model import ClusterwiseRegressor, PredictionModel, max_trainable_k, predict_pm, train_pm
from .regressors import (ForestRegressor, OLSRegressor, RegressorSpec, StepwiseRegressor, fit_ols,
                         fit_random_forest, fit_stepwise)

__version__ = "0.1.0"
