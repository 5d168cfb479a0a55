from .metrics import column_rmse, rmse
from .theta import ThetaModel, theta_fit, theta_fit_matrix, theta_forecast, theta_forecast_matrix
from .trmf import (
    TRMFHyper,
    TRMFModel,
    forecast_factors,
    graph_laplacian_like,
    objective,
    trmf_fit,
    trmf_fit_loadings,
    trmf_forecast,
    update_F,
    update_phi,
    update_Z,
)

__all__ = [
    "TRMFHyper", "TRMFModel", "ThetaModel", "column_rmse", "forecast_factors",
    "graph_laplacian_like", "objective", "rmse", "theta_fit", "theta_fit_matrix",
    "theta_forecast", "theta_forecast_matrix", "trmf_fit", "trmf_fit_loadings",
    "trmf_forecast", "update_F", "update_phi", "update_Z",
]
