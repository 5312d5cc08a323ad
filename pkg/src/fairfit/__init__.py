"""Fair ridge regression and related fair models."""

from .data import Dataset, DesignMatrix, Schema, VariableSpec, encode, from_arrays, load_csv, \
    merge_levels
from .decorrelation import AuxiliaryModel, apply_aux, decorrelate
from .errors import ContractError, FairfitError, NumericError, SchemaError, UnsupportedOperation
from .fairness import FairnessDefinition, eo_komiyama, evaluate, if_berk, sp_komiyama
from .frrm import FairModel, fit_fgrrm, fit_frrm, solve_lambda
from .glm import Family, fit_penalized
from .model import coef, diagnostics, fit_model, fitted, format_summary, load_model, \
    models_equal, predict, residuals, save_model, sigma, summary
from .zafar import ZafarModel, fit_zlm, fit_zlm_orig, fit_zlrm, fit_zlrm_orig

__version__ = "0.1.0"
