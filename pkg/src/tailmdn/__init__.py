"""Conditional latency tail prediction with mixture density networks.

A fully connected network maps transmission conditions to the parameters of
a Gaussian mixture, optionally spliced with a generalized Pareto tail above
a learned threshold.
"""

from .datasets import Dataset, SyntheticSpec, generate_synthetic, load_csv, split, write_csv
from .dist import (GmmParams, SplicedMixtureParams, TailParams, gmm_cdf, gmm_pdf, gpd_ccdf,
                   gpd_pdf, log_spliced_pdf, spliced_ccdf, spliced_cdf, spliced_pdf,
                   spliced_quantile, spliced_sample)
from .errors import (ConfigError, DomainError, FormatError, IngestionError, ParameterError,
                     TrainingAborted)
from .evaluate import (CcdfCurve, EvaluationReport, empirical_ccdf, emit_report, ensemble_bands,
                       predict_ccdf, predict_quantile, tail_error)
from .model import ModelConfig, ModelWeights, forward, grad_nll, load, nll, save
from .train import TrainConfig, adam_step, preprocess, train_ensemble

__version__ = "0.1.0"
