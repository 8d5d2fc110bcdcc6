"""Exact simulation and Monte Carlo maximum likelihood for Wright-Fisher diffusions with selection."""

__version__ = "0.1.0"

from .errors import MaxEvaluations, RejectionBudget, SeriesNonConvergence, TimeTooSmall, TruncationBudget, WFError
from .model import (CoupledModel, HaploidModel, MutationRates, ParameterDomain, SelectionModel, alpha,
                    girsanov_A, phi, phi_bounds, sam_rate)
from .likelihood import ContributionDraws, ObservationSeries, draw_contribution, log_likelihood
from .inference import MleResult, bootstrap_se, brent_maximize, estimate_mle, simplex_maximize
