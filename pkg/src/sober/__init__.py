"""Batch Bayesian optimisation and quadrature by kernel recombination."""

from .kernels import KernelParams, NystromFeatures, eval_kernel, eval_test_functions, fit_nystrom, gram
from .measures import DomainSpec, EmpiricalMeasure, PriorModel, sample_prior, uniform_prior
from .gp import Dataset, GpModel, fit_mle, log_marginal_likelihood, predict
from .recombination import BatchSelection, auto_kq_select, greedy_thinning, objective_rchq, recombine, wce_estimate
from .solver import Sober, SoberConfig, run_loop

__version__ = "0.1.0"
