"""Gaussian-process quantile regression trained by expectation propagation.

A GP prior over the latent quantile function is combined with the
asymmetric Laplace utility of the pinball loss; EP replaces each utility
factor by a Gaussian site whose moments are matched in closed form.
"""
from .ald import ALDParams, Cavity, TiltedMoments, ald_log_density, tilted_loss, tilted_moments, \
    tilted_moments_quadrature
from .datagen import Dataset, Standardizer, destandardize, kfold_split, load_csv, maximin_subsample, save_csv, \
    standardize, synth_hetero_chi2, synth_hetero_chi2_ard, true_quantile_hetero_chi2
from .ep import EPConfig, EPState, SiteParams, Sites, log_z_ep, run_ep
from .errors import QGPError
from .evaluation import ard_ranking, baseline_linear_gaussian, baseline_unconditional, coverage_indicator, \
    cross_validate, detect_crossings, pinball_mean
from .kernel import KernelParams, covariance, covariance_with_jitter
from .model import OptConfig, QuantileModel, fit, load, predict, save

__version__ = "0.1.0"
