"""Non-conjugate GP inference and hyperparameter learning toolkit."""

from .kernels import GramMatrix, KernelParams, cross_gram, gram, gram_grad, matern52
from .likelihoods import (
    BernoulliProbit,
    Gaussian,
    QuadratureRule,
    StudentT,
    make_likelihood,
)
from .sites import (
    DualSites,
    GaussianPosterior,
    posterior_from_sites,
    predict,
    predictive_log_density,
    site_gaussian,
)
from .objectives import ObjectiveValue, elbo, ep_energy, objective_grad_theta
from .laplace import LaplaceFit, laplace_energy, laplace_fit
from .ep import EpConfig, ep_fit
from .cvi import CviConfig, cvi_fit, cvi_step

__version__ = "0.1.0"
