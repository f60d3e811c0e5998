"""Bayesian full-waveform inversion with transport and Sobolev misfits."""

__version__ = "0.1.0"

from .grids import (AcquisitionGeometry, Grid2D, Seismogram, VelocityModel,
                    Wavelet, remove_zero_frequency)
from .signal import (DensityTrace, NormalizerSpec, Trace, check_equivalence_bounds,
                     check_linearization, hminus1_norm, p_sigma, w2_1d,
                     weighted_hminus1_norm)
from .potentials import (LossEval, Potential, PotentialSpec, calibrate, eval_hm1,
                         eval_l2, eval_m, eval_w2)
from .priors import (HyperPrior, LevelSetSpec, MaternPrior, MaternSpec,
                     apply_levelset)
from .inference import (ChainState, GaussianApprox, laplace, map_estimate,
                        pcn_step, run_chain)
from .posterior_metrics import (GaussianPair, gaussian_hellinger, gaussian_w2,
                                hellinger_is, make_noise, stability_report)
from .wave import SolverOptions, born_apply, solve_adjoint, solve_forward
