"""SDEs that share prescribed time-dependent marginal densities.

Any drift whose Fokker-Planck flow reproduces ``p(x, t)`` splits into a scalar
part ``phi`` (fixed by ``dp/dt = -lap(phi p)``) plus a symmetric PSD field
``D`` and a skew field ``Q`` that can be chosen freely.
"""

from .decomp import (AnalyticPhi, DecompositionBundle, GridPhi, SdeSpec, analytic_phi_edm,
                     assemble_drift, denoiser_family, drift_terms, grid_phi_from_path,
                     karras_diffusion, linear_sde, make_sde, ou_sde, sde_match,
                     time_reverse_strict, weak_reversal_family)
from .density import (DensityPath, EdmScheduleParams, GaussianPathParams, MixturePathParams,
                      fit_grid, heat_flow_path, make_edm_path, make_gaussian_path,
                      make_mixture_path, sample_exact, stationary_gaussian_path,
                      validate_density)
from .errors import MarginalFlowError
from .fields import (LinearField, MatrixField, make_constant_field, make_linear_skew_field,
                     make_radial_isotropic_field, psd_sqrt, zero_field)
from .grid import (RegularGrid, ScalarGridField, VectorGridField, interpolate, read_mflo,
                   sample_on_grid, write_mflo)
from .kernels import BACKEND
from .poisson import grad_phi, solve_phi, solve_phi_fourier, solve_phi_green
from .schedules import Schedule
from .sim import Ensemble, SimConfig, simulate_ensemble, snapshot, step_euler_maruyama
from .verify import (DistanceReport, ResidualReport, dq_preservation_check,
                     fokker_planck_residual, marginal_distance, marginal_invariance_suite)

__version__ = "0.1.0"
