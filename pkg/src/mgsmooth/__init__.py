"""Structured-grid geometric multigrid with trained convolutional smoothers.

The pieces fit together in the order they are listed: assemble an operator
(problems), coarsen it (transfer, hierarchy), pick or train a smoother
(smoothers, training), then solve (hierarchy, krylov) or inspect
convergence (analysis).
"""

from .errors import (ConfigError, ContractError, MgError, NonConvergedError,
                     NumericError, SingularMatrixError, TrainingError,
                     UnsupportedOperationError)
from .grid import (ConvKernel, GridFunction, GridSpec, StencilField,
                   apply_stencil, constant_stencil, convolve, delta_kernel,
                   from_active, full_spec, materialize_stencil, to_active,
                   zeros)
from .problems import (ProblemSpec, TrainingSample, build_geometry,
                       make_dataset)
from .transfer import (TransferPair, coarsen_checker, coarsen_derotate,
                       coarsen_full, galerkin_product, prolong, restrict)
from .hierarchy import (Level, MultigridHierarchy, SolveReport,
                        build_hierarchy, equip_classical, equip_conv_init,
                        equip_inferred, equip_trained, retarget, solve,
                        v_cycle)
from .smoothers import (ConvSmoother, GaussSeidelSmoother, InferredSmoother,
                        JacobiSmoother, KernelInferenceNet, conv_smoother,
                        effective_kernel, gauss_seidel, infer_kernels,
                        inference_net, jacobi, load_model, save_model)
from .autodiff import grad_check
from .training import (LossRecord, TrainConfig, forward_loss,
                       retrain_with_injection, train_adaptive,
                       train_independent, train_inference_net, train_level,
                       train_mixture)
from .krylov import FgmresConfig, KrylovReport, fgmres, gmres
from .analysis import (cycle_matrix, energy_norm, ideal_bound,
                       iteration_matrix, smoothing_profile, spectral_radius)

__version__ = "0.1.0"
