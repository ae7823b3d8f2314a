"""Generalized iteratively regularized Landweber iterations for linear
ill-posed problems, with a discrete Radon transform as the model operator."""

from .data import (Dataset, NoiseSpec, PhantomSpec, add_noise, generate_phantoms,
                   read_idx_images, read_idx_labels, relative_error, write_idx_images)
from .operators import (LinearOperator, MaskedOperator, MatrixOperator, RadonOperator,
                        ScaledOperator, Sinogram, estimate_operator_norm, materialize_matrix,
                        radon_adjoint, radon_forward)
from .priors import (HandcraftedOperator, PriorSet, build_handcrafted_operator, prior_geometric_mean,
                     prior_mean, prune_priors)
from .schemes import (AdaptConfig, IterationTrace, LambdaSequence, SchemeConfig, SchemeKind,
                      StoppingRule, StopReason, make_lambda, run_scheme, step_ddirli, step_girli,
                      step_girli_gm, step_irli, step_irli_revised, step_landweber)
from .theory import (TheoryConstants, check_assumptions, compute_c_rho, compute_D, compute_E,
                     compute_tau_min, residual_sum_bound)

__version__ = "0.1.0"
