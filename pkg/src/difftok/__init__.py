"""difftok: tokenize data samples into seeded noise-codebook indices.

A sample is encoded as a short sequence of indices into per-step
codebooks of Gaussian noise; replaying those indices through a fixed
diffusion sampler reconstructs the sample. Works uniformly across the
discrete-grid, score-output, consistency, and flow model families.
"""

from .codebook import (CodebookSpec, NoiseSelection, codebook_for_step,
                       nearest_noise, noise_block, select_noise)
from .datasets import prototype_image_mixture, two_component_mixture
from .errors import (ConfigError, CorruptStreamError, DomainError,
                     ScheduleInfeasibleError, SingularityError,
                     TrainingDivergedError, VerificationError)
from .marginal import (PredictionCoefficients, StatePair, exact_jump_step,
                       invert_prediction, local_order_ratio, marginal_forward,
                       ode_euler_step, prediction_coefficients,
                       score_from_prediction)
from .metrics import ImageGrid, mse, psnr, ssim
from .mixture import AnalyticBackend, GaussianMixture, OracleOutput
from .schedules import (DdpmSchedule, DiscreteVpSchedule, FlowSchedule,
                        MarginalSchedule, ModelFamily, VeSchedule,
                        default_schedule, eval_schedule)
from .stepplan import (ContinuousSchedule, StepPlan, build_discrete_step_plan,
                       build_step_plan, discrete_exponent, discrete_iterations,
                       interval_iterations, interval_length)
from .streamio import decode_stream, encode_stream
from .sweep import SweepGrid, SweepRow, rows_to_csv, sweep
from .tokenizer import (DEFAULT_FINAL_SAMPLE_STEPS, InitStrategy,
                        ReconstructionResult, TokenStream, TokenizerConfig,
                        composite_step, ddim_noise_scale, ddim_step,
                        detokenize, final_sample, init_state, tokenize)
from .training import (ToyBackend, ToyDenoiser, TrainConfig, toy_forward,
                       train_epsilon, train_flow)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
