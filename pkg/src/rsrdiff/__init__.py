"""Residual-shifting diffusion for image super-resolution at desk scale.

The forward process drives the clean image toward its degraded counterpart
through the scaled residual while injecting Gaussian noise on a geometric
schedule; the reverse process walks a short sub-schedule back using a
trainable denoiser.  This package provides the schedule, the forward and
reverse kernels, the sampler, a small conv/window-attention denoiser with
its training loop, a synthetic degradation pipeline, image quality metrics
with nonparametric statistics, and a CLI harness around all of it.
"""

from .degrade import (
    PHANTOM_KINDS,
    ImagePair,
    PhantomSpec,
    downsample,
    gen_phantom,
    make_pair,
    upsample_nearest,
)
from .diffusion import (
    GaussianParams,
    forward_marginal,
    forward_step,
    marginal_params,
    posterior_params,
    residual,
    reverse_step,
)
from .denoiser import (
    DenoiserNet,
    NetConfig,
    build_denoiser,
    denoiser_forward,
    init_params,
    time_embedding,
)
from .experiment import ExperimentConfig, ExperimentError, run_experiment
from .metrics import (
    MetricReport,
    bootstrap_ci,
    compare_methods,
    dunn_bonferroni,
    evaluate_pair,
    gmsd,
    kruskal_wallis,
    psnr,
    ssim,
)
from .perceptual import perceptual_proxy
from .sampler import DenoiserInterface, SamplerConfig, init_sample, oracle_denoiser, run_sampler
from .schedule import Schedule, ScheduleConfig, SubSchedule, build_schedule, sub_schedule
from .tensorio import (
    load_checkpoint,
    read_config,
    read_tensor,
    save_checkpoint,
    write_tensor,
)
from .train import TrainConfig, fit, lr_at_step, optimizer_step, total_loss, train_step

__version__ = "0.1.0"
