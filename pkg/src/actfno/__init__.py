"""Fourier neural operator with adaptive coordinate transform blocks, on a numpy autodiff engine."""

from .ablation import AblationReport, ablation_suite
from .act import ActBlock, ActConfig, adaptive_alpha
from .data import (
    Dataset,
    Trajectory,
    WindowSpec,
    ZScoreNormalizer,
    gen_advection2d,
    gen_diffusion_reaction2d,
    gen_heat2d,
    load_dataset,
    make_advection_dataset,
    save_dataset,
)
from .fno import ActFno, FnoConfig, build_variant, count_parameters, reference_config, tiny_config
from .training import (
    ActFnoRegressor,
    EvalReport,
    evaluate,
    load_checkpoint,
    nrmse,
    rollout,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
