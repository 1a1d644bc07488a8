"""Score-based and denoising-diffusion generative models on SO(3)."""

from . import ddpm, evaluation, igso3, integrators, nets, sgm, so3, targets
from .ddpm import SO3DDPM
from .evaluation import c2st, ed_correlation
from .igso3 import IGParams
from .sampleset import SampleSet, load_sample_set, save_sample_set
from .sgm import SO3ScoreDiffusion

__version__ = "0.1.0"

__all__ = [
    "SO3DDPM",
    "SO3ScoreDiffusion",
    "IGParams",
    "SampleSet",
    "c2st",
    "ed_correlation",
    "load_sample_set",
    "save_sample_set",
    "ddpm",
    "evaluation",
    "igso3",
    "integrators",
    "nets",
    "sgm",
    "so3",
    "targets",
]
