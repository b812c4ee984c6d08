"""Speech-driven head and hand motion synthesis with constrained dynamic Bayesian networks."""
from ._kernels import BACKEND
from .cdbn import CdbnModel, constrained_synthesize, train_cdbn
from .corpus import Dataset, SyntheticSpec, TurnRecord, generate_synthetic, load_dataset, load_model, save_dataset, save_model
from .dbn import DbnModel, GaussianState, em_train, synthesize, train_baseline
from .statmath import GaussianParams

__version__ = "0.1.0"
