"""Coverage-guided adversarial testing for recurrent networks."""
from rnntest.coverage import CoverageConfig, CoverageTracker
from rnntest.objectives import ObjectiveSpec
from rnntest.rnn import Model, RnnConfig, forward, init_params
from rnntest.synthesis import SynthesisConfig

__version__ = "0.1.0"

__all__ = ["CoverageConfig", "CoverageTracker", "Model", "ObjectiveSpec", "RnnConfig", "SynthesisConfig",
           "forward", "init_params"]
