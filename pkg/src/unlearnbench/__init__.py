"""Speaker-level machine-unlearning benchmark on synthetic intent data."""

from .datagen import DatasetBundle, ForgetRequest, GenConfig, Sample, SampleSet, generate, select_forget_speakers, split
from .harness import BenchmarkReport, ExperimentConfig, epoch_ablation, run_benchmark, sweep_lr
from .metrics import (
    EvalRecord,
    GumWeights,
    efficacy_e,
    efficiency_t,
    gum,
    macro_f1,
    mia_score,
    nomus,
    speedup,
    utility_u,
)
from .nn_core import LayeredModel, LayerMask, backward, cross_entropy, forward, init_model, kl_divergence
from .unlearn import MethodConfig, TrainRecipe, run_method, train_original

__version__ = "0.1.0"
