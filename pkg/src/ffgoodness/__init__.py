"""Forward-forward training engine with a pluggable goodness-function library.

Layer-local learning: each layer is trained against its own objective that
separates the goodness of positive (correctly labeled) inputs from negative
(wrongly labeled) ones. The goodness function is a first-class choice; a
dozen of them, from mean squared activation to excess kurtosis and
entmax-weighted energy, live in :mod:`ffgoodness.goodness` with analytic
gradients throughout.
"""

from .data import (DataError, Dataset, IdxFormatError, load_idx, standardize,
                   stratified_subset, synthetic_two_gaussians, write_idx_images,
                   write_idx_labels)
from .goodness import (GOODNESS_KINDS, GoodnessSpec, GoodnessState,
                       entmax_jacobian_apply, entmax_map, goodness_eval,
                       goodness_grad, softmax, sparsemax_closed_form, spec_from_key)
from .harness import (ConfigError, ExperimentConfig, build_config, read_metrics,
                      run_experiment, run_sweep, write_metrics)
from .inference import ScoreTable, accuracy, score_all_classes
from .layers import (ACTIVATION_KINDS, LayerParams, NumericalError,
                     activation_backward, activation_forward, adam_step,
                     init_layer, layernorm_backward, layernorm_forward,
                     norm_gate, norm_gate_backward)
from .numerics import (central_moment, double_factorial,
                       finite_difference_gradient, finite_difference_jvp,
                       l2_normalize, matmul, sigmoid, softplus_stable,
                       top_k_indices)
from .records import MetricsRecord, config_hash
from .rng import TrainingStreams, stream
from .training import (Network, TrainConfig, build_network, embed_batch,
                       embed_input, ff_layer_loss, ffcl_layer_forward,
                       layer_loss_and_grads, load_network,
                       sample_negative_label, sample_negative_labels,
                       save_network, train_layer, train_network)

__version__ = "0.1.0"
