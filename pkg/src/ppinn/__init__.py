"""Physics-informed networks with residual-guided neuron pruning for noisy-data unlearning."""

__version__ = "0.1.0"
