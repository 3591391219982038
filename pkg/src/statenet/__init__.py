"""Graph-structured stateful neurons with in-rollout synaptic plasticity.

The package builds directed, possibly cyclic networks of simple stateful
cells (continuous rate units or leaky integrate-and-fire spiking units)
whose edge weights can evolve during a rollout under Hebbian or
spike-timing rules, and trains them to reproduce recorded output
sequences with backpropagation through time (optionally truncated).
"""

__version__ = "0.1.0"
