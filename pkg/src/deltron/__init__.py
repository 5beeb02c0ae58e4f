"""Delay-learning spiking neuron: simulation, training and experiments."""

__version__ = "0.1.0"
