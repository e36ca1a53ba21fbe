"""Vector sequential DeepONet toolkit.

Data generators (lid-driven cavity, 1D J2 bar), a numpy GRU/FNN operator
network with analytic gradients, training and evaluation utilities, and a
genetic-algorithm load-history inversion driven by a trained model.
"""

__version__ = "0.1.0"
