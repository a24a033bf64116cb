"""
MagNet Defense Toolkit - Execution Layer

Dataset loading, classifier and autoencoder training, adversarial attacks,
the detector/reformer defense and the experiment commands driving them.
"""

__version__ = "1.0.0"
