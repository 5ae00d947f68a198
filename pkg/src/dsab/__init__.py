"""Detecting socially abnormal highway driving with a recurrent graph-attention autoencoder.

Subpackages by concern:

* :mod:`dsab.trajectory` - datasets, windows, standardization
* :mod:`dsab.simulator` - labelled microsimulation
* :mod:`dsab.graph` - proximity graphs
* :mod:`dsab.autodiff`, :mod:`dsab.optim` - tape-based gradients and Adam
* :mod:`dsab.model` - the RGAT autoencoder
* :mod:`dsab.training` - losses and the training loop
* :mod:`dsab.scoring` - anomaly scores, baselines, metrics
* :mod:`dsab.pipeline`, :mod:`dsab.cli` - end-to-end commands
"""

__version__ = "0.1.0"
