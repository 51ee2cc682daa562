"""Hydrothermal alteration mapping from multispectral rasters.

Raster and label I/O, scaling and patch extraction, manual and selective-PCA
training labels, four classifiers (KNN, SVM, MLP, CNN) written on numpy, and
evaluation. ``altmap.synth`` builds synthetic scenes with known truth.
"""

__version__ = "0.1.0"
