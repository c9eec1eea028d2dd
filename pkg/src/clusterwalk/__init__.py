"""Random walks on supercritical percolation clusters: sampling, geometry,
isoperimetric and Poincare constants, renormalization events, heat kernels and
numerical checks of Gaussian bounds."""

__version__ = "0.1.0"
