"""Dilation-based relaxation of oscillatory elliptic coefficients.

Submodules
----------
coefficient
    Coefficient fields, local/partial/structure-aware dilation, built-in systems.
homogenize
    Homogenized tensors: harmonic mean, layered closed form, periodic cell problems.
fem
    P1 finite elements on structured meshes of the unit interval and square.
averaging1d
    Slow/fast ODE reformulation of 1D problems with Euler, Seamless and FLAVORS steps.
decompose
    Smooth/oscillatory splitting, empirical mode decomposition, frequency stretching.
harness
    Experiment sweeps, reports and the command line interface.
"""

__version__ = "0.1.0"
