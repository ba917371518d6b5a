"""Workbench for a dynamically conservative lattice planner.

A 2D intersection simulator, a bootstrapped ensemble of learned transition
models, model-value-expansion policy evaluation, and a max-min trajectory
selector with fixed-conservative baselines, wired into one reproducible
command-line experiment harness.
"""

__version__ = "0.1.0"
