"""Regularization-strength sweeps for sparse and smooth model variations."""

from _common import run_configs

if __name__ == "__main__":
    run_configs(["sweep_sparse", "sweep_smooth"], __doc__)
