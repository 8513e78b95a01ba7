"""Steady-state MSD for three step sizes with the l1 co-regularizer."""

from _common import run_configs

if __name__ == "__main__":
    run_configs(["step_scaling"], __doc__)
