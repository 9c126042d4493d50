"""Dependency-aware task offloading workbench for vehicular edge computing.

Subpackages and modules:

* :mod:`vecsched.dag` -- subtask DAG model and the layered random generator
* :mod:`vecsched.sim` -- FIFO delay-model simulator (timelines, AET)
* :mod:`vecsched.schedulers` -- classical baselines and the exhaustive oracle
* :mod:`vecsched.neural` -- minimal reverse-mode autodiff and the GAT +
  BiGRU encoder / attentional GRU decoder policy network
* :mod:`vecsched.rl` -- episode rollouts, GAE, and the PPO update
* :mod:`vecsched.fed` -- federated first-order meta-training and fast
  adaptation
* :mod:`vecsched.cli` -- experiment runner
"""

__version__ = "0.1.0"
