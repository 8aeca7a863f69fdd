"""Antenna tilt optimization on a simulated cellular network.

A numpy library implementing a hexagonal multi-cell radio simulator, a cell
adjacency graph, multi-head graph attention over cell features, and Q-learning
agents (graph-attention, local, and neighbor-concatenating) trained with
prioritized replay, plus a train/eval/export harness and CLI.
"""

__version__ = "0.1.0"
