"""Synthetic daily mobility trajectories fitted to aggregate statistics.

Agents start the day at home; simulated annealing edits their stays until
the hourly origin-destination counts, the daily visit-count law and the
per cell-hour dwell-travel distributions of the reference data are matched.
"""

__version__ = "0.1.0"
