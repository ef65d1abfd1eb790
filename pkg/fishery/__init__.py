"""
Coalitional MPC Fishery Engine

This package contains the complete engine for coalitional fleet control:
- Linear stock dynamics and catch accounting
- Receding-horizon effort optimization per coalition
- Merge/split negotiation with and without catch redistribution
- Hierarchical clustering acceleration
- Simulation driver, summaries and benchmarks
"""

__version__ = "1.0.0"
