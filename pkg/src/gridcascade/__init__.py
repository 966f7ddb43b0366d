"""Staged cascading-failure simulation for DC power-network models.

Library layout:

* :mod:`gridcascade.netmodel` - network data model, case parsing, scenario
  transformations
* :mod:`gridcascade.graph` - tree-partition algebra (regions, bridges,
  reduced multigraph, closures)
* :mod:`gridcascade.powerflow` - DC power flow, overload detection, the
  spanning-forest oracle
* :mod:`gridcascade.controllers` - droop and AGC equilibria, DC-OPF dispatch
* :mod:`gridcascade.uc` - the unified controller: feasibility, direct solve,
  projected primal-dual trajectories, constraint lifting
* :mod:`gridcascade.cascade` - the staged failure-propagation engine
* :mod:`gridcascade.harness` - profile generation, N-1 scans, metrics
* :mod:`gridcascade.verification` - executable property suites
* :mod:`gridcascade.cases` - the bundled IEEE 118-bus model
"""

from .netmodel import (
    Bus,
    Line,
    Network,
    Scenario,
    parse_case,
    network_to_json,
    perturb_loads,
    scale_capacities,
)

__version__ = "0.1.0"

__all__ = [
    "Bus",
    "Line",
    "Network",
    "Scenario",
    "parse_case",
    "network_to_json",
    "perturb_loads",
    "scale_capacities",
    "__version__",
]
