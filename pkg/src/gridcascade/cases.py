"""Bundled case access.

The packaged IEEE 118-bus model carries two control areas in its bus data
(the area column); the four lines crossing them are (15,33), (19,34),
(23,24) and (30,38).  Switching off the first three is the default
planning-phase action that turns the control areas into a tree-partition,
leaving (30,38) as the single remaining tie.
"""

from __future__ import annotations

import importlib.resources
import warnings

from .harness import remove_lines, switched_off_ids
from .netmodel import Network, parse_case

DEFAULT_SWITCH_OFF = ((15, 33), (19, 34), (23, 24))
TIE_LINES = ((15, 33), (19, 34), (23, 24), (30, 38))


def ieee118_text() -> str:
    return (
        importlib.resources.files("gridcascade.data")
        .joinpath("ieee118.m")
        .read_text()
    )


def ieee118(revised: bool = False) -> Network:
    """The packaged 118-bus network; ``revised`` switches off three tie-lines."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # the stock data has parallel branches
        net = parse_case(ieee118_text(), "matpower-m")
    if revised:
        net = remove_lines(net, switched_off_ids(net, list(DEFAULT_SWITCH_OFF)))
    return net
