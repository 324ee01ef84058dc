"""Desk-scale test feeders and measurement layouts.

``ieee33`` is the 33-bus radial distribution feeder of Baran and Wu (1989),
12.66 kV, converted to per-unit on a 10 MVA base. Buses are numbered 0..32
with the substation at bus 0.
"""

from __future__ import annotations

import numpy as np

from .grid import Feeder, NetworkGraph, build_ybus
from .measurements import MeasurementSet

BASE_KV = 12.66
BASE_MVA = 10.0

# (from, to, r_ohm, x_ohm), 1-based as usually tabulated
_IEEE33_BRANCHES = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]

# (kW, kvar) at buses 2..33
_IEEE33_LOADS = [
    (100, 60), (90, 40), (120, 80), (60, 30), (60, 20), (200, 100), (200, 100),
    (60, 20), (60, 20), (45, 30), (60, 35), (60, 35), (120, 80), (60, 10),
    (60, 20), (60, 20), (90, 40), (90, 40), (90, 40), (90, 40), (90, 40),
    (90, 50), (420, 200), (420, 200), (60, 25), (60, 25), (60, 20), (120, 70),
    (200, 600), (150, 70), (210, 100), (60, 40),
]

# default uncertainty regions (0-based bus ids): end of the main trunk and
# end of the lateral leaving bus 6
IEEE33_REGIONS = ([13, 14, 15, 16, 17], [28, 29, 30, 31, 32])


def ieee33(slack_voltage: complex = 1.0 + 0.0j) -> Feeder:
    zbase = BASE_KV**2 / BASE_MVA
    edges = np.array([(f - 1, t - 1) for f, t, _, _ in _IEEE33_BRANCHES])
    z = np.array([complex(r, x) for _, _, r, x in _IEEE33_BRANCHES]) / zbase
    graph = NetworkGraph(33, edges, 0, slack_voltage)
    model = build_ybus(graph, 1.0 / z, np.zeros(33))
    load = np.zeros(33, dtype=complex)
    load[1:] = np.array([complex(p, q) for p, q in _IEEE33_LOADS]) / (BASE_MVA * 1000.0)
    return Feeder(model, load, tuple(range(33)))


def full_layout(feeder: Feeder) -> MeasurementSet:
    """Every magnitude, every sending-end flow, every non-slack injection."""
    ns = feeder.model.nonslack
    return MeasurementSet(ns, np.arange(feeder.model.graph.m), ns)


def sparse_layout(feeder: Feeder, mag_buses=(17, 32), flow_lines=(0,)) -> MeasurementSet:
    """Smart-meter style layout: injections at every load bus plus a few
    magnitude and head-of-feeder flow meters (low redundancy)."""
    ns = feeder.model.nonslack
    return MeasurementSet(list(mag_buses), list(flow_lines), ns)
