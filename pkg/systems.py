"""Builtin plants and plant loading by name or file."""

import logging
import os

import numpy as np

import storage
from distribution_network import (
    BUNDLED_FEEDER,
    DEFAULT_RELAXATION,
    MEASURED_BUSES_33,
    lindistflow_system,
    load_network,
)
from lti import LtiSystem

logger = logging.getLogger(__name__)

REACTOR_SAMPLING_PERIOD = 0.1
VOLTAGE_SAMPLING_PERIOD = 1.0
VOLTAGE_CONTROL_GAIN_DT = 1.0

# Discretized batch reactor at 0.1 s.
REACTOR_A = np.array([
    [1.178, 0.001, 0.511, -0.403],
    [-0.051, 0.661, -0.011, 0.061],
    [0.076, 0.335, 0.560, 0.382],
    [0.0, 0.335, 0.089, 0.849],
])
REACTOR_B = np.array([
    [0.004, -0.087],
    [0.467, 0.001],
    [0.213, -0.235],
    [0.213, -0.016],
])


def batch_reactor_system(partial=False):
    """The 4-state, 2-input batch reactor.

    Args:
        partial: Measure only the first two states (C = [I₂ 0]) instead of the full state.
    """
    c = np.hstack([np.eye(2), np.zeros((2, 2))]) if partial else np.eye(4)
    name = "reactor_partial" if partial else "reactor_state"
    return LtiSystem(REACTOR_A, REACTOR_B, c, name=name, sampling_period=REACTOR_SAMPLING_PERIOD)


def voltage_system(partial=False, network_path=None, control_gain_dt=VOLTAGE_CONTROL_GAIN_DT,
                   relaxation=DEFAULT_RELAXATION):
    """LinDistFlow voltage plant on the bundled 33-bus feeder.

    The full variant measures and controls every non-reference bus (n = m = q = 32);
    the partial variant uses the 20 buses of ``MEASURED_BUSES_33`` for both.
    """
    buses = MEASURED_BUSES_33 if partial else None
    net = load_network(network_path or BUNDLED_FEEDER, measured=buses, controlled=buses)
    name = "voltage_partial" if partial else "voltage_state"
    return lindistflow_system(net, control_gain_dt, relaxation,
                              sampling_period=VOLTAGE_SAMPLING_PERIOD, name=name)


# Voltage builtins take the feeder options; the reactor ignores them.
BUILTIN_SYSTEMS = {
    "reactor_state": lambda **_: batch_reactor_system(partial=False),
    "reactor_partial": lambda **_: batch_reactor_system(partial=True),
    "voltage_state": lambda **opts: voltage_system(partial=False, **opts),
    "voltage_partial": lambda **opts: voltage_system(partial=True, **opts),
}


def load_system(spec, control_gain_dt=VOLTAGE_CONTROL_GAIN_DT, relaxation=DEFAULT_RELAXATION):
    """Resolve a builtin name, a matrix file, or a feeder file to an LtiSystem.

    Feeder files (first non-comment line ``buses=...``) give a fully measured
    and fully controlled voltage plant. ``control_gain_dt`` and ``relaxation``
    apply to voltage plants only.

    Raises:
        ValueError: If ``spec`` is neither a builtin name nor an existing file.
    """
    if spec in BUILTIN_SYSTEMS:
        return BUILTIN_SYSTEMS[spec](control_gain_dt=control_gain_dt, relaxation=relaxation)
    if not os.path.isfile(spec):
        raise ValueError(f"unknown system {spec!r}: not a builtin ({', '.join(BUILTIN_SYSTEMS)}) or a file")
    if storage.is_network_file(spec):
        net = load_network(spec)
        return lindistflow_system(net, control_gain_dt, relaxation, sampling_period=VOLTAGE_SAMPLING_PERIOD,
                                  name=os.path.splitext(os.path.basename(spec))[0])
    sys = storage.read_system(spec)
    logger.debug(f"Loaded plant {sys.name} from {spec}: n={sys.n}, m={sys.m}, q={sys.q}")
    return sys
