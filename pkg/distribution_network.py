"""Radial feeder data and the linearized (LinDistFlow) voltage plant built from it."""

import logging
import os
from dataclasses import dataclass, replace

import networkx as nx
import numpy as np

from lti import LtiSystem

logger = logging.getLogger(__name__)

BUNDLED_FEEDER = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data", "ieee33.csv")

# Buses that carry both a voltage sensor and a controllable inverter on the
# bundled 33-bus feeder. Every unmeasured bus is at most two hops from a
# measured one along a branch, which makes the lag exactly 3.
MEASURED_BUSES_33 = (2, 3, 4, 5, 6, 7, 8, 12, 13, 14, 15, 16, 19, 20, 23, 26, 28, 29, 30, 31)

DEFAULT_RELAXATION = 0.5

COLUMN_HEADER = ("from", "to", "r_pu", "x_pu")


class NetworkFormatError(ValueError):
    """Raised for malformed feeder files and non-radial topologies."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class NetworkData:
    """A radial feeder.

    Buses are numbered 1..bus_count. The state of the voltage plant is the
    voltage deviation at every non-reference bus, in ascending bus order.
    """

    bus_count: int
    ref_bus: int
    branches: tuple
    measured_buses: tuple
    controlled_buses: tuple

    @property
    def state_buses(self):
        return tuple(b for b in range(1, self.bus_count + 1) if b != self.ref_bus)

    def graph(self):
        """Undirected networkx graph with ``r`` and ``x`` edge attributes."""
        g = nx.Graph()
        g.add_nodes_from(range(1, self.bus_count + 1))
        for br in self.branches:
            g.add_edge(br.from_bus, br.to_bus, r=br.r, x=br.x)
        return g

    def with_buses(self, measured=None, controlled=None):
        """Copy with a different measured/controlled bus selection."""
        measured = self.state_buses if measured is None else tuple(sorted(measured))
        controlled = self.state_buses if controlled is None else tuple(sorted(controlled))
        _check_selection(self, measured, "measured")
        _check_selection(self, controlled, "controlled")
        return replace(self, measured_buses=measured, controlled_buses=controlled)


def _check_selection(net, buses, label):
    allowed = set(net.state_buses)
    if not buses:
        raise NetworkFormatError(f"{label} bus set is empty")
    if len(set(buses)) != len(buses):
        raise NetworkFormatError(f"{label} bus set has duplicates")
    bad = [b for b in buses if b not in allowed]
    if bad:
        raise NetworkFormatError(f"{label} buses {bad} are not non-reference buses of the feeder")


def _parse_header(text, line_no):
    fields = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise NetworkFormatError(f"expected header 'buses=<N>,ref=<bus>', got {text!r}", line_no)
        fields[key.strip()] = value.strip()
    try:
        bus_count = int(fields["buses"])
        ref_bus = int(fields["ref"])
    except (KeyError, ValueError):
        raise NetworkFormatError(f"expected header 'buses=<N>,ref=<bus>', got {text!r}", line_no)
    if bus_count < 2:
        raise NetworkFormatError(f"feeder needs at least 2 buses, got {bus_count}", line_no)
    if not 1 <= ref_bus <= bus_count:
        raise NetworkFormatError(f"reference bus {ref_bus} outside 1..{bus_count}", line_no)
    return bus_count, ref_bus


def _parse_branch(text, line_no, bus_count):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise NetworkFormatError(f"expected 4 fields 'from,to,r_pu,x_pu', got {len(parts)}", line_no)
    try:
        from_bus, to_bus = int(parts[0]), int(parts[1])
        r, x = float(parts[2]), float(parts[3])
    except ValueError:
        raise NetworkFormatError(f"malformed branch row {text!r}", line_no)
    for bus in (from_bus, to_bus):
        if not 1 <= bus <= bus_count:
            raise NetworkFormatError(f"bus {bus} outside 1..{bus_count}", line_no)
    if from_bus == to_bus:
        raise NetworkFormatError(f"branch {from_bus}-{to_bus} is a self-loop", line_no)
    if r < 0 or x <= 0:
        raise NetworkFormatError(f"branch {from_bus}-{to_bus} needs r >= 0 and x > 0", line_no)
    return Branch(from_bus, to_bus, r, x)


def parse_network(lines, measured=None, controlled=None):
    """Parse feeder text (an iterable of lines) into NetworkData.

    Blank lines and lines starting with ``#`` are skipped. The first remaining
    line is the ``buses=<N>,ref=<bus>`` header; an optional ``from,to,r_pu,x_pu``
    column header may follow; every other line is one branch.

    Raises:
        NetworkFormatError: With the 1-based line number of the first problem.
    """
    header = None
    branches = []
    g = nx.Graph()
    for line_no, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if header is None:
            header = _parse_header(text, line_no)
            g.add_nodes_from(range(1, header[0] + 1))
            continue
        if tuple(p.strip() for p in text.split(",")) == COLUMN_HEADER:
            continue
        br = _parse_branch(text, line_no, header[0])
        if g.has_edge(br.from_bus, br.to_bus):
            raise NetworkFormatError(f"duplicate branch {br.from_bus}-{br.to_bus}", line_no)
        if nx.has_path(g, br.from_bus, br.to_bus):
            raise NetworkFormatError(
                f"branch {br.from_bus}-{br.to_bus} closes a cycle; the feeder must be radial", line_no
            )
        g.add_edge(br.from_bus, br.to_bus)
        branches.append(br)
    if header is None:
        raise NetworkFormatError("missing 'buses=<N>,ref=<bus>' header")
    bus_count, ref_bus = header
    if not nx.is_tree(g):
        isolated = sorted(set(g.nodes) - nx.node_connected_component(g, ref_bus))
        raise NetworkFormatError(f"feeder is not connected: buses {isolated} unreachable from bus {ref_bus}")
    net = NetworkData(bus_count, ref_bus, tuple(branches), (), ())
    return net.with_buses(measured, controlled)


def load_network(path, measured=None, controlled=None):
    """Read a feeder CSV file.

    Args:
        path: File with header ``buses=<N>,ref=<bus>`` and rows ``from,to,r_pu,x_pu``.
        measured: Buses with voltage measurements; all non-reference buses by default.
        controlled: Buses with a controllable reactive-power input; all
            non-reference buses by default.

    Returns:
        NetworkData

    Raises:
        NetworkFormatError: On malformed rows, duplicate branches or a non-tree topology.
    """
    with open(path, encoding="utf-8") as f:
        net = parse_network(f, measured, controlled)
    logger.debug(f"Loaded feeder {path}: {net.bus_count} buses, {len(net.branches)} branches")
    return net


def reactance_matrix(net):
    """X_net[i, j] = 2 Σ x over branches shared by the paths ref→i and ref→j.

    Rows and columns follow ``net.state_buses``.
    """
    g = net.graph()
    paths = nx.single_source_shortest_path(g, net.ref_bus)
    edge_sets = {}
    for bus in net.state_buses:
        path = paths[bus]
        edge_sets[bus] = {frozenset(e) for e in zip(path[:-1], path[1:])}
    buses = net.state_buses
    out = np.zeros((len(buses), len(buses)))
    for i, bi in enumerate(buses):
        for j in range(i, len(buses)):
            common = edge_sets[bi] & edge_sets[buses[j]]
            value = 2.0 * sum(g.edges[tuple(e)]["x"] for e in common)
            out[i, j] = out[j, i] = value
    return out


def reduced_laplacian(net):
    """Weighted feeder Laplacian (weights 1/x) with the reference bus removed."""
    g = net.graph()
    for u, v, data in g.edges(data=True):
        data["weight"] = 1.0 / data["x"]
    lap = nx.laplacian_matrix(g, nodelist=list(range(1, net.bus_count + 1)), weight="weight").toarray()
    keep = [b - 1 for b in net.state_buses]
    return lap[np.ix_(keep, keep)]


def _selection(net, buses):
    index = {b: i for i, b in enumerate(net.state_buses)}
    out = np.zeros((len(buses), len(net.state_buses)))
    for row, bus in enumerate(buses):
        out[row, index[bus]] = 1.0
    return out


def lindistflow_system(net, control_gain_dt, relaxation=DEFAULT_RELAXATION, sampling_period=1.0, name=None):
    """Discrete voltage plant x(k+1) = (I - γ M̂) x(k) + Δt X_net S_cᵀ u(k), y = S_m x.

    M̂ is the reduced weighted Laplacian scaled to unit spectral norm. With
    γ = 0 the plant is a pure integrator, which is only observable when every
    bus is measured.

    Args:
        net: NetworkData.
        control_gain_dt: Δt scaling of the reactive-power sensitivity.
        relaxation: γ in [0, 1].
        sampling_period: Seconds per sample, for collection-time reporting.
        name: Plant name.

    Returns:
        LtiSystem with n = bus_count - 1.
    """
    if not 0.0 <= relaxation <= 1.0:
        raise ValueError(f"relaxation must lie in [0, 1], got {relaxation}")
    n = len(net.state_buses)
    x_net = reactance_matrix(net)
    lap = reduced_laplacian(net)
    m_hat = lap / np.linalg.norm(lap, 2)
    a = np.eye(n) - relaxation * m_hat
    b = control_gain_dt * x_net @ _selection(net, net.controlled_buses).T
    c = _selection(net, net.measured_buses)
    return LtiSystem(a, b, c, name=name or f"feeder{net.bus_count}", sampling_period=sampling_period)
