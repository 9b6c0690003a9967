import math

import numpy as np
import pytest

from streetsim.mobility import Device, shortest_path
from streetsim.streets import Street, StreetGraph, StreetPosition
from streetsim.torus import TorusPoint, min_image_delta


def make_graph(L, verts, edge_pairs):
    """Hand-built street graph for unit tests.

    ``verts``: {id: (x, y)}; ``edge_pairs``: list of (u, v).  Lengths and
    unwrapped deltas come from the minimal-image geometry.  No cells.
    """
    vertices = {vid: TorusPoint(float(x), float(y)) for vid, (x, y) in verts.items()}
    edges = {}
    for eid, (u, v) in enumerate(edge_pairs):
        delta = min_image_delta(vertices[u], vertices[v], L)
        length = math.hypot(*delta)
        edges[eid] = Street(eid, u, v, length, delta, (0, 0))
    return StreetGraph(L, vertices, edges, {})


def make_device(did, g, frm, to, velocity):
    """Device with a shortest path from frm to to, ready for the engine."""
    path = shortest_path(g, frm, to)
    return Device(
        id=did, pos=path.start, time_of_pos=0.0, velocity=velocity,
        path=path, home=frm, destination=path.end,
        street_length=g.edges[path.streets[0]].length,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def single_street_graph():
    """One 100 m street on a large torus."""
    return make_graph(500.0, {0: (0.0, 0.0), 1: (100.0, 0.0)}, [(0, 1)])


def sp(g, eid, v1, v2, p):
    return StreetPosition(eid, v1, v2, p)
