"""Pixel graphs: square lattices and small explicit graphs.

Every graph stores an undirected edge list and a directed-edge index used
by the message-passing code. Edge ``e = (i, j)`` owns two directed edges:
``2e`` carries ``i -> j`` and ``2e + 1`` carries ``j -> i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARIES = ("periodic", "free")


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with a directed-edge index.

    Parameters
    ----------
    n_nodes : int
    edges : ndarray of shape (n_edges, 2)
        Unordered node pairs. Self-loops and duplicates are rejected.
    """

    n_nodes: int
    edges: np.ndarray
    src: np.ndarray = field(init=False, repr=False)
    dst: np.ndarray = field(init=False, repr=False)
    degree: np.ndarray = field(init=False, repr=False)
    in_slots: np.ndarray = field(init=False, repr=False)
    reverse: np.ndarray = field(init=False, repr=False)  # index of the opposite directed edge

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        n = int(self.n_nodes)
        if n < 1:
            raise ValueError("graph needs at least one node")
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        key = np.sort(edges, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("duplicate edges are not allowed")
        edges.setflags(write=False)

        n_dir = 2 * len(edges)
        src = np.empty(n_dir, dtype=np.int64)
        dst = np.empty(n_dir, dtype=np.int64)
        src[0::2], dst[0::2] = edges[:, 0], edges[:, 1]
        src[1::2], dst[1::2] = edges[:, 1], edges[:, 0]
        degree = np.bincount(dst, minlength=n)

        # incoming directed edges per node, padded with the sentinel n_dir
        width = max(int(degree.max()) if n_dir else 0, 1)
        slots = np.full((n, width), n_dir, dtype=np.int64)
        fill = np.zeros(n, dtype=np.int64)
        for d in range(n_dir):
            i = dst[d]
            slots[i, fill[i]] = d
            fill[i] += 1

        reverse = np.arange(n_dir, dtype=np.int64) ^ 1
        for name, arr in (("src", src), ("dst", dst), ("degree", degree), ("in_slots", slots),
                          ("reverse", reverse)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "n_nodes", n)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_directed(self) -> int:
        return 2 * len(self.edges)

    def neighbors(self, i: int) -> np.ndarray:
        """Nodes adjacent to ``i``, in directed-edge order."""
        slots = self.in_slots[i]
        return self.src[slots[slots < self.n_directed]]

    def directed_index(self, j: int, i: int) -> int:
        """Index of the directed edge carrying the message ``j -> i``."""
        hits = np.flatnonzero((self.src == j) & (self.dst == i))
        if len(hits) == 0:
            raise KeyError(f"no edge between {j} and {i}")
        return int(hits[0])

    def disagreement(self, labels) -> float:
        """Fraction of edges whose endpoint labels differ."""
        if self.n_edges == 0:
            raise ValueError("disagreement is undefined on a graph without edges")
        a = np.asarray(labels).reshape(-1)
        return float(np.mean(a[self.edges[:, 0]] != a[self.edges[:, 1]]))

    @classmethod
    def chain(cls, n: int) -> "Graph":
        return cls(n, np.column_stack([np.arange(n - 1), np.arange(1, n)]))

    @classmethod
    def random_tree(cls, n: int, rng) -> "Graph":
        """Uniform random recursive tree: node k attaches to a random earlier node."""
        rng = np.random.default_rng(rng)
        parents = [int(rng.integers(k)) for k in range(1, n)]
        return cls(n, np.column_stack([parents, np.arange(1, n)]))


@dataclass(frozen=True, eq=False)
class Grid(Graph):
    """Square pixel lattice with 4-neighbourhoods.

    Pixels are numbered row-major (``i = row * width + col``). Edges are
    emitted pixel by pixel in the same order, right neighbour before down
    neighbour.
    """

    width: int = 0
    height: int = 0
    boundary: str = "free"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def build_grid(width: int, height: int, boundary: str = "free") -> Grid:
    """Build a ``height x width`` lattice.

    Periodic boundaries wrap both directions and need ``width, height >= 3``;
    narrower wraps would create duplicate edges.
    """
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise ValueError(f"grid dimensions must be positive, got {width}x{height}")
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    periodic = boundary == "periodic"
    if periodic and (width < 3 or height < 3):
        raise ValueError("periodic boundary requires width >= 3 and height >= 3")

    rows, cols = np.divmod(np.arange(width * height), width)
    pix = rows * width + cols
    right = (rows * width + (cols + 1) % width) if periodic else pix + 1
    down = (((rows + 1) % height) * width + cols) if periodic else pix + width
    has_right = np.ones_like(pix, dtype=bool) if periodic else cols < width - 1
    has_down = np.ones_like(pix, dtype=bool) if periodic else rows < height - 1

    pairs = np.stack([np.column_stack([pix, right]), np.column_stack([pix, down])], axis=1)
    keep = np.column_stack([has_right, has_down])
    edges = pairs[keep]
    return Grid(width * height, edges, width=width, height=height, boundary=boundary)
