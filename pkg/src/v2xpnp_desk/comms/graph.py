"""
V2X communication graph of one frame.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from v2xpnp_desk.shared.constants import COMMUNICATION_RANGE_M, RELATION_INDEX
from v2xpnp_desk.shared.errors import GraphError
from v2xpnp_desk.shared.types import Agent, AgentKind


@dataclass(frozen=True)
class V2XGraph:
    """
    Agents within communication range are connected in both directions.
    Edge (i, j) carries the relation label kind(i)-kind(j).
    """

    frame: int
    kinds: dict[int, AgentKind]
    edges: frozenset[tuple[int, int]]

    def has_edge(self, sender: int, receiver: int) -> bool:
        return (sender, receiver) in self.edges

    def neighbors(self, agent_id: int) -> list[int]:
        """Connected agents, sorted by id."""
        return sorted(j for i, j in self.edges if i == agent_id)

    def relation(self, i: int, j: int) -> str:
        """
        Raises:
            GraphError: If i and j are distinct and not connected.
        """
        if i != j and not self.has_edge(i, j):
            raise GraphError(
                f"agents {i} and {j} are not connected at frame {self.frame}"
            )
        return f"{self.kinds[i].letter}-{self.kinds[j].letter}"

    def relation_indices(self, order: Sequence[int]) -> np.ndarray:
        """(A, A) relation index between agents in `order`; -1 if unconnected."""
        n = len(order)
        out = np.full((n, n), -1, dtype=np.int64)
        for a, i in enumerate(order):
            for b, j in enumerate(order):
                if i == j or self.has_edge(i, j):
                    out[a, b] = RELATION_INDEX[self.relation(i, j)]
        return out

    def connectivity(self, order: Sequence[int]) -> np.ndarray:
        """(A, A) boolean adjacency including self loops."""
        return self.relation_indices(order) >= 0


def build_v2x_graph(
    agents: Sequence[Agent],
    frame: int,
    comm_range: float = COMMUNICATION_RANGE_M,
) -> V2XGraph:
    """Connect every pair of agents at most `comm_range` apart at `frame`."""
    kinds = {a.agent_id: a.kind for a in agents}
    xy = np.array([a.pose(frame)[:2] for a in agents], dtype=np.float64).reshape(-1, 2)
    dist = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    edges = set()
    for a, agent_a in enumerate(agents):
        for b, agent_b in enumerate(agents):
            if a != b and dist[a, b] <= comm_range:
                edges.add((agent_a.agent_id, agent_b.agent_id))
    return V2XGraph(frame=frame, kinds=kinds, edges=frozenset(edges))
