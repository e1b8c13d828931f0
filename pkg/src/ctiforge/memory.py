"""Concept memory for the pipeline agent.

A labelled graph of concepts with is-a edges.  Node activation follows an
exponential forgetting curve ``exp(-dt / stability)`` over a logical clock
(one tick per processed report); nodes whose activation falls below the
retention floor are pruned.  Retrieval walks is-a edges in both directions,
costing one unit of semantic distance per level traversed.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

DEFAULT_STABILITY = 1.0
DEFAULT_RETENTION_FLOOR = 0.01


class GraphError(Exception):
    pass


class MissingNode(GraphError):
    pass


class CycleError(GraphError):
    """Adding the edge would make the is-a subgraph cyclic."""


class ClockRegression(GraphError):
    """decay() called with a timestamp older than a node access."""


@dataclass
class ConceptNode:
    label: str
    activation: float
    last_access: float
    stability: float


class ConceptGraph:
    """Single-writer concept graph with activation decay.

    is-a edges point child -> parent and are kept acyclic.
    """

    def __init__(
        self,
        stability: float = DEFAULT_STABILITY,
        retention_floor: float = DEFAULT_RETENTION_FLOOR,
    ):
        if stability <= 0:
            raise ValueError("stability must be positive")
        if not 0 <= retention_floor < 1:
            raise ValueError("retention_floor must be in [0, 1)")
        self.stability = stability
        self.retention_floor = retention_floor
        self._nodes: dict[str, ConceptNode] = {}
        self._parents: dict[str, set[str]] = {}
        self._children: dict[str, set[str]] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, label: str) -> bool:
        return label in self._nodes

    def node(self, label: str) -> ConceptNode:
        try:
            return self._nodes[label]
        except KeyError:
            raise MissingNode(label) from None

    def labels(self) -> list[str]:
        return sorted(self._nodes)

    def edges(self) -> list[tuple[str, str]]:
        return sorted((c, p) for c, parents in self._parents.items() for p in parents)

    def insert_concept(self, label: str, now: float) -> ConceptNode:
        """Create the node, or rehearse it: activation back to 1.0."""
        node = self._nodes.get(label)
        if node is None:
            node = ConceptNode(label=label, activation=1.0, last_access=now, stability=self.stability)
            self._nodes[label] = node
            self._parents.setdefault(label, set())
            self._children.setdefault(label, set())
        else:
            node.activation = 1.0
            node.last_access = now
        return node

    def link(self, child: str, parent: str) -> None:
        """Add an is-a edge child -> parent, rejecting self-loops and cycles."""
        if child not in self._nodes:
            raise MissingNode(child)
        if parent not in self._nodes:
            raise MissingNode(parent)
        if child == parent:
            raise CycleError(f"self-loop on {child!r}")
        if parent in self._parents[child]:
            return
        if self._reaches(parent, child):
            raise CycleError(f"edge {child!r} -> {parent!r} would close a cycle")
        self._parents[child].add(parent)
        self._children[parent].add(child)

    def _reaches(self, start: str, target: str) -> bool:
        # Follow child->parent edges from start; a path to target means the
        # new edge target->start ... start->target would be a cycle.
        stack = [start]
        seen = {start}
        while stack:
            cur = stack.pop()
            if cur == target:
                return True
            for parent in self._parents.get(cur, ()):
                if parent not in seen:
                    seen.add(parent)
                    stack.append(parent)
        return False

    def decay(self, now: float) -> int:
        """Apply the forgetting curve at time ``now``; prune faded nodes.

        Returns the number of pruned nodes.  Idempotent at a fixed ``now``.
        """
        for node in self._nodes.values():
            if now < node.last_access:
                raise ClockRegression(
                    f"now={now} precedes last access {node.last_access} of {node.label!r}"
                )
        doomed: list[str] = []
        for node in self._nodes.values():
            node.activation = math.exp(-(now - node.last_access) / node.stability)
            if node.activation < self.retention_floor:
                doomed.append(node.label)
        for label in doomed:
            self._remove(label)
        return len(doomed)

    def _remove(self, label: str) -> None:
        for parent in self._parents.pop(label, ()):
            self._children[parent].discard(label)
        for child in self._children.pop(label, ()):
            self._parents[child].discard(label)
        del self._nodes[label]

    def retrieve(self, query: str, max_depth: int) -> list[tuple[str, int, float]]:
        """Breadth-first neighborhood of ``query`` over is-a edges (both ways).

        Returns (label, semantic_distance, activation) tuples ordered by
        distance, then activation descending, then label.
        """
        if query not in self._nodes:
            raise MissingNode(query)
        dist: dict[str, int] = {query: 0}
        frontier = deque([query])
        while frontier:
            cur = frontier.popleft()
            if dist[cur] >= max_depth:
                continue
            for neighbor in self._parents[cur] | self._children[cur]:
                if neighbor not in dist:
                    dist[neighbor] = dist[cur] + 1
                    frontier.append(neighbor)
        rows = [(label, d, self._nodes[label].activation) for label, d in dist.items()]
        rows.sort(key=lambda r: (r[1], -r[2], r[0]))
        return rows

    def to_snapshot(self) -> dict:
        return {
            "nodes": [
                {
                    "label": n.label,
                    "activation": n.activation,
                    "last_access": n.last_access,
                    "stability": n.stability,
                }
                for n in sorted(self._nodes.values(), key=lambda n: n.label)
            ],
            "edges": [{"child": c, "parent": p} for c, p in self.edges()],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_snapshot(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_snapshot(
        cls,
        snapshot: dict,
        stability: float = DEFAULT_STABILITY,
        retention_floor: float = DEFAULT_RETENTION_FLOOR,
    ) -> "ConceptGraph":
        graph = cls(stability=stability, retention_floor=retention_floor)
        for n in snapshot.get("nodes", []):
            node = ConceptNode(
                label=n["label"],
                activation=float(n["activation"]),
                last_access=float(n["last_access"]),
                stability=float(n["stability"]),
            )
            graph._nodes[node.label] = node
            graph._parents.setdefault(node.label, set())
            graph._children.setdefault(node.label, set())
        for e in snapshot.get("edges", []):
            graph.link(e["child"], e["parent"])
        return graph

    @classmethod
    def load(cls, path: str | Path, **kwargs) -> "ConceptGraph":
        return cls.from_snapshot(json.loads(Path(path).read_text()), **kwargs)
