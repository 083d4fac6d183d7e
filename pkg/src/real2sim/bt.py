"""Behavior-tree representation, tick semantics, and plan-to-tree construction.

The runtime passed to tick() must provide:

    execute_action(name, args, blackboard, path) -> TickStatus
    record_trace(path, event, status)            # event: "enter" | "exit"

Composites are memory-less (each tick re-evaluates from the first child) and
the shipped actions block until completion, so Running never escapes a leaf
here; the status is still propagated faithfully if a custom action returns it.
"""

from __future__ import annotations

from enum import Enum


class TickStatus(Enum):
    Success = "Success"
    Failure = "Failure"
    Running = "Running"


COMPOSITE_TYPES = ("Sequence", "Selector")
NODE_TYPES = COMPOSITE_TYPES + ("Action",)


class BTNode:
    """Tree node: Sequence / Selector composite or Action leaf."""

    __slots__ = ("node_type", "name", "args", "children")

    def __init__(self, node_type, name, args=None, children=None):
        if node_type not in NODE_TYPES:
            raise ValueError(f"unknown node type {node_type!r}")
        self.node_type = node_type
        self.name = str(name)
        self.args = dict(args or {})
        self.children = list(children or [])
        if node_type == "Action":
            if self.children:
                raise ValueError(f"action node {self.name!r} cannot have children")
        else:
            if not self.children:
                raise ValueError(f"composite node {self.name!r} needs at least one child")
            if self.args:
                raise ValueError(f"composite node {self.name!r} cannot take args")

    def walk(self, path=""):
        """Yield (path, node) depth-first; paths are /-joined indexed names."""
        here = f"{path}/{self.name}" if path else self.name
        yield here, self
        for i, child in enumerate(self.children):
            yield from child._walk_indexed(here, i)

    def _walk_indexed(self, parent_path, index):
        here = f"{parent_path}/{index}:{self.name}"
        yield here, self
        for i, child in enumerate(self.children):
            yield from child._walk_indexed(here, i)


class Blackboard:
    """Write-once key-value store; declared keys accumulate lists instead."""

    def __init__(self, accumulating=()):
        self._data = {}
        self._accumulating = set(accumulating)

    def put(self, key, value):
        if key in self._accumulating:
            self._data.setdefault(key, []).append(value)
            return
        if key in self._data:
            raise KeyError(f"blackboard key {key!r} already written")
        self._data[key] = value

    def get(self, key, default=None):
        return self._data.get(key, default)

    def keys(self):
        return self._data.keys()


def tick(tree: BTNode, blackboard: Blackboard, runtime, _path=None) -> TickStatus:
    """Evaluate one tick of the tree against the runtime."""
    path = _path if _path is not None else tree.name
    runtime.record_trace(path, "enter", None)

    if tree.node_type == "Action":
        status = runtime.execute_action(tree.name, tree.args, blackboard, path)
    elif tree.node_type == "Sequence":
        status = TickStatus.Success
        for i, child in enumerate(tree.children):
            status = tick(child, blackboard, runtime, f"{path}/{i}:{child.name}")
            if status is not TickStatus.Success:
                break
    else:  # Selector
        status = TickStatus.Failure
        for i, child in enumerate(tree.children):
            status = tick(child, blackboard, runtime, f"{path}/{i}:{child.name}")
            if status is not TickStatus.Failure:
                break

    runtime.record_trace(path, "exit", status)
    return status


def from_plan(plan) -> BTNode:
    """Build the executable tree from a validated PlanDocument."""
    if not getattr(plan, "validated", False):
        raise ValueError("plan has not passed validation; run validate_plan first")
    return _node_from_dict(plan.tree)


def _node_from_dict(node):
    children = [_node_from_dict(c) for c in node.get("children", [])]
    return BTNode(node["type"], node.get("name", node["type"].lower()),
                  args=node.get("args"), children=children)
