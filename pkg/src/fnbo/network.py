"""Function-network DAGs: specification, validation and recursive evaluation.

A network is a sequence of scalar-valued nodes. Node ``k`` consumes the
outputs of its parent nodes (always lower-indexed) together with a slice of
the external input vector ``x``. Evaluating the network at ``x`` runs the
nodes in index order and returns all node outputs; the last node's output is
the objective value.

Indices are 0-based everywhere in this module. The JSON interchange format
(`network_from_json` / `network_to_json`) is 1-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadInterval,
    BadOrdering,
    CycleDetected,
    DanglingFinalNode,
    DimensionMismatch,
    DomainViolation,
    NonpositiveCost,
    ParseError,
)


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable description of a function-network DAG.

    Attributes
    ----------
    K : number of nodes; node K-1 is the final (objective) node.
    parents : per node, strictly ascending tuple of parent node indices.
    ext_inputs : per node, strictly ascending tuple of external dims consumed.
    domain : (d, 2) box bounds for the external input x.
    parent_ranges : per node, (n_parents, 2) bounds on each parent output,
        used as candidate bounds and for surrogate input normalization.
    costs : (K,) positive per-node evaluation costs.
    """

    K: int
    parents: tuple
    ext_inputs: tuple
    domain: np.ndarray
    parent_ranges: tuple
    costs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(tuple(int(j) for j in p) for p in self.parents))
        object.__setattr__(
            self, "ext_inputs", tuple(tuple(int(i) for i in e) for e in self.ext_inputs)
        )
        dom = np.asarray(self.domain, dtype=float).reshape(-1, 2)
        dom.setflags(write=False)
        object.__setattr__(self, "domain", dom)
        pr = []
        for k in range(len(self.parents)):
            r = np.asarray(self.parent_ranges[k], dtype=float).reshape(-1, 2)
            r.setflags(write=False)
            pr.append(r)
        object.__setattr__(self, "parent_ranges", tuple(pr))
        costs = np.asarray(self.costs, dtype=float).reshape(-1)
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)

    @property
    def dim(self):
        """Dimension d of the external input space."""
        return self.domain.shape[0]

    def node_dim(self, k):
        """Input dimension of node k: number of parents plus external dims."""
        return len(self.parents[k]) + len(self.ext_inputs[k])

    def node_bounds(self, k):
        """(lower, upper) arrays for the node-k input space Z_k.

        Parent-output bounds come first (ascending parent index), then the
        domain slices of the external dims, matching the canonical z layout.
        """
        lo = np.concatenate([self.parent_ranges[k][:, 0], self.domain[list(self.ext_inputs[k]), 0]])
        hi = np.concatenate([self.parent_ranges[k][:, 1], self.domain[list(self.ext_inputs[k]), 1]])
        return lo, hi

    def cost(self, k, z=None):
        """Evaluation cost of node k at input z (constant in this release)."""
        return float(self.costs[k])

    def total_cost(self):
        """Cost of one full network evaluation."""
        return float(self.costs.sum())

    def descendants(self, k):
        """Set of nodes strictly downstream of node k."""
        out = set()
        for j in range(k + 1, self.K):
            if any(p == k or p in out for p in self.parents[j]):
                out.add(j)
        return out

    def in_domain(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.domain[:, 0] - tol) and np.all(x <= self.domain[:, 1] + tol)
        )


@dataclass(frozen=True)
class NodeInput:
    """One node's input: parent outputs first, then external-input values."""

    parent_values: np.ndarray
    ext_values: np.ndarray

    def __post_init__(self):
        pv = np.atleast_1d(np.asarray(self.parent_values, dtype=float))
        ev = np.atleast_1d(np.asarray(self.ext_values, dtype=float))
        pv.setflags(write=False)
        ev.setflags(write=False)
        object.__setattr__(self, "parent_values", pv)
        object.__setattr__(self, "ext_values", ev)

    @property
    def vector(self):
        """The concatenated z vector in canonical (parents-first) order."""
        return np.concatenate([self.parent_values, self.ext_values])


def validate(spec: NetworkSpec):
    """Check all NetworkSpec invariants; raise on the first violation.

    Raises CycleDetected, BadOrdering, DanglingFinalNode, BadInterval,
    NonpositiveCost or DimensionMismatch. Returns the spec for chaining.
    """
    K = spec.K
    if K < 1:
        raise DimensionMismatch("network needs at least one node")
    if len(spec.parents) != K or len(spec.ext_inputs) != K or len(spec.parent_ranges) != K:
        raise DimensionMismatch("parents, ext_inputs and parent_ranges must have K entries")
    if spec.costs.shape != (K,):
        raise DimensionMismatch("costs must have K entries")

    _check_acyclic(spec)
    for k in range(K):
        for j in spec.parents[k]:
            if j >= k:
                raise BadOrdering(f"node {k} lists parent {j}, but parents must satisfy j < k")
            if j < 0:
                raise BadOrdering(f"node {k} lists negative parent {j}")
        if list(spec.parents[k]) != sorted(set(spec.parents[k])):
            raise BadOrdering(f"node {k} parents must be strictly ascending")
        if list(spec.ext_inputs[k]) != sorted(set(spec.ext_inputs[k])):
            raise DimensionMismatch(f"node {k} ext_inputs must be strictly ascending")
        for i in spec.ext_inputs[k]:
            if not 0 <= i < spec.dim:
                raise DimensionMismatch(f"node {k} external input dim {i} outside 0..{spec.dim-1}")
        if spec.parent_ranges[k].shape[0] != len(spec.parents[k]):
            raise DimensionMismatch(f"node {k} needs one parent range per parent")
        if spec.node_dim(k) == 0:
            raise DimensionMismatch(f"node {k} has no inputs")

    consumed = set(j for k in range(K) for j in spec.parents[k])
    if K - 1 in consumed:
        raise DanglingFinalNode("final node output is consumed by another node")
    for j in range(K - 1):
        if j not in consumed:
            raise DanglingFinalNode(f"node {j} output is consumed by no node; final node not unique")

    for lo, hi in spec.domain:
        if not lo < hi:
            raise BadInterval(f"domain interval [{lo}, {hi}] needs lower < upper")
    for k in range(K):
        for lo, hi in spec.parent_ranges[k]:
            if not lo < hi:
                raise BadInterval(f"node {k} parent range [{lo}, {hi}] needs lower < upper")
    if np.any(~(spec.costs > 0)):
        raise NonpositiveCost("every node cost must be strictly positive")
    return spec


def _check_acyclic(spec):
    # Edges run j -> k for j in parents[k]; detect cycles regardless of ordering.
    children = {k: [] for k in range(spec.K)}
    for k in range(spec.K):
        for j in spec.parents[k]:
            if 0 <= j < spec.K:
                if j == k:
                    raise CycleDetected(f"node {k} is its own parent")
                children[j].append(k)
    state = [0] * spec.K  # 0 unvisited, 1 on stack, 2 done
    for root in range(spec.K):
        if state[root]:
            continue
        stack = [(root, iter(children[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if state[nxt] == 1:
                    raise CycleDetected(f"cycle through nodes {node} and {nxt}")
                if state[nxt] == 0:
                    state[nxt] = 1
                    stack.append((nxt, iter(children[nxt])))
                    advanced = True
                    break
            if not advanced:
                state[node] = 2
                stack.pop()


def assemble_node_input(spec, k, parent_values, x):
    """Build z_k from parent outputs and the external slice of x."""
    parent_values = np.atleast_1d(np.asarray(parent_values, dtype=float))
    x = np.asarray(x, dtype=float)
    if parent_values.shape != (len(spec.parents[k]),):
        raise DimensionMismatch(
            f"node {k} expects {len(spec.parents[k])} parent values, got {parent_values.shape}"
        )
    if x.shape != (spec.dim,):
        raise DimensionMismatch(f"x must be {spec.dim}-dimensional, got {x.shape}")
    return NodeInput(parent_values, x[list(spec.ext_inputs[k])])


def evaluate_network(spec, funcs, x):
    """Evaluate all nodes at external input x; returns the (K,) output vector.

    Each entry of `funcs` maps a z vector (parents-first layout) to a scalar.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise DimensionMismatch(f"x must be {spec.dim}-dimensional, got {x.shape}")
    if not spec.in_domain(x):
        raise DomainViolation(f"{x} outside the domain box")
    out = propagate_functions(spec, funcs, x[None, :])
    return out[:, 0]


def propagate_functions(spec, funcs, X):
    """Vectorized recursive evaluation: X is (m, d); returns (K, m) outputs.

    Node functions must accept (m, node_dim) arrays and return (m,).
    No domain check; callers that expose user-facing entry points check first.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    Y = np.empty((spec.K, m))
    for k in range(spec.K):
        cols = [Y[j] for j in spec.parents[k]] + [X[:, i] for i in spec.ext_inputs[k]]
        Z = np.stack(cols, axis=1)
        vals = np.asarray(funcs[k](Z), dtype=float).reshape(m)
        Y[k] = vals
    return Y


# ---------------------------------------------------------------------------
# JSON interchange (1-based indices, matching the documented wire format)
# ---------------------------------------------------------------------------

def network_from_json(doc):
    """Build a validated NetworkSpec from a JSON document (dict or str).

    Expected keys: K, parents, ext_inputs, domain, parent_ranges, costs.
    Node and dimension indices in the document are 1-based.
    """
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ParseError(str(e)) from e
    try:
        K = int(doc["K"])
        parents = [[int(j) - 1 for j in p] for p in doc["parents"]]
        ext_inputs = [[int(i) - 1 for i in e] for e in doc["ext_inputs"]]
        domain = np.asarray(doc["domain"], dtype=float)
        parent_ranges = [np.asarray(r, dtype=float).reshape(-1, 2) for r in doc["parent_ranges"]]
        costs = np.asarray(doc["costs"], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed network document: {e}") from e
    spec = NetworkSpec(
        K=K,
        parents=parents,
        ext_inputs=ext_inputs,
        domain=domain,
        parent_ranges=parent_ranges,
        costs=costs,
    )
    return validate(spec)


def network_to_json(spec):
    """Serialize a NetworkSpec to the 1-based JSON document structure."""
    return {
        "K": spec.K,
        "parents": [[j + 1 for j in p] for p in spec.parents],
        "ext_inputs": [[i + 1 for i in e] for e in spec.ext_inputs],
        "domain": spec.domain.tolist(),
        "parent_ranges": [r.tolist() for r in spec.parent_ranges],
        "costs": spec.costs.tolist(),
    }
