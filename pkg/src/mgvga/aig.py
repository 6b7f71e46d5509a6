"""And-Inverter Graph data model plus the structural and functional oracles.

Nodes are dense-indexed and typed (PI / PO / AND / NOT, plus a MASKED
placeholder used only by the type-masking training path). Two-identical-input
AND gates are stored as a single edge with multiplicity 2, so every AND has a
multiplicity-weighted in-degree of exactly 2. Graphs are immutable after
construction; every operation returns a new graph.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass, field
from functools import cached_property


class NodeType(enum.Enum):
    PI = "PI"
    PO = "PO"
    AND = "AND"
    NOT = "NOT"
    MASKED = "MASKED"


# Classification vocabulary used by prediction heads: the four real gate types.
REAL_TYPES = (NodeType.PI, NodeType.PO, NodeType.AND, NodeType.NOT)
TYPE_INDEX = {t: i for i, t in enumerate(REAL_TYPES)}

EXHAUSTIVE_PI_LIMIT = 16


class AigError(Exception):
    """Base error for graph construction and oracle misuse."""


class CapacityError(AigError):
    """Exhaustive simulation requested beyond the input-count limit."""


class Violation:
    """A single structural-invariant violation found by validate()."""

    def __init__(self, kind: str, node: int | None, detail: str):
        self.kind = kind
        self.node = node
        self.detail = detail

    def __repr__(self):
        return f"Violation({self.kind!r}, node={self.node}, {self.detail!r})"

    def __eq__(self, other):
        return (self.kind, self.node, self.detail) == (other.kind, other.node, other.detail)


class AigGraph:
    """Directed acyclic circuit over typed nodes.

    edges are (src, dst, multiplicity) triples with unique (src, dst) pairs;
    multiplicity 2 marks the two parallel inputs of an identical-input AND.
    ``pinned`` maps degenerate constant inputs (AIGER literal 0 uses) to their
    fixed simulation value; such nodes are typed PI but never enumerated.
    """

    def __init__(self, types, edges, outputs, name="", pinned=None,
                 pi_names=None, po_names=None):
        self.types = tuple(types)
        self.edges = tuple((int(s), int(d), int(m)) for s, d, m in edges)
        self.outputs = tuple(int(o) for o in outputs)
        self.name = name
        self.pinned = dict(pinned) if pinned else {}
        self.pi_names = tuple(pi_names) if pi_names else None
        self.po_names = tuple(po_names) if po_names else None

    @property
    def num_nodes(self) -> int:
        return len(self.types)

    @cached_property
    def fanins(self):
        """fanins[i] = list of (src, mult) for edges into i, in edge order."""
        fi = [[] for _ in range(self.num_nodes)]
        for s, d, m in self.edges:
            fi[d].append((s, m))
        return fi

    @cached_property
    def fanouts(self):
        fo = [[] for _ in range(self.num_nodes)]
        for s, d, m in self.edges:
            fo[s].append((d, m))
        return fo

    @cached_property
    def pis(self):
        """Free primary inputs (pinned constants excluded), ascending id."""
        return tuple(i for i, t in enumerate(self.types)
                     if t is NodeType.PI and i not in self.pinned)

    @property
    def num_pis(self) -> int:
        return len(self.pis)

    @property
    def num_pos(self) -> int:
        return len(self.outputs)

    def count(self, node_type: NodeType) -> int:
        return sum(1 for t in self.types if t is node_type)

    @property
    def num_ands(self) -> int:
        return self.count(NodeType.AND)

    @cached_property
    def topo_order(self):
        """Node ids in a topological order; raises AigError on a cycle."""
        indeg = [0] * self.num_nodes
        for _, d, _ in self.edges:
            indeg[d] += 1
        ready = [i for i in range(self.num_nodes) if indeg[i] == 0]
        order = []
        while ready:
            n = ready.pop()
            order.append(n)
            for d, _ in self.fanouts[n]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    ready.append(d)
        if len(order) != self.num_nodes:
            raise AigError("graph contains a cycle")
        return tuple(order)

    def __repr__(self):
        return (f"AigGraph(name={self.name!r}, n={self.num_nodes}, "
                f"pi={self.num_pis}, po={self.num_pos}, and={self.num_ands})")

    def to_json(self) -> str:
        """Debug dump: node list + edge list + names."""
        return json.dumps({
            "name": self.name,
            "nodes": [{"id": i, "type": t.value} for i, t in enumerate(self.types)],
            "edges": [{"src": s, "dst": d, "mult": m} for s, d, m in self.edges],
            "outputs": list(self.outputs),
            "pinned": {str(k): v for k, v in self.pinned.items()},
            "pi_names": list(self.pi_names) if self.pi_names else None,
            "po_names": list(self.po_names) if self.po_names else None,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AigGraph":
        obj = json.loads(text)
        return cls(
            types=[NodeType(n["type"]) for n in obj["nodes"]],
            edges=[(e["src"], e["dst"], e["mult"]) for e in obj["edges"]],
            outputs=obj["outputs"],
            name=obj.get("name", ""),
            pinned={int(k): v for k, v in obj.get("pinned", {}).items()},
            pi_names=obj.get("pi_names"),
            po_names=obj.get("po_names"),
        )


@dataclass
class TruthTable:
    """Simulation result: one bitmask per PO, bit k = output under the k-th
    input assignment. Exhaustive tables order assignments by the integer value
    of the PI bit-vector (PI index 0 = least significant bit); sampled tables
    carry the assignment list instead.
    """

    num_inputs: int
    num_pos: int
    po_masks: tuple
    exhaustive: bool = True
    assignments: tuple | None = None

    @property
    def num_assignments(self) -> int:
        if self.exhaustive:
            return 1 << self.num_inputs
        return len(self.assignments)

    def bits(self, po: int):
        mask = self.po_masks[po]
        return tuple((mask >> k) & 1 for k in range(self.num_assignments))


@dataclass
class Cone:
    """Transitive fan-in of a root node, re-rooted as a single-PO circuit."""

    root: int
    members: frozenset
    extracted: AigGraph
    node_map: dict = field(repr=False, default_factory=dict)


@dataclass
class EquivVerdict:
    verdict: str  # "equivalent" | "inequivalent" | "unknown"
    witness: dict | None = None  # PI node id -> bit, for inequivalent

    def __bool__(self):
        return self.verdict == "equivalent"


def validate(graph: AigGraph) -> list:
    """Report every structural-invariant violation; empty list iff valid."""
    report = []
    n = graph.num_nodes
    for s, d, m in graph.edges:
        if not (0 <= s < n) or not (0 <= d < n):
            report.append(Violation("dangling-edge", None,
                                    f"edge ({s},{d}) references a missing node"))
    seen = set()
    for s, d, m in graph.edges:
        if (s, d) in seen:
            report.append(Violation("duplicate-edge", None,
                                    f"edge ({s},{d}) stored more than once"))
        seen.add((s, d))
        if m not in (1, 2):
            report.append(Violation("bad-multiplicity", None,
                                    f"edge ({s},{d}) has multiplicity {m}"))
    if any(v.kind == "dangling-edge" for v in report):
        return report

    try:
        graph.topo_order
    except AigError:
        report.append(Violation("cycle", None, "no topological order exists"))

    out_set = set(graph.outputs)
    for i, t in enumerate(graph.types):
        ins = graph.fanins[i]
        din = sum(m for _, m in ins)
        dout = sum(m for _, m in graph.fanouts[i])
        if t is NodeType.MASKED:
            report.append(Violation("masked-node", i,
                                    "MASKED type outside the training path"))
            continue
        if t is NodeType.PI:
            if din != 0:
                report.append(Violation("degree", i, f"PI with in-degree {din}"))
        elif t is NodeType.PO:
            if din != 1:
                report.append(Violation("degree", i, f"PO with in-degree {din}"))
            if dout != 0:
                report.append(Violation("degree", i, f"PO with out-degree {dout}"))
            if i not in out_set:
                report.append(Violation("po-list", i, "PO node missing from outputs"))
        elif t is NodeType.AND:
            ok = (len(ins) == 2 and all(m == 1 for _, m in ins)) or \
                 (len(ins) == 1 and ins[0][1] == 2)
            if not ok:
                report.append(Violation(
                    "degree", i,
                    f"AND with fanin {[(s, m) for s, m in ins]} (needs two unit "
                    f"edges or one multiplicity-2 edge)"))
        elif t is NodeType.NOT:
            if din != 1 or len(ins) != 1 or ins[0][1] != 1:
                report.append(Violation("degree", i, f"NOT with in-degree {din}"))
    for o in graph.outputs:
        if not (0 <= o < n) or graph.types[o] is not NodeType.PO:
            report.append(Violation("po-list", o, "outputs entry is not a PO node"))
    for i, v in graph.pinned.items():
        if graph.types[i] is not NodeType.PI:
            report.append(Violation("pinned", i, "pinned node is not a PI"))
        if v not in (0, 1):
            report.append(Violation("pinned", i, f"pinned value {v}"))
    return report


def _simulate_masks(graph: AigGraph, pi_patterns: dict, width: int) -> list:
    """Evaluate every node over `width` parallel assignments.

    Node values are ints used as bitsets; pi_patterns maps free PI ids to
    their input bit patterns.
    """
    full = (1 << width) - 1
    values = [0] * graph.num_nodes
    for node in graph.topo_order:
        t = graph.types[node]
        if t is NodeType.PI:
            if node in graph.pinned:
                values[node] = full if graph.pinned[node] else 0
            else:
                values[node] = pi_patterns[node]
        elif t is NodeType.AND:
            ins = graph.fanins[node]
            if len(ins) == 1:  # identical-input (buffer) AND
                values[node] = values[ins[0][0]]
            else:
                values[node] = values[ins[0][0]] & values[ins[1][0]]
        elif t is NodeType.NOT:
            values[node] = ~values[graph.fanins[node][0][0]] & full
        elif t is NodeType.PO:
            values[node] = values[graph.fanins[node][0][0]]
        else:
            raise AigError(f"cannot simulate node {node} of type {t.value}")
    return values


def _exhaustive_patterns(pis, pi_order=None):
    order = list(pi_order) if pi_order is not None else list(pis)
    if sorted(order) != sorted(pis):
        raise AigError("pi_order must be a permutation of the graph's PIs")
    n = len(order)
    width = 1 << n
    full = (1 << width) - 1
    patterns = {}
    for bit, node in enumerate(order):
        # PI with bit index b alternates in blocks of 2^b assignments.
        block = 1 << bit
        pat = 0
        for start in range(block, width, 2 * block):
            pat |= ((1 << block) - 1) << start
        patterns[node] = pat & full
    return patterns, width


def truth_table(graph: AigGraph, mode: str = "exhaustive", k: int = 0,
                seed: int = 0, pi_order=None) -> TruthTable:
    """Simulate the graph into a truth table.

    mode="exhaustive" evaluates all 2^num_pis assignments (num_pis <= 16);
    mode="sampled" evaluates k seeded-uniform assignments and attaches them.
    """
    pis = graph.pis
    if mode == "exhaustive":
        if len(pis) > EXHAUSTIVE_PI_LIMIT:
            raise CapacityError(
                f"{len(pis)} inputs exceed the exhaustive limit of "
                f"{EXHAUSTIVE_PI_LIMIT}; use sampled mode")
        patterns, width = _exhaustive_patterns(pis, pi_order)
        values = _simulate_masks(graph, patterns, width)
        return TruthTable(num_inputs=len(pis), num_pos=graph.num_pos,
                          po_masks=tuple(values[o] for o in graph.outputs))
    if mode == "sampled":
        rng = random.Random(seed)
        order = list(pi_order) if pi_order is not None else list(pis)
        assignments = tuple(rng.getrandbits(len(pis)) for _ in range(k))
        patterns = {}
        for bit, node in enumerate(order):
            pat = 0
            for j, a in enumerate(assignments):
                if (a >> bit) & 1:
                    pat |= 1 << j
            patterns[node] = pat
        values = _simulate_masks(graph, patterns, k)
        return TruthTable(num_inputs=len(pis), num_pos=graph.num_pos,
                          po_masks=tuple(values[o] for o in graph.outputs),
                          exhaustive=False, assignments=assignments)
    raise AigError(f"unknown truth-table mode {mode!r}")


def _witness_from_bit(graph, assignment, pi_order=None):
    order = list(pi_order) if pi_order is not None else list(graph.pis)
    return {node: (assignment >> bit) & 1 for bit, node in enumerate(order)}


def equivalent(g1: AigGraph, g2: AigGraph, mode: str = "exhaustive",
               k: int = 10000, seed: int = 0,
               matching: str = "positional") -> EquivVerdict:
    """Decide functional equivalence of two circuits.

    Exhaustive mode is sound and complete up to the PI cap; sampled mode can
    only refute (returns inequivalent-with-witness or unknown). PIs are
    matched positionally by default, or by name with matching="named".
    """
    if g1.num_pis != g2.num_pis or g1.num_pos != g2.num_pos:
        raise AigError(
            f"arity mismatch: {g1.num_pis}/{g1.num_pos} PIs/POs vs "
            f"{g2.num_pis}/{g2.num_pos}")
    order2 = None
    if matching == "named":
        if not g1.pi_names or not g2.pi_names:
            raise AigError("named matching requires PI names on both graphs")
        by_name = {name: pi for pi, name in zip(g2.pis, g2.pi_names)}
        try:
            order2 = [by_name[name] for name in g1.pi_names]
        except KeyError as e:
            raise AigError(f"PI name {e} missing from second graph") from None
    elif matching != "positional":
        raise AigError(f"unknown matching mode {matching!r}")

    if mode == "exhaustive":
        t1 = truth_table(g1, "exhaustive")
        t2 = truth_table(g2, "exhaustive", pi_order=order2)
        for po, (m1, m2) in enumerate(zip(t1.po_masks, t2.po_masks)):
            if m1 != m2:
                diff = m1 ^ m2
                assignment = (diff & -diff).bit_length() - 1
                return EquivVerdict("inequivalent",
                                    _witness_from_bit(g1, assignment))
        return EquivVerdict("equivalent")
    if mode == "sampled":
        t1 = truth_table(g1, "sampled", k=k, seed=seed)
        t2 = truth_table(g2, "sampled", k=k, seed=seed, pi_order=order2)
        for m1, m2 in zip(t1.po_masks, t2.po_masks):
            if m1 != m2:
                diff = m1 ^ m2
                j = (diff & -diff).bit_length() - 1
                return EquivVerdict("inequivalent",
                                    _witness_from_bit(g1, t1.assignments[j]))
        return EquivVerdict("unknown")
    raise AigError(f"unknown equivalence mode {mode!r}")


def insert_buffers(graph: AigGraph, p: float, seed: int) -> AigGraph:
    """Equivalence-preserving augmentation: splice identical-input AND gates.

    Each stored edge whose destination is not a PO is independently selected
    with probability p; a selected edge (u, v) becomes (u, b), (b, v) where b
    is a new AND whose single input u is recorded with multiplicity 2. Used in
    training only, never in evaluation.
    """
    if not 0.0 <= p <= 1.0:
        raise AigError(f"buffer probability {p} outside [0, 1]")
    if any(t is NodeType.MASKED for t in graph.types):
        raise AigError("cannot augment a type-masked graph")
    rng = random.Random(seed)
    types = list(graph.types)
    edges = []
    for s, d, m in graph.edges:
        if graph.types[d] is not NodeType.PO and rng.random() < p:
            b = len(types)
            types.append(NodeType.AND)
            edges.append((s, b, 2))
            edges.append((b, d, m))
        else:
            edges.append((s, d, m))
    return AigGraph(types, edges, graph.outputs, name=graph.name,
                    pinned=graph.pinned, pi_names=graph.pi_names,
                    po_names=graph.po_names)


def extract_cone(graph: AigGraph, root: int) -> Cone:
    """Isolate the transitive fan-in of `root` as a single-output circuit."""
    if not 0 <= root < graph.num_nodes:
        raise AigError(f"unknown node id {root}")
    members = set()
    stack = [root]
    while stack:
        n = stack.pop()
        if n in members:
            continue
        members.add(n)
        stack.extend(s for s, _ in graph.fanins[n])
    ordered = sorted(members)
    remap = {old: new for new, old in enumerate(ordered)}
    types = [graph.types[o] for o in ordered]
    edges = [(remap[s], remap[d], m) for s, d, m in graph.edges
             if s in members and d in members]
    pinned = {remap[o]: v for o, v in graph.pinned.items() if o in members}
    if graph.types[root] is NodeType.PO:
        outputs = [remap[root]]
    else:
        po = len(types)
        types.append(NodeType.PO)
        edges.append((remap[root], po, 1))
        outputs = [po]
    extracted = AigGraph(types, edges, outputs,
                         name=f"{graph.name}.cone{root}" if graph.name else f"cone{root}",
                         pinned=pinned)
    return Cone(root=root, members=frozenset(members), extracted=extracted,
                node_map=remap)


def random_aig(num_pi: int, num_gates: int, seed: int,
               and_fraction: float = 0.7) -> AigGraph:
    """Seeded random valid AIG: gates draw predecessors from earlier nodes,
    then every unreferenced sink is promoted to a PO.

    Generated graphs are writer-canonical (no NOT fed by a NOT and at most
    one NOT per driver) so they survive AIGER round-trips unchanged.
    """
    if num_pi < 1:
        raise AigError("need at least one primary input")
    if num_gates < 0:
        raise AigError("gate count must be nonnegative")
    rng = random.Random(seed)
    types = [NodeType.PI] * num_pi
    edges = []
    negated = set()  # nodes that already drive a NOT
    for _ in range(num_gates):
        nid = len(types)
        not_candidates = [i for i in range(nid)
                          if types[i] is not NodeType.NOT and i not in negated]
        if rng.random() < and_fraction or not not_candidates:
            a = rng.randrange(nid)
            b = rng.randrange(nid)
            types.append(NodeType.AND)
            if a == b:
                edges.append((a, nid, 2))
            else:
                edges.append((a, nid, 1))
                edges.append((b, nid, 1))
        else:
            src = rng.choice(not_candidates)
            types.append(NodeType.NOT)
            edges.append((src, nid, 1))
            negated.add(src)
    referenced = {s for s, _, _ in edges}
    sinks = [i for i in range(len(types)) if i not in referenced]
    outputs = []
    for s in sinks:
        po = len(types)
        types.append(NodeType.PO)
        edges.append((s, po, 1))
        outputs.append(po)
    return AigGraph(types, edges, outputs, name=f"rand-{num_pi}-{num_gates}-{seed}")


def degrees(graph: AigGraph):
    """Multiplicity-weighted (in_degrees, out_degrees) as integer lists."""
    din = [0] * graph.num_nodes
    dout = [0] * graph.num_nodes
    for s, d, m in graph.edges:
        din[d] += m
        dout[s] += m
    return din, dout


def ceil_fraction(ratio: float, n: int) -> int:
    """ceil(ratio * n) guarded against float slop on exact multiples."""
    return max(0, math.ceil(ratio * n - 1e-9))
