"""AIGER 1.9 reader/writer for the combinational subset (no latches).

Complemented literals become explicit NOT nodes on parse (one NOT per
distinct complemented literal in use); the writer folds them back into
complement bits, which collapses double negations. Literal 0/1 uses are
parsed as a degenerate input pinned to constant 0 (literal 1 is its
negation). Files written here are canonically renumbered: inputs first,
then AND/NOT nodes in a stable topological order.
"""

from __future__ import annotations

import heapq

from .aig import AigGraph, AigError, NodeType


class AigerParseError(AigError):
    """Malformed AIGER input; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def line(self) -> str:
        if self.pos >= len(self.data):
            raise AigerParseError("unexpected end of file", self.pos)
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            end = len(self.data)
        raw = self.data[self.pos:end]
        self.pos = end + 1
        return raw.decode("ascii", errors="replace")

    def at_eof(self) -> bool:
        return self.pos >= len(self.data)

    def varint(self) -> int:
        value, shift = 0, 0
        while True:
            if self.pos >= len(self.data):
                raise AigerParseError("truncated binary gate section", self.pos)
            byte = self.data[self.pos]
            self.pos += 1
            value |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return value
            shift += 7


def _parse_uint(token: str, offset: int, what: str) -> int:
    if not token.isdigit():
        raise AigerParseError(f"{what}: expected unsigned integer, got {token!r}",
                              offset)
    return int(token)


def parse_aiger(data: bytes, format: str | None = None) -> AigGraph:
    """Parse ascii (.aag) or binary (.aig) AIGER bytes into an AigGraph.

    format may be "ascii", "binary", or None to infer from the magic word.
    """
    rd = _Reader(data)
    header_offset = rd.pos
    header = rd.line().split()
    if not header or header[0] not in ("aag", "aig"):
        raise AigerParseError("missing aag/aig magic word", header_offset)
    magic = "ascii" if header[0] == "aag" else "binary"
    if format is not None and format != magic:
        raise AigerParseError(f"requested {format} format but file is {magic}",
                              header_offset)
    if not 6 <= len(header) <= 10:
        raise AigerParseError("header needs M I L O A (optionally B C J F)",
                              header_offset)
    fields = [_parse_uint(t, header_offset, "header field") for t in header[1:]]
    maxvar, num_in, num_latch, num_out, num_and = fields[:5]
    if num_latch:
        raise AigerParseError("latches are not supported (combinational only)",
                              header_offset)
    if any(fields[5:]):
        raise AigerParseError("bad/justice/constraint sections are not supported",
                              header_offset)
    if maxvar < num_in + num_and:
        raise AigerParseError(
            f"maxvar {maxvar} smaller than inputs+ands {num_in + num_and}",
            header_offset)

    input_vars = []
    if magic == "ascii":
        for k in range(num_in):
            off = rd.pos
            lit = _parse_uint(rd.line().strip(), off, f"input {k}")
            if lit == 0 or lit & 1 or lit > 2 * maxvar:
                raise AigerParseError(f"input {k}: invalid literal {lit}", off)
            input_vars.append(lit >> 1)
        if len(set(input_vars)) != num_in:
            raise AigerParseError("duplicate input variable", header_offset)
    else:
        input_vars = list(range(1, num_in + 1))

    outputs = []
    for k in range(num_out):
        off = rd.pos
        lit = _parse_uint(rd.line().strip(), off, f"output {k}")
        if lit > 2 * maxvar + 1:
            raise AigerParseError(f"output {k}: literal {lit} out of range", off)
        outputs.append((lit, off))

    and_defs = []  # (lhs_var, rhs0, rhs1, offset)
    if magic == "ascii":
        for k in range(num_and):
            off = rd.pos
            parts = rd.line().split()
            if len(parts) != 3:
                raise AigerParseError(f"and gate {k}: expected 3 literals", off)
            lhs, rhs0, rhs1 = (_parse_uint(p, off, f"and gate {k}") for p in parts)
            if lhs == 0 or lhs & 1 or lhs > 2 * maxvar:
                raise AigerParseError(f"and gate {k}: invalid lhs {lhs}", off)
            if max(rhs0, rhs1) > 2 * maxvar + 1:
                raise AigerParseError(f"and gate {k}: rhs literal out of range", off)
            and_defs.append((lhs >> 1, rhs0, rhs1, off))
    else:
        for k in range(num_and):
            off = rd.pos
            lhs = 2 * (num_in + k + 1)
            delta0 = rd.varint()
            delta1 = rd.varint()
            rhs0 = lhs - delta0
            rhs1 = rhs0 - delta1
            if delta0 == 0 or rhs1 < 0:
                raise AigerParseError(f"and gate {k}: invalid deltas", off)
            and_defs.append((lhs >> 1, rhs0, rhs1, off))

    input_var_set = set(input_vars)
    def_by_var = {}
    for lhs_var, rhs0, rhs1, off in and_defs:
        if lhs_var in input_var_set:
            raise AigerParseError(f"variable {lhs_var} defined as both input and gate",
                                  off)
        if lhs_var in def_by_var:
            raise AigerParseError(f"variable {lhs_var} defined twice", off)
        def_by_var[lhs_var] = (rhs0, rhs1, off)

    defined = input_var_set | set(def_by_var) | {0}

    def check_defined(lit: int, off: int):
        if (lit >> 1) not in defined:
            raise AigerParseError(f"dangling literal {lit}", off)

    for lhs_var, (rhs0, rhs1, off) in def_by_var.items():
        check_defined(rhs0, off)
        check_defined(rhs1, off)
    for lit, off in outputs:
        check_defined(lit, off)

    # Stable topological order over gate definitions (ascii files may list
    # gates in any order; writer output is already sorted and stays put).
    order = _sort_and_defs(and_defs, input_var_set)

    types = [NodeType.PI] * num_in
    edges = []
    pinned = {}
    node_of_var = {v: i for i, v in enumerate(input_vars)}
    node_of_not = {}  # odd literal -> NOT node id

    def node_of_literal(lit: int) -> int:
        var = lit >> 1
        if var == 0 and 0 not in node_of_var:
            const = len(types)
            types.append(NodeType.PI)
            pinned[const] = 0
            node_of_var[0] = const
        if lit & 1:
            if lit not in node_of_not:
                base = node_of_var[var]
                inv = len(types)
                types.append(NodeType.NOT)
                edges.append((base, inv, 1))
                node_of_not[lit] = inv
            return node_of_not[lit]
        return node_of_var[var]

    for idx in order:
        lhs_var, rhs0, rhs1, _ = and_defs[idx]
        a = node_of_literal(rhs0)
        b = node_of_literal(rhs1)
        gate = len(types)
        types.append(NodeType.AND)
        if a == b:
            edges.append((a, gate, 2))
        else:
            edges.append((a, gate, 1))
            edges.append((b, gate, 1))
        node_of_var[lhs_var] = gate

    po_ids = []
    for lit, _ in outputs:
        driver = node_of_literal(lit)
        po = len(types)
        types.append(NodeType.PO)
        edges.append((driver, po, 1))
        po_ids.append(po)

    pi_names, po_names = _parse_symbols(rd, num_in, num_out)
    return AigGraph(types, edges, po_ids, pinned=pinned,
                    pi_names=pi_names, po_names=po_names)


def _sort_and_defs(and_defs, input_var_set):
    """Kahn's algorithm over gate definitions, stable in file order."""
    index_of_var = {d[0]: i for i, d in enumerate(and_defs)}
    dependents = [[] for _ in and_defs]
    missing = [0] * len(and_defs)
    for i, (_, rhs0, rhs1, _) in enumerate(and_defs):
        for rhs in {rhs0 >> 1, rhs1 >> 1}:
            j = index_of_var.get(rhs)
            if j is not None:
                dependents[j].append(i)
                missing[i] += 1
    ready = [i for i in range(len(and_defs)) if missing[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in dependents[i]:
            missing[j] -= 1
            if missing[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != len(and_defs):
        bad = next(i for i in range(len(and_defs)) if missing[i] > 0)
        raise AigerParseError("cyclic gate definitions", and_defs[bad][3])
    return order


def _parse_symbols(rd: _Reader, num_in: int, num_out: int):
    pi_names = [None] * num_in
    po_names = [None] * num_out
    while not rd.at_eof():
        off = rd.pos
        line = rd.line()
        if not line.strip():
            continue
        if line[0] == "c":
            break  # comment section runs to EOF
        kind, rest = line[0], line[1:].split(" ", 1)
        if kind not in "ilo" or not rest[0].isdigit():
            raise AigerParseError(f"malformed symbol line {line!r}", off)
        pos = int(rest[0])
        name = rest[1] if len(rest) > 1 else ""
        if kind == "i" and pos < num_in:
            pi_names[pos] = name
        elif kind == "o" and pos < num_out:
            po_names[pos] = name
        else:
            raise AigerParseError(f"symbol {line!r} out of range", off)
    has_pi = any(n is not None for n in pi_names)
    has_po = any(n is not None for n in po_names)
    return (tuple(pi_names) if has_pi else None,
            tuple(po_names) if has_po else None)


def _canonical_topo(graph: AigGraph):
    """Topological order choosing the smallest node id first (stable for
    graphs whose ids are already topologically sorted, e.g. parser output)."""
    indeg = [0] * graph.num_nodes
    for _, d, _ in graph.edges:
        indeg[d] += 1
    ready = [i for i in range(graph.num_nodes) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for d, _ in graph.fanouts[n]:
            indeg[d] -= 1
            if indeg[d] == 0:
                heapq.heappush(ready, d)
    if len(order) != graph.num_nodes:
        raise AigError("graph contains a cycle")
    return order


def write_aiger(graph: AigGraph, format: str = "ascii") -> bytes:
    """Serialize a valid graph, folding NOT nodes into complement bits."""
    if format not in ("ascii", "binary"):
        raise AigError(f"unknown format {format!r}")
    if any(t is NodeType.MASKED for t in graph.types):
        raise AigError("cannot serialize a type-masked graph")

    order = _canonical_topo(graph)
    num_in = graph.num_pis
    num_and = graph.num_ands
    maxvar = num_in + num_and

    lit = {}
    next_pi_var = 1
    next_and_var = num_in + 1
    gate_rows = []  # (lhs, rhs0, rhs1) in emission order
    for node in order:
        t = graph.types[node]
        if t is NodeType.PI:
            if node in graph.pinned:
                lit[node] = graph.pinned[node]
            else:
                lit[node] = 2 * next_pi_var
                next_pi_var += 1
        elif t is NodeType.NOT:
            (src, m), = graph.fanins[node]
            lit[node] = lit[src] ^ 1
        elif t is NodeType.AND:
            ins = graph.fanins[node]
            if len(ins) == 1 and ins[0][1] == 2:
                operands = [lit[ins[0][0]]] * 2
            elif len(ins) == 2 and all(m == 1 for _, m in ins):
                operands = [lit[s] for s, _ in ins]
            else:
                raise AigError(f"AND node {node} has invalid fanin")
            operands.sort(reverse=True)
            lhs = 2 * next_and_var
            next_and_var += 1
            lit[node] = lhs
            gate_rows.append((lhs, operands[0], operands[1]))
        elif t is NodeType.PO:
            (src, _), = graph.fanins[node]
            lit[node] = lit[src]

    out_lits = [lit[o] for o in graph.outputs]
    num_out = len(out_lits)

    chunks = []
    if format == "ascii":
        chunks.append(f"aag {maxvar} {num_in} 0 {num_out} {num_and}\n")
        chunks.extend(f"{2 * (v + 1)}\n" for v in range(num_in))
        chunks.extend(f"{ol}\n" for ol in out_lits)
        chunks.extend(f"{lhs} {r0} {r1}\n" for lhs, r0, r1 in gate_rows)
        body = "".join(chunks).encode("ascii")
    else:
        head = [f"aig {maxvar} {num_in} 0 {num_out} {num_and}\n"]
        head.extend(f"{ol}\n" for ol in out_lits)
        body = "".join(head).encode("ascii")
        gate_bytes = bytearray()
        for lhs, r0, r1 in gate_rows:
            for delta in (lhs - r0, r0 - r1):
                while delta >= 0x80:
                    gate_bytes.append((delta & 0x7F) | 0x80)
                    delta >>= 7
                gate_bytes.append(delta)
        body += bytes(gate_bytes)

    symbols = []
    if graph.pi_names:
        symbols.extend(f"i{k} {n}\n" for k, n in enumerate(graph.pi_names)
                       if n is not None)
    if graph.po_names:
        symbols.extend(f"o{k} {n}\n" for k, n in enumerate(graph.po_names)
                       if n is not None)
    return body + "".join(symbols).encode("ascii")
