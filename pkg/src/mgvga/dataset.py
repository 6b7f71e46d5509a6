"""Dataset factory: optimization-sequence sampling, synthesis-tool drivers,
QoR label harvesting, Verilog/AIG pairing, and a toy fallback rewriter that
works without any external tool.

Everything written to disk is content-deterministic: rebuilding with the same
inputs yields byte-identical manifests and labels (no timestamps).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import random
import re
import subprocess
from dataclasses import dataclass, field

from .aig import AigGraph, AigError, NodeType, degrees, random_aig
from .aiger import parse_aiger, write_aiger
from .training import derive_seed

TRANSFORMS = ("rewrite", "resub", "refactor", "rewrite -z", "resub -z",
              "refactor -z", "balance")
DEFAULT_SEQUENCE_LENGTH = 20


class ToolError(Exception):
    pass


class ToolMissingError(ToolError):
    pass


class ToolFailedError(ToolError):
    def __init__(self, message, output=""):
        super().__init__(message)
        self.output = output


class ToolTimeoutError(ToolError):
    pass


@dataclass
class ToolConfig:
    abc_path: str = "abc"
    yosys_path: str = "yosys"
    timeout: float = 300.0
    run_dir: str = "."  # generated scripts are written here and retained


def sample_sequences(n: int, length: int = DEFAULT_SEQUENCE_LENGTH,
                     seed: int = 0) -> list:
    """n seeded i.i.d. sequences over the transform vocabulary."""
    if n < 1:
        raise ValueError("need at least one sequence")
    rng = random.Random(seed)
    return [tuple(rng.choice(TRANSFORMS) for _ in range(length))
            for _ in range(n)]


@dataclass
class QorRecord:
    design: str
    sequence_id: int
    gate_count: int  # AND nodes, the default label
    node_count: int = 0
    tool: str = "toy"

    def __post_init__(self):
        if self.gate_count < 0:
            raise ValueError("gate count must be nonnegative")


# ---------------------------------------------------------------------------
# Toy rewriter: local equivalence-preserving transforms.

def _resolve(subst, node):
    while node in subst:
        node = subst[node]
    return node


def _rebuild(graph: AigGraph, subst: dict) -> AigGraph:
    """Apply a substitution map, then sweep gates with no path to a PO.
    PIs and POs always survive; truth tables are unchanged by construction."""
    resolved_fanins = {}
    for i, t in enumerate(graph.types):
        if i in subst:
            continue
        resolved_fanins[i] = [(_resolve(subst, s), m) for s, m in graph.fanins[i]]
    # Reachability to any PO over the substituted structure.
    consumers = {}
    for i, fins in resolved_fanins.items():
        for s, _ in fins:
            consumers.setdefault(s, []).append(i)
    live = set()
    stack = [_resolve(subst, o) for o in graph.outputs]
    stack += [o for o in graph.outputs]
    while stack:
        n = stack.pop()
        if n in live:
            continue
        live.add(n)
        stack.extend(s for s, _ in resolved_fanins.get(n, ()))
    keep = [i for i in range(graph.num_nodes)
            if i not in subst
            and (i in live or graph.types[i] in (NodeType.PI, NodeType.PO))]
    remap = {old: new for new, old in enumerate(keep)}
    types = [graph.types[o] for o in keep]
    edge_mult = {}
    for old in keep:
        for s, m in resolved_fanins[old]:
            key = (remap[s], remap[old])
            edge_mult[key] = edge_mult.get(key, 0) + m
    edges = [(s, d, m) for (s, d), m in sorted(edge_mult.items())]
    outputs = [remap[o] for o in graph.outputs]
    pinned = {remap[o]: v for o, v in graph.pinned.items() if o in remap}
    return AigGraph(types, edges, outputs, name=graph.name, pinned=pinned,
                    pi_names=graph.pi_names, po_names=graph.po_names)


def _collapse_pass(graph: AigGraph) -> dict:
    """Identical-input AND collapse plus double-negation elimination."""
    subst = {}
    for node in graph.topo_order:
        t = graph.types[node]
        fins = [(_resolve(subst, s), m) for s, m in graph.fanins[node]]
        if t is NodeType.AND:
            if len(fins) == 1 and fins[0][1] == 2:
                subst[node] = fins[0][0]
            elif len(fins) == 2 and fins[0][0] == fins[1][0]:
                subst[node] = fins[0][0]
        elif t is NodeType.NOT:
            src = fins[0][0]
            if graph.types[src] is NodeType.NOT and src not in subst:
                inner = _resolve(subst, graph.fanins[src][0][0])
                subst[node] = inner
    return subst


def _dedup_pass(graph: AigGraph, kind: NodeType) -> dict:
    """Merge structurally identical gates of one type (same fanin multiset)."""
    subst = _collapse_pass(graph)
    seen = {}
    for node in graph.topo_order:
        if graph.types[node] is not kind or node in subst:
            continue
        fins = tuple(sorted((_resolve(subst, s), m) for s, m in graph.fanins[node]))
        if fins in seen:
            subst[node] = seen[fins]
        else:
            seen[fins] = node
    return subst


def _balance(graph: AigGraph, seed: int) -> AigGraph:
    """Re-associate maximal single-fanout AND trees into balanced trees.
    Gate count is preserved; leaf order is shuffled by the seed (AND is
    commutative and associative, so the function is unchanged)."""
    rng = random.Random(seed)
    _, dout = degrees(graph)

    def is_internal(node):
        return graph.types[node] is NodeType.AND and dout[node] == 1

    # Visit consumers before producers so every maximal tree claims its
    # internal nodes before they are considered as roots themselves.
    absorbed = set()
    tree_of = {}  # root -> (leaf list with multiplicity, claimed internals)
    for node in reversed(graph.topo_order):
        if graph.types[node] is not NodeType.AND or node in absorbed:
            continue
        leaves, internals = [], []
        stack = [(s, m) for s, m in graph.fanins[node]]
        while stack:
            s, m = stack.pop()
            if is_internal(s):
                absorbed.add(s)
                internals.append(s)
                for _ in range(m):
                    stack.extend(graph.fanins[s])
            else:
                leaves.extend([s] * m)
        if len(leaves) > 2:
            tree_of[node] = (leaves, sorted(internals))
        else:
            absorbed.difference_update(internals)

    if not tree_of:
        return _rebuild(graph, {})

    rebuilt = {r for r in tree_of} | \
        {i for _, ints in tree_of.values() for i in ints}
    keep_edges = [(s, d, m) for s, d, m in graph.edges if d not in rebuilt]
    new_edges = []
    for root in sorted(tree_of):
        leaves, internals = tree_of[root]
        leaves = list(leaves)
        rng.shuffle(leaves)
        # Pairwise reduction: exactly len(leaves) - 1 gates, ids recycled from
        # the claimed internal nodes with the original root on top.
        fresh_iter = iter(internals)
        level = leaves
        while len(level) > 1:
            nxt = []
            for i in range(0, len(level) - 1, 2):
                gate = root if len(level) == 2 else next(fresh_iter)
                a, b = level[i], level[i + 1]
                if a == b:
                    new_edges.append((a, gate, 2))
                else:
                    new_edges.append((a, gate, 1))
                    new_edges.append((b, gate, 1))
                nxt.append(gate)
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
    merged = AigGraph(graph.types, keep_edges + new_edges, graph.outputs,
                      name=graph.name, pinned=graph.pinned,
                      pi_names=graph.pi_names, po_names=graph.po_names)
    return _rebuild(merged, {})


def toy_rewrite(graph: AigGraph, transform: str, seed: int = 0) -> AigGraph:
    """Offline stand-in for one synthesis transform. Truth table preserved;
    gate count never increases (balance keeps it constant)."""
    base = transform.replace(" -z", "")
    if transform not in TRANSFORMS and base not in ("rewrite", "resub",
                                                    "refactor", "balance"):
        raise ValueError(f"unknown transform {transform!r}")
    if base == "rewrite":
        return _rebuild(graph, _collapse_pass(graph))
    if base == "resub":
        return _rebuild(graph, _dedup_pass(graph, NodeType.AND))
    if base == "refactor":
        return _rebuild(graph, _dedup_pass(graph, NodeType.NOT))
    return _balance(graph, seed)


def apply_sequence(graph: AigGraph, sequence, seed: int = 0):
    """Run a toy-rewrite sequence; yields the graph after every step."""
    steps = []
    g = graph
    for i, transform in enumerate(sequence):
        g = toy_rewrite(g, transform, derive_seed(seed, i, transform))
        steps.append(g)
    return steps


# ---------------------------------------------------------------------------
# External tool drivers.

_AND_RE = re.compile(r"\band\s*=\s*(\d+)")


def run_external_synthesis(design_path: str, sequence, config: ToolConfig):
    """Drive ABC with a generated script applying the sequence, then parse the
    optimized AIG and its gate count. The script is retained for audit."""
    os.makedirs(config.run_dir, exist_ok=True)
    tag = hashlib.sha256(
        (design_path + "|".join(sequence)).encode()).hexdigest()[:12]
    out_path = os.path.join(config.run_dir, f"opt_{tag}.aig")
    script_path = os.path.join(config.run_dir, f"abc_{tag}.script")
    commands = [f"read_aiger {design_path}", "strash"]
    commands += list(sequence)
    commands += [f"write_aiger {out_path}", "print_stats"]
    with open(script_path, "w") as fh:
        fh.write("\n".join(commands) + "\n")
    try:
        proc = subprocess.run([config.abc_path, "-f", script_path],
                              capture_output=True, text=True,
                              timeout=config.timeout)
    except FileNotFoundError as e:
        raise ToolMissingError(f"synthesis tool not found: {config.abc_path}") from e
    except subprocess.TimeoutExpired as e:
        raise ToolTimeoutError(
            f"synthesis timed out after {config.timeout}s on {design_path}") from e
    output = proc.stdout + proc.stderr
    if proc.returncode != 0:
        raise ToolFailedError(
            f"synthesis exited with {proc.returncode} on {design_path}", output)
    match = _AND_RE.search(output)
    if match is None or not os.path.exists(out_path):
        raise ToolFailedError(
            f"could not parse synthesis output for {design_path}", output)
    with open(out_path, "rb") as fh:
        graph = parse_aiger(fh.read())
    return graph, int(match.group(1))


def synthesize_verilog(verilog_path: str, aig_path: str, config: ToolConfig):
    """Front-end driver: elaborate one Verilog file into an AIGER file."""
    os.makedirs(config.run_dir, exist_ok=True)
    script = (f"read_verilog {verilog_path}; hierarchy -auto-top; flatten; "
              f"synth -run coarse; techmap; aigmap; "
              f"write_aiger -ascii {aig_path}")
    try:
        proc = subprocess.run([config.yosys_path, "-p", script],
                              capture_output=True, text=True,
                              timeout=config.timeout)
    except FileNotFoundError as e:
        raise ToolMissingError(f"front-end tool not found: {config.yosys_path}") from e
    except subprocess.TimeoutExpired as e:
        raise ToolTimeoutError(f"front-end timed out on {verilog_path}") from e
    if proc.returncode != 0 or not os.path.exists(aig_path):
        raise ToolFailedError(f"front-end failed on {verilog_path}",
                              proc.stdout + proc.stderr)
    with open(aig_path, "rb") as fh:
        return parse_aiger(fh.read())


# ---------------------------------------------------------------------------
# Verilog emission (structural) and synthetic pair generation.

def verilog_of_aig(graph: AigGraph, module_name: str = "top") -> str:
    """Render a graph as a structural Verilog module, one assign per gate."""
    if any(t is NodeType.MASKED for t in graph.types):
        raise AigError("cannot render a type-masked graph")
    pi_name = {}
    for k, pi in enumerate(graph.pis):
        pi_name[pi] = graph.pi_names[k] if graph.pi_names and \
            graph.pi_names[k] else f"a{k}"
    po_name = {}
    for k, po in enumerate(graph.outputs):
        po_name[po] = graph.po_names[k] if graph.po_names and \
            graph.po_names[k] else f"y{k}"

    def ref(node):
        if node in pi_name:
            return pi_name[node]
        if node in graph.pinned:
            return f"1'b{graph.pinned[node]}"
        return f"n{node}"

    lines = []
    ports = [pi_name[p] for p in graph.pis] + [po_name[o] for o in graph.outputs]
    lines.append(f"module {module_name} ({', '.join(ports)});")
    if graph.pis:
        lines.append("  input " + ", ".join(pi_name[p] for p in graph.pis) + ";")
    if graph.outputs:
        lines.append("  output " + ", ".join(po_name[o] for o in graph.outputs) + ";")
    wires = [f"n{i}" for i in graph.topo_order
             if graph.types[i] in (NodeType.AND, NodeType.NOT)]
    if wires:
        lines.append("  wire " + ", ".join(wires) + ";")
    for node in graph.topo_order:
        t = graph.types[node]
        if t is NodeType.AND:
            fins = graph.fanins[node]
            if len(fins) == 1:
                a = b = ref(fins[0][0])
            else:
                a, b = (ref(s) for s, _ in fins)
            lines.append(f"  assign n{node} = {a} & {b};")
        elif t is NodeType.NOT:
            lines.append(f"  assign n{node} = ~{ref(graph.fanins[node][0][0])};")
    for po in graph.outputs:
        src, _ = graph.fanins[po][0]
        lines.append(f"  assign {po_name[po]} = {ref(src)};")
    lines.append("endmodule")
    return "\n".join(lines) + "\n"


def synthetic_pairs(n: int, seed: int, min_pi=3, max_pi=10, min_gates=16,
                    max_gates=96):
    """Generate (verilog source, graph) pairs that are equivalent by
    construction; the offline substitute for a front-end synthesized corpus."""
    rng = random.Random(seed)
    pairs = []
    for i in range(n):
        g = random_aig(rng.randint(min_pi, max_pi),
                       rng.randint(min_gates, max_gates),
                       seed=derive_seed(seed, i, "pairgraph"))
        source = verilog_of_aig(g, module_name=f"pair{i}")
        pairs.append((source, g))
    return pairs


# ---------------------------------------------------------------------------
# Manifest assembly.

@dataclass
class DatasetManifest:
    root: str
    designs: list = field(default_factory=list)
    sequences: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def design_paths(self, split=None):
        return [d["path"] for d in self.designs
                if split is None or d["split"] == split]

    def check_integrity(self):
        problems = []
        for d in self.designs:
            if not os.path.exists(os.path.join(self.root, d["path"])):
                problems.append(f"missing design file {d['path']}")
        for p in self.pairs:
            for key in ("verilog_path", "aig_path"):
                if p.get(key) and not os.path.exists(os.path.join(self.root, p[key])):
                    problems.append(f"missing pair file {p[key]}")
        train = {d["name"] for d in self.designs if d["split"] == "train"}
        eval_ = {d["name"] for d in self.designs if d["split"] == "eval"}
        overlap = train & eval_
        if overlap:
            problems.append(f"designs in both splits: {sorted(overlap)}")
        return problems


def _sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(manifest: DatasetManifest, path: str):
    rows = []
    for kind, items in (("design", manifest.designs),
                        ("sequence", manifest.sequences),
                        ("label", manifest.labels),
                        ("pair", manifest.pairs),
                        ("failure", manifest.failures)):
        for item in items:
            rows.append({"kind": kind, **item})
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path: str) -> DatasetManifest:
    manifest = DatasetManifest(root=os.path.dirname(os.path.abspath(path)))
    bucket = {"design": manifest.designs, "sequence": manifest.sequences,
              "label": manifest.labels, "pair": manifest.pairs,
              "failure": manifest.failures}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            kind = row.pop("kind")
            bucket[kind].append(row)
    return manifest


def write_labels_csv(manifest: DatasetManifest, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "sequence_id", "gate_count"])
        for row in manifest.labels:
            writer.writerow([row["design"], row["sequence_id"],
                             row["gate_count"]])


def build_dataset(designs, sequences, out_dir: str,
                  tool_config: ToolConfig | None = None,
                  engine: str = "toy", store_intermediate: bool = True,
                  eval_designs=(), seed: int = 0) -> DatasetManifest:
    """Apply every sequence to every design, storing per-step AIGs (when
    enabled) and final gate-count labels. designs is a list of (name, path)
    or (name, AigGraph). Per-row failures are recorded, not fatal."""
    if engine not in ("toy", "abc"):
        raise ValueError(f"unknown engine {engine!r}")
    os.makedirs(out_dir, exist_ok=True)
    aig_dir = os.path.join(out_dir, "aigs")
    os.makedirs(aig_dir, exist_ok=True)
    manifest = DatasetManifest(root=out_dir)
    eval_set = set(eval_designs)

    loaded = []
    for name, src in designs:
        if isinstance(src, AigGraph):
            graph = src
            path = os.path.join(aig_dir, f"{name}.aag")
            with open(path, "wb") as fh:
                fh.write(write_aiger(graph, "ascii"))
        else:
            with open(src, "rb") as fh:
                graph = parse_aiger(fh.read())
            path = src if os.path.isabs(src) else os.path.abspath(src)
        rel = os.path.relpath(path, out_dir)
        manifest.designs.append({
            "name": name, "path": rel,
            "split": "eval" if name in eval_set else "train",
            "sha256": _sha256_file(path)})
        loaded.append((name, graph, path))

    for sid, seq in enumerate(sequences):
        manifest.sequences.append({"id": sid, "transforms": list(seq)})

    for name, graph, design_path in loaded:
        for sid, seq in enumerate(sequences):
            try:
                if engine == "toy":
                    steps = apply_sequence(graph, seq,
                                           seed=derive_seed(seed, name, sid))
                    final = steps[-1] if steps else graph
                    gate_count = final.num_ands
                    if store_intermediate:
                        for t, g in enumerate(steps):
                            p = os.path.join(
                                aig_dir, f"{name}__s{sid:04d}__t{t:02d}.aag")
                            with open(p, "wb") as fh:
                                fh.write(write_aiger(g, "ascii"))
                else:
                    final, gate_count = run_external_synthesis(
                        design_path, seq, tool_config or ToolConfig())
                    p = os.path.join(aig_dir, f"{name}__s{sid:04d}__final.aag")
                    with open(p, "wb") as fh:
                        fh.write(write_aiger(final, "ascii"))
                manifest.labels.append({
                    "design": name, "sequence_id": sid,
                    "gate_count": gate_count,
                    "node_count": final.num_nodes, "tool": engine})
            except (ToolError, AigError, OSError) as e:
                manifest.failures.append({
                    "design": name, "sequence_id": sid, "error": str(e)})

    write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    write_labels_csv(manifest, os.path.join(out_dir, "labels.csv"))
    return manifest


def pair_verilog_aig(corpus_dir: str, out_dir: str,
                     tool_config: ToolConfig | None = None) -> list:
    """Synthesize every .v file in a corpus into an AIG pair row. Files that
    fail elaboration (or a missing tool) are flagged, not fatal."""
    config = tool_config or ToolConfig()
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for fname in sorted(os.listdir(corpus_dir)):
        if not fname.endswith(".v"):
            continue
        vpath = os.path.join(corpus_dir, fname)
        apath = os.path.join(out_dir, fname[:-2] + ".aag")
        row = {"verilog_path": os.path.relpath(vpath, out_dir),
               "aig_path": os.path.relpath(apath, out_dir),
               "verilog_sha256": _sha256_file(vpath), "ok": True, "error": ""}
        try:
            synthesize_verilog(vpath, apath, config)
            row["aig_sha256"] = _sha256_file(apath)
        except ToolError as e:
            row.update(ok=False, error=str(e), aig_path="", aig_sha256="")
        rows.append(row)
    return rows
