"""Bond-graph data model, JSON parsing, and structural validation.

A bond graph is a directed multigraph whose vertices are typed elements.
Exterior elements (C storages, R resistors, Sf flow sources, Se effort
sources) sit on the boundary; interior elements (0-junctions, 1-junctions,
transformers TF, gyrators GY) form the power-routing junction structure.
Every bond carries an N-dimensional flow/effort pair.

Validated structural rules, each with a distinct error code:

- the graph is weakly connected ("not-connected");
- every exterior element has exactly one bond, attached to an interior
  element ("exterior-degree");
- bonds point into C and R elements and out of Sf and Se ("orientation");
- every TF and GY has exactly one incoming and one outgoing bond
  ("tfgy-degree");
- modulation expressions may reference only storage states and declared
  parameters ("modulation-symbol"), R matrices must be symmetric
  ("r-symmetry"), and TF/GY matrices must have generic full rank
  ("tfgy-rank");
-每 C element's Hamiltonian summand may use only that element's own states
  ("hamiltonian-coupling").

State symbols are generated per C element: element "C1" in a 2-dimensional
graph owns x_C1_1 and x_C1_2, in declaration order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .expr import (
    Expr, ExprError, SymbolTable, free_symbols, is_zero, parse_expr,
    to_string,
)
from .symmat import SymMatrix, from_rows, generic_rank, sub, transpose

KIND_C, KIND_R, KIND_SF, KIND_SE = "C", "R", "Sf", "Se"
KIND_ZERO, KIND_ONE, KIND_TF, KIND_GY = "0", "1", "TF", "GY"

EXTERIOR_KINDS = (KIND_C, KIND_R, KIND_SF, KIND_SE)
INTERIOR_KINDS = (KIND_ZERO, KIND_ONE, KIND_TF, KIND_GY)
ALL_KINDS = EXTERIOR_KINDS + INTERIOR_KINDS

_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class BondGraphError(Exception):
    """Validation failure; `code` identifies the violated rule, `ids` the
    offending elements or bonds."""

    def __init__(self, code: str, message: str, ids: tuple = ()):
        super().__init__(f"[{code}] {message}")
        self.code = code
        self.ids = ids


@dataclass(frozen=True)
class Element:
    id: str
    kind: str
    hamiltonian: Expr | None = None     # C only: summand over own states
    matrix: SymMatrix | None = None     # R: D_i; TF: U_i; GY: V_i
    states: tuple[str, ...] = ()        # C only: generated state symbols


@dataclass(frozen=True)
class Bond:
    id: int
    tail: str
    head: str


@dataclass(frozen=True)
class BondGraph:
    dimension: int
    elements: tuple[Element, ...]
    bonds: tuple[Bond, ...]
    table: SymbolTable

    def element(self, eid: str) -> Element:
        for el in self.elements:
            if el.id == eid:
                return el
        raise KeyError(eid)

    def elements_of_kind(self, *kinds: str) -> tuple[Element, ...]:
        return tuple(el for el in self.elements if el.kind in kinds)

    def exterior_elements(self) -> tuple[Element, ...]:
        return self.elements_of_kind(*EXTERIOR_KINDS)

    def interior_elements(self) -> tuple[Element, ...]:
        return self.elements_of_kind(*INTERIOR_KINDS)

    def bonds_at(self, eid: str) -> tuple[Bond, ...]:
        return tuple(b for b in self.bonds if eid in (b.tail, b.head))

    def in_bonds(self, eid: str) -> tuple[Bond, ...]:
        return tuple(sorted((b for b in self.bonds if b.head == eid),
                            key=lambda b: b.id))

    def out_bonds(self, eid: str) -> tuple[Bond, ...]:
        return tuple(sorted((b for b in self.bonds if b.tail == eid),
                            key=lambda b: b.id))

    def exterior_bond_of(self, eid: str) -> Bond:
        """The unique bond of an exterior element."""
        return self.bonds_at(eid)[0]

    def hamiltonian(self) -> Expr:
        from .expr import add_node
        return add_node(*[el.hamiltonian for el in self.elements
                          if el.kind == KIND_C])


def partition(bg: BondGraph):
    """Split vertices and bonds into exterior and interior parts.

    Returns (exterior element ids, interior element ids,
    exterior bond ids, interior bond ids); bond id lists are ascending.
    """
    ext = tuple(el.id for el in bg.exterior_elements())
    intr = tuple(el.id for el in bg.interior_elements())
    ext_set = set(ext)
    b_ext, b_int = [], []
    for b in sorted(bg.bonds, key=lambda b: b.id):
        if b.tail in ext_set or b.head in ext_set:
            b_ext.append(b.id)
        else:
            b_int.append(b.id)
    return ext, intr, tuple(b_ext), tuple(b_int)


def state_symbols_for(element_id: str, dimension: int) -> tuple[str, ...]:
    return tuple(f"x_{element_id}_{k + 1}" for k in range(dimension))


def _require(cond: bool, code: str, message: str, ids: tuple = ()):
    if not cond:
        raise BondGraphError(code, message, ids)


def parse_bondgraph(text: str) -> BondGraph:
    """Parse and fully validate a bond graph from its JSON description."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise BondGraphError("syntax", f"invalid JSON: {err}") from err
    return build_bondgraph(doc)


def load_bondgraph(path: str) -> BondGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_bondgraph(fh.read())


def build_bondgraph(doc: dict) -> BondGraph:
    _require(isinstance(doc, dict), "syntax", "top level must be an object")
    dimension = doc.get("dimension")
    _require(isinstance(dimension, int) and dimension >= 1, "dimension",
             f"dimension must be an integer >= 1, got {dimension!r}")

    parameters = []
    for p in doc.get("parameters", []):
        _require(isinstance(p, dict) and "name" in p, "syntax",
                 f"malformed parameter entry {p!r}")
        name = p["name"]
        _require(isinstance(name, str) and _ID_RE.match(name) is not None,
                 "id-format", f"bad parameter name {name!r}")
        value = p.get("value")
        _require(value is None or isinstance(value, (int, float)), "syntax",
                 f"parameter {name}: value must be numeric")
        parameters.append((name, None if value is None else float(value)))

    raw_elements = doc.get("elements", [])
    _require(isinstance(raw_elements, list) and raw_elements, "syntax",
             "at least one element is required")
    seen_ids: set[str] = set()
    decls = []
    state_symbols: list[str] = []
    for raw in raw_elements:
        _require(isinstance(raw, dict) and "id" in raw and "kind" in raw,
                 "syntax", f"malformed element entry {raw!r}")
        eid, kind = raw["id"], raw["kind"]
        _require(isinstance(eid, str) and _ID_RE.match(eid) is not None,
                 "id-format", f"bad element id {eid!r}")
        _require(eid not in seen_ids, "duplicate-id",
                 f"element id '{eid}' declared twice", (eid,))
        seen_ids.add(eid)
        _require(kind in ALL_KINDS, "syntax",
                 f"element '{eid}': unknown kind {kind!r}", (eid,))
        decls.append(raw)
        if kind == KIND_C:
            state_symbols.extend(state_symbols_for(eid, dimension))

    try:
        table = SymbolTable(states=tuple(state_symbols),
                            parameters=tuple(parameters))
    except ExprError as err:
        raise BondGraphError("id-format", str(err)) from err

    elements = []
    for raw in decls:
        elements.append(_build_element(raw, dimension, table))

    bonds = _build_bonds(doc.get("bonds", []), seen_ids)
    bg = BondGraph(dimension=dimension, elements=tuple(elements),
                   bonds=bonds, table=table)
    _validate_structure(bg)
    _validate_payloads(bg)
    return bg


def _build_element(raw: dict, dimension: int, table: SymbolTable) -> Element:
    eid, kind = raw["id"], raw["kind"]

    def parse_payload_expr(text: str) -> Expr:
        _require(isinstance(text, str), "syntax",
                 f"element '{eid}': expression must be a string", (eid,))
        try:
            return parse_expr(text, table)
        except ExprError as err:
            raise BondGraphError(
                "syntax", f"element '{eid}': {err}", (eid,)) from err

    if kind == KIND_C:
        _require("hamiltonian" in raw, "payload",
                 f"C element '{eid}' needs a 'hamiltonian'", (eid,))
        expr = parse_payload_expr(raw["hamiltonian"])
        states = state_symbols_for(eid, dimension)
        own = set(states) | set(table.parameter_names)
        foreign = free_symbols(expr) - own
        _require(not foreign, "hamiltonian-coupling",
                 f"C element '{eid}': Hamiltonian references "
                 f"{sorted(foreign)} outside its own states", (eid,))
        return Element(eid, kind, hamiltonian=expr, states=states)

    if kind in (KIND_R, KIND_TF, KIND_GY):
        _require("matrix" in raw, "payload",
                 f"{kind} element '{eid}' needs a 'matrix'", (eid,))
        m = raw["matrix"]
        _require(isinstance(m, list) and len(m) == dimension
                 and all(isinstance(r, list) and len(r) == dimension for r in m),
                 "payload",
                 f"element '{eid}': matrix must be {dimension}x{dimension}",
                 (eid,))
        mat = from_rows([[parse_payload_expr(e) for e in row] for row in m])
        return Element(eid, kind, matrix=mat)

    _require("hamiltonian" not in raw and "matrix" not in raw, "payload",
             f"element '{eid}' of kind {kind} takes no payload", (eid,))
    return Element(eid, kind)


def _build_bonds(raw_bonds, element_ids: set[str]) -> tuple[Bond, ...]:
    _require(isinstance(raw_bonds, list), "syntax", "'bonds' must be a list")
    bonds = []
    seen: set[int] = set()
    for raw in raw_bonds:
        _require(isinstance(raw, dict) and {"id", "tail", "head"} <= set(raw),
                 "syntax", f"malformed bond entry {raw!r}")
        bid, tail, head = raw["id"], raw["tail"], raw["head"]
        _require(isinstance(bid, int), "syntax", f"bond id {bid!r} not an int")
        _require(bid not in seen, "duplicate-id",
                 f"bond id {bid} declared twice", (bid,))
        seen.add(bid)
        for end in (tail, head):
            _require(end in element_ids, "bond-endpoints",
                     f"bond {bid}: unknown element '{end}'", (bid, end))
        _require(tail != head, "bond-endpoints",
                 f"bond {bid}: tail and head are both '{tail}'", (bid,))
        bonds.append(Bond(bid, tail, head))
    return tuple(bonds)


def _validate_structure(bg: BondGraph):
    interior = {el.id for el in bg.interior_elements()}

    for el in bg.elements:
        incident = bg.bonds_at(el.id)
        _require(len(incident) >= 1, "isolated-element",
                 f"element '{el.id}' has no bonds", (el.id,))

    for el in bg.exterior_elements():
        incident = bg.bonds_at(el.id)
        _require(len(incident) == 1, "exterior-degree",
                 f"exterior element '{el.id}' must have exactly one bond, "
                 f"found {len(incident)}", (el.id,))
        bond = incident[0]
        other = bond.tail if bond.head == el.id else bond.head
        _require(other in interior, "exterior-degree",
                 f"exterior element '{el.id}' must connect to an interior "
                 f"element, bond {bond.id} connects to '{other}'",
                 (el.id, bond.id))
        if el.kind in (KIND_C, KIND_R):
            _require(bond.head == el.id, "orientation",
                     f"bond {bond.id} must point into {el.kind} element "
                     f"'{el.id}'", (el.id, bond.id))
        else:
            _require(bond.tail == el.id, "orientation",
                     f"bond {bond.id} must point out of {el.kind} element "
                     f"'{el.id}'", (el.id, bond.id))

    for el in bg.elements_of_kind(KIND_TF, KIND_GY):
        n_in, n_out = len(bg.in_bonds(el.id)), len(bg.out_bonds(el.id))
        _require((n_in, n_out) == (1, 1), "tfgy-degree",
                 f"{el.kind} element '{el.id}' must have exactly one incoming "
                 f"and one outgoing bond, found {n_in} in / {n_out} out",
                 (el.id,))

    # weak connectivity over the undirected view
    ids = [el.id for el in bg.elements]
    neighbors: dict[str, set[str]] = {i: set() for i in ids}
    for b in bg.bonds:
        neighbors[b.tail].add(b.head)
        neighbors[b.head].add(b.tail)
    reached = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nxt in neighbors[stack.pop()]:
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)
    unreached = [i for i in ids if i not in reached]
    _require(not unreached, "not-connected",
             f"graph is not weakly connected; unreachable: {unreached}",
             tuple(unreached))


def _validate_payloads(bg: BondGraph):
    allowed = set(bg.table.states) | set(bg.table.parameter_names)
    for el in bg.elements:
        if el.matrix is None:
            continue
        foreign = el.matrix.free_symbols() - allowed
        _require(not foreign, "modulation-symbol",
                 f"element '{el.id}': modulation uses undeclared symbols "
                 f"{sorted(foreign)}", (el.id,))
        if el.kind == KIND_R:
            gap = sub(el.matrix, transpose(el.matrix))
            ok = all(is_zero(e, trials=20, seed=17, table=bg.table)
                     for e in gap.entries)
            _require(ok, "r-symmetry",
                     f"R element '{el.id}': matrix is not symmetric", (el.id,))
        else:
            rank = generic_rank(el.matrix, trials=20, seed=19, table=bg.table)
            _require(rank == bg.dimension, "tfgy-rank",
                     f"{el.kind} element '{el.id}': matrix has generic rank "
                     f"{rank}, expected {bg.dimension}", (el.id,))


# -- serialization ---------------------------------------------------------------

def serialize_bondgraph(bg: BondGraph) -> dict:
    """JSON-ready description; parse(serialize(bg)) reproduces the model."""
    doc: dict = {"dimension": bg.dimension}
    params = []
    for name, value in bg.table.parameters:
        entry: dict = {"name": name}
        if value is not None:
            entry["value"] = value
        params.append(entry)
    if params:
        doc["parameters"] = params
    elements = []
    for el in bg.elements:
        entry = {"id": el.id, "kind": el.kind}
        if el.hamiltonian is not None:
            entry["hamiltonian"] = to_string(el.hamiltonian)
        if el.matrix is not None:
            entry["matrix"] = [[to_string(el.matrix.get(i, j))
                                for j in range(el.matrix.cols)]
                               for i in range(el.matrix.rows)]
        elements.append(entry)
    doc["elements"] = elements
    doc["bonds"] = [{"id": b.id, "tail": b.tail, "head": b.head}
                    for b in bg.bonds]
    return doc
