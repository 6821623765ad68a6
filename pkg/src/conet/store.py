"""Four-layer concept net: taxonomy classes, primitive concepts, e-commerce
concepts, and items, with typed edges and line-delimited JSON persistence.

The taxonomy is a forest rooted at the 20 fixed domains; mutation goes
through a single exclusive writer (an RLock), and every upsert validates
fully before touching state so failures never leave partial writes.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

DOMAINS = (
    "Audience", "Brand", "Color", "Design", "Event", "Function", "Category",
    "IP", "Material", "Modifier", "Nature", "Organization", "Pattern",
    "Location", "Quantity", "Shape", "Smell", "Style", "Taste", "Time",
)

RELATIONS = (
    "isA_class", "instanceOf", "isA_concept", "schema_relation",
    "concept_link", "item_primitive", "item_ecommerce",
)

ECOMMERCE_STATUSES = ("candidate", "validated", "rejected")


class StoreError(ValueError):
    """Base class for store contract violations."""


class DanglingReferenceError(StoreError):
    pass


class CycleError(StoreError):
    pass


class SchemaError(StoreError):
    pass


class ParseError(StoreError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def domain_root_id(domain: str) -> str:
    return f"class:{domain}"


@dataclass(frozen=True)
class TaxonomyClass:
    id: str
    name: str
    domain: str
    parent: str | None = None
    depth: int = 1


@dataclass(frozen=True)
class PrimitiveConcept:
    id: str
    surface: str
    classes: frozenset[str]
    aliases: frozenset[str] = frozenset()


@dataclass(frozen=True)
class ECommerceConcept:
    id: str
    phrase: str
    tokens: tuple[str, ...]
    status: str = "candidate"
    links: tuple[tuple[tuple[int, int], str], ...] = ()


@dataclass(frozen=True)
class Item:
    id: str
    title: str
    tokens: tuple[str, ...]
    category: str


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: str
    name: str | None = None     # schema_relation only
    weight: float | None = None

    def key(self) -> tuple:
        return (self.relation, self.name or "", self.src, self.dst)


class ConceptNet:
    """Mutable four-layer net with typed, validated edges."""

    def __init__(self, schema: Mapping[str, tuple[str, str]] | None = None):
        self._lock = threading.RLock()
        self.classes: dict[str, TaxonomyClass] = {}
        self.primitives: dict[str, PrimitiveConcept] = {}
        self.ecommerce: dict[str, ECommerceConcept] = {}
        self.items: dict[str, Item] = {}
        self.edges: dict[tuple, Edge] = {}
        self.schema: dict[str, tuple[str, str]] = dict(schema or {})
        self._surface_index: dict[tuple[str, str], list[str]] | None = None
        for domain in DOMAINS:
            root = TaxonomyClass(id=domain_root_id(domain), name=domain,
                                 domain=domain, parent=None, depth=1)
            self.classes[root.id] = root

    # ------------------------------------------------------------- validation

    def _require_class(self, class_id: str) -> TaxonomyClass:
        node = self.classes.get(class_id)
        if node is None:
            raise DanglingReferenceError(f"unknown taxonomy class {class_id!r}")
        return node

    def _validate_class(self, node: TaxonomyClass) -> TaxonomyClass:
        if node.domain not in DOMAINS:
            raise StoreError(f"unknown domain {node.domain!r}")
        if node.parent is None:
            if node.id != domain_root_id(node.domain):
                raise StoreError(
                    f"class {node.id!r} without parent: only the 20 domain "
                    "roots may be parentless")
            return replace(node, depth=1)
        parent = self._require_class(node.parent)
        if parent.domain != node.domain:
            raise StoreError(f"class {node.id!r} domain {node.domain!r} differs "
                             f"from parent domain {parent.domain!r}")
        # cycle check: walking up from the parent must never reach the node
        seen = {node.id}
        cursor: str | None = node.parent
        while cursor is not None:
            if cursor in seen:
                raise CycleError(f"isA_class edge {node.id!r} -> {node.parent!r} "
                                 "would close a cycle")
            seen.add(cursor)
            cursor = self.classes[cursor].parent if cursor in self.classes else None
        depth = parent.depth + 1
        if node.depth not in (1, depth):  # 1 doubles as "unset" (the default)
            raise StoreError(f"class {node.id!r} depth {node.depth} != "
                             f"parent depth + 1 ({depth})")
        return replace(node, depth=depth)

    def _validate_primitive(self, node: PrimitiveConcept) -> PrimitiveConcept:
        if not node.classes:
            raise StoreError(f"primitive {node.id!r} must carry at least one class")
        for class_id in node.classes:
            self._require_class(class_id)
        return node

    def _validate_ecommerce(self, node: ECommerceConcept) -> ECommerceConcept:
        if not node.tokens:
            raise StoreError(f"e-commerce concept {node.id!r} has no tokens")
        if node.status not in ECOMMERCE_STATUSES:
            raise StoreError(f"bad status {node.status!r}")
        if node.status == "validated" and not node.links:
            raise StoreError(f"validated concept {node.id!r} must link to at "
                             "least one primitive concept")
        taken: list[tuple[int, int]] = []
        for (start, end), primitive_id in node.links:
            if not (0 <= start < end <= len(node.tokens)):
                raise StoreError(f"link span ({start},{end}) out of range for "
                                 f"{node.id!r}")
            if any(s < end and start < e for s, e in taken):
                raise StoreError(f"overlapping link spans in {node.id!r}")
            taken.append((start, end))
            if primitive_id not in self.primitives:
                raise DanglingReferenceError(
                    f"concept {node.id!r} links unknown primitive {primitive_id!r}")
        return node

    def _validate_item(self, node: Item) -> Item:
        cls = self._require_class(node.category)
        if self.domain_of(cls.id) != "Category":
            raise StoreError(f"item {node.id!r} category {node.category!r} is "
                             "not under the Category domain")
        return node

    # --------------------------------------------------------------- mutation

    def upsert_node(self, node) -> str:
        with self._lock:
            if isinstance(node, TaxonomyClass):
                node = self._validate_class(node)
                previous = self.classes.get(node.id)
                self.classes[node.id] = node
                if previous and previous.parent != node.parent:
                    self.edges.pop(("isA_class", "", node.id, previous.parent), None)
                    self._refresh_depths(node.id)
                if node.parent is not None:
                    edge = Edge(node.id, node.parent, "isA_class")
                    self.edges[edge.key()] = edge
            elif isinstance(node, PrimitiveConcept):
                node = self._validate_primitive(node)
                previous = self.primitives.get(node.id)
                self.primitives[node.id] = node
                if previous:
                    for class_id in previous.classes - node.classes:
                        self.edges.pop(("instanceOf", "", node.id, class_id), None)
                for class_id in node.classes:
                    edge = Edge(node.id, class_id, "instanceOf")
                    self.edges[edge.key()] = edge
            elif isinstance(node, ECommerceConcept):
                node = self._validate_ecommerce(node)
                previous = self.ecommerce.get(node.id)
                self.ecommerce[node.id] = node
                if previous:
                    stale = {p for _, p in previous.links} - {p for _, p in node.links}
                    for primitive_id in stale:
                        self.edges.pop(("concept_link", "", node.id, primitive_id), None)
                for _, primitive_id in node.links:
                    edge = Edge(node.id, primitive_id, "concept_link")
                    self.edges[edge.key()] = edge
            elif isinstance(node, Item):
                node = self._validate_item(node)
                self.items[node.id] = node
            else:
                raise StoreError(f"unknown node type {type(node).__name__}")
            self._surface_index = None
            return node.id

    def _refresh_depths(self, class_id: str) -> None:
        children = {}
        for node in self.classes.values():
            children.setdefault(node.parent, []).append(node.id)
        stack = [class_id]
        while stack:
            current = stack.pop()
            node = self.classes[current]
            depth = 1 if node.parent is None else self.classes[node.parent].depth + 1
            self.classes[current] = replace(node, depth=depth)
            stack.extend(children.get(current, []))

    def upsert_edge(self, edge: Edge) -> None:
        with self._lock:
            if edge.relation not in RELATIONS:
                raise StoreError(f"unknown relation {edge.relation!r}")
            if edge.weight is not None and not (0.0 <= edge.weight <= 1.0):
                raise StoreError(f"edge weight {edge.weight} outside [0,1]")
            rel = edge.relation
            if rel == "isA_class":
                child = self._require_class(edge.src)
                self._require_class(edge.dst)
                self.upsert_node(replace(child, parent=edge.dst,
                                         depth=self.classes[edge.dst].depth + 1))
                return
            if rel == "instanceOf":
                node = self._node_of_layer(edge.src, self.primitives, "primitive")
                self._require_class(edge.dst)
                self.upsert_node(replace(node, classes=node.classes | {edge.dst}))
                return
            if rel == "isA_concept":
                self._node_of_layer(edge.src, self.primitives, "primitive")
                self._node_of_layer(edge.dst, self.primitives, "primitive")
            elif rel == "schema_relation":
                if not edge.name:
                    raise SchemaError("schema_relation edges must carry a name")
                declared = self.schema.get(edge.name)
                if declared is None:
                    raise SchemaError(f"schema relation {edge.name!r} not declared")
                src_base, dst_base = declared
                for endpoint, base in ((edge.src, src_base), (edge.dst, dst_base)):
                    self._require_class(endpoint)
                    if endpoint != base and base not in [
                            c.id for c in self.ancestors(endpoint)]:
                        raise SchemaError(
                            f"endpoint {endpoint!r} of {edge.name!r} is not "
                            f"{base!r} or one of its descendants")
            elif rel == "concept_link":
                self._node_of_layer(edge.src, self.ecommerce, "e-commerce concept")
                self._node_of_layer(edge.dst, self.primitives, "primitive")
            elif rel == "item_primitive":
                self._node_of_layer(edge.src, self.items, "item")
                self._node_of_layer(edge.dst, self.primitives, "primitive")
            elif rel == "item_ecommerce":
                self._node_of_layer(edge.src, self.items, "item")
                self._node_of_layer(edge.dst, self.ecommerce, "e-commerce concept")
            self.edges[edge.key()] = edge

    def _node_of_layer(self, node_id: str, layer: dict, label: str):
        node = layer.get(node_id)
        if node is None:
            raise DanglingReferenceError(f"unknown {label} {node_id!r}")
        return node

    # ---------------------------------------------------------------- queries

    def ancestors(self, class_id: str) -> list[TaxonomyClass]:
        """Chain from the immediate parent up to the domain root."""
        node = self._require_class(class_id)
        out = []
        while node.parent is not None:
            node = self._require_class(node.parent)
            out.append(node)
        return out

    def domain_of(self, class_id: str) -> str:
        node = self._require_class(class_id)
        while node.parent is not None:
            node = self.classes[node.parent]
        return node.domain

    def descendants(self, class_id: str) -> set[str]:
        self._require_class(class_id)
        children: dict[str | None, list[str]] = {}
        for node in self.classes.values():
            children.setdefault(node.parent, []).append(node.id)
        out, stack = set(), [class_id]
        while stack:
            current = stack.pop()
            for child in children.get(current, []):
                out.add(child)
                stack.append(child)
        return out

    def primitive_domains(self, primitive: PrimitiveConcept) -> set[str]:
        return {self.domain_of(c) for c in primitive.classes}

    def surface_index(self) -> dict[tuple[str, str], list[str]]:
        """(surface, domain) -> sorted primitive ids; aliases included."""
        with self._lock:
            if self._surface_index is None:
                index: dict[tuple[str, str], list[str]] = {}
                for node in self.primitives.values():
                    for domain in self.primitive_domains(node):
                        for surface in {node.surface, *node.aliases}:
                            index.setdefault((surface, domain), []).append(node.id)
                for ids in index.values():
                    ids.sort()
                self._surface_index = index
            return self._surface_index

    def stats(self) -> dict:
        by_domain = {domain: 0 for domain in DOMAINS}
        for node in self.primitives.values():
            for domain in self.primitive_domains(node):
                by_domain[domain] += 1
        by_relation = {relation: 0 for relation in RELATIONS}
        for edge in self.edges.values():
            by_relation[edge.relation] += 1
        return {
            "layers": {
                "taxonomy_classes": len(self.classes),
                "primitive_concepts": len(self.primitives),
                "ecommerce_concepts": len(self.ecommerce),
                "items": len(self.items),
            },
            "primitive_concepts_by_domain": by_domain,
            "edges_by_relation": by_relation,
        }

    def coverage(self, queries: Sequence[Sequence[str]]) -> float:
        """Mean over queries of the fraction of tokens matching a primitive
        surface or alias.  Queries arrive already rewritten and tokenized."""
        if not queries:
            raise StoreError("coverage requires at least one query")
        vocabulary = set()
        for node in self.primitives.values():
            vocabulary.add(node.surface)
            vocabulary.update(node.aliases)
        fractions = []
        for tokens in queries:
            if not tokens:
                raise StoreError("coverage queries must be nonempty")
            matched = sum(1 for tok in tokens if tok in vocabulary)
            fractions.append(matched / len(tokens))
        return sum(fractions) / len(fractions)

    def audit(self) -> list[str]:
        """Full-scan integrity check; empty result means the net is sound."""
        problems = []
        for node in self.classes.values():
            seen = {node.id}
            cursor = node.parent
            hops = 0
            while cursor is not None:
                if cursor in seen or hops > len(self.classes):
                    problems.append(f"taxonomy cycle at {node.id}")
                    break
                parent = self.classes.get(cursor)
                if parent is None:
                    problems.append(f"class {node.id} has dangling parent {cursor}")
                    break
                seen.add(cursor)
                cursor = parent.parent
                hops += 1
            if node.parent is not None:
                parent = self.classes.get(node.parent)
                if parent is not None and node.depth != parent.depth + 1:
                    problems.append(f"class {node.id} depth {node.depth} != "
                                    f"parent depth + 1")
        for node in self.primitives.values():
            for class_id in node.classes:
                if class_id not in self.classes:
                    problems.append(f"primitive {node.id} references missing "
                                    f"class {class_id}")
        for node in self.ecommerce.values():
            if node.status == "validated" and not node.links:
                problems.append(f"validated concept {node.id} has no links")
            for _, primitive_id in node.links:
                if primitive_id not in self.primitives:
                    problems.append(f"concept {node.id} links missing primitive "
                                    f"{primitive_id}")
        for node in self.items.values():
            if node.category not in self.classes:
                problems.append(f"item {node.id} references missing class "
                                f"{node.category}")
        layer_lookup = {
            "isA_class": (self.classes, self.classes),
            "instanceOf": (self.primitives, self.classes),
            "isA_concept": (self.primitives, self.primitives),
            "schema_relation": (self.classes, self.classes),
            "concept_link": (self.ecommerce, self.primitives),
            "item_primitive": (self.items, self.primitives),
            "item_ecommerce": (self.items, self.ecommerce),
        }
        for edge in self.edges.values():
            src_layer, dst_layer = layer_lookup[edge.relation]
            if edge.src not in src_layer:
                problems.append(f"edge {edge.key()} has dangling src")
            if edge.dst not in dst_layer:
                problems.append(f"edge {edge.key()} has dangling dst")
        return problems

    # ------------------------------------------------------------ persistence

    def _records(self) -> Iterable[dict]:
        if self.schema:
            yield {"kind": "schema",
                   "relations": {k: list(v) for k, v in sorted(self.schema.items())}}
        for node in sorted(self.classes.values(), key=lambda n: (n.depth, n.id)):
            yield {"kind": "class", "id": node.id, "name": node.name,
                   "domain": node.domain, "parent": node.parent, "depth": node.depth}
        for node in sorted(self.primitives.values(), key=lambda n: n.id):
            yield {"kind": "primitive", "id": node.id, "surface": node.surface,
                   "classes": sorted(node.classes), "aliases": sorted(node.aliases)}
        for node in sorted(self.ecommerce.values(), key=lambda n: n.id):
            yield {"kind": "ecommerce", "id": node.id, "phrase": node.phrase,
                   "tokens": list(node.tokens), "status": node.status,
                   "links": [[list(span), pid] for span, pid in node.links]}
        for node in sorted(self.items.values(), key=lambda n: n.id):
            yield {"kind": "item", "id": node.id, "title": node.title,
                   "tokens": list(node.tokens), "category": node.category}
        for key in sorted(self.edges):
            edge = self.edges[key]
            yield {"kind": "edge", "src": edge.src, "dst": edge.dst,
                   "relation": edge.relation, "name": edge.name,
                   "weight": edge.weight}

    def export(self, path) -> None:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for record in self._records():
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "ConceptNet":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(line_no, f"invalid JSON: {exc.msg}") from None
                try:
                    store._apply_record(record)
                except (StoreError, KeyError, TypeError) as exc:
                    raise ParseError(line_no, str(exc)) from None
        return store

    def _apply_record(self, record: dict) -> None:
        kind = record.get("kind")
        if kind == "schema":
            self.schema = {k: (v[0], v[1])
                           for k, v in record["relations"].items()}
        elif kind == "class":
            self.upsert_node(TaxonomyClass(
                id=record["id"], name=record["name"], domain=record["domain"],
                parent=record["parent"], depth=record["depth"]))
        elif kind == "primitive":
            self.upsert_node(PrimitiveConcept(
                id=record["id"], surface=record["surface"],
                classes=frozenset(record["classes"]),
                aliases=frozenset(record["aliases"])))
        elif kind == "ecommerce":
            self.upsert_node(ECommerceConcept(
                id=record["id"], phrase=record["phrase"],
                tokens=tuple(record["tokens"]), status=record["status"],
                links=tuple(((span[0], span[1]), pid)
                            for span, pid in record["links"])))
        elif kind == "item":
            self.upsert_node(Item(id=record["id"], title=record["title"],
                                  tokens=tuple(record["tokens"]),
                                  category=record["category"]))
        elif kind == "edge":
            self.upsert_edge(Edge(src=record["src"], dst=record["dst"],
                                  relation=record["relation"],
                                  name=record.get("name"),
                                  weight=record.get("weight")))
        else:
            raise StoreError(f"unknown record kind {kind!r}")

    # ---------------------------------------------------------------- equality

    def same_content(self, other: "ConceptNet") -> bool:
        return (self.classes == other.classes
                and self.primitives == other.primitives
                and self.ecommerce == other.ecommerce
                and self.items == other.items
                and self.edges == other.edges
                and self.schema == other.schema)


def load_schema(path) -> dict[str, tuple[str, str]]:
    """Schema config: JSON object mapping relation name -> [src_class, dst_class]."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for name, endpoints in raw.items():
        if not (isinstance(endpoints, list) and len(endpoints) == 2):
            raise SchemaError(f"schema relation {name!r} must map to "
                              "[src_class, dst_class]")
        out[name] = (endpoints[0], endpoints[1])
    return out
