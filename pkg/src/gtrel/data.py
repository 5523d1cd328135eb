"""Relation instances, dependency-graph neighbor construction, dataset IO.

An instance is a tokenized text span (possibly several sentences), a
dependency head per token (roots point at themselves), a set of entities
with knowledge-base ids and token-span mentions, and a gold label. The
neighbor rules that feed the graph encoder live here:

* every token neighbors itself, its dependency headword, and its two
  sequence-adjacent tokens;
* every token inside an entity mention additionally neighbors every token
  on the undirected dependency shortest path between that mention and each
  mention of every other entity;
* sets may be capped, dropping lowest-priority members first
  (self > headword > adjacent > path tokens, nearer path tokens first).

Sentences are connected by chaining their roots in token order, so the
shortest path is well defined across sentence boundaries.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .attention import NeighborMask
from .errors import DatasetError, GraphError, GtrelError, InstanceError, LabelError, PathError

CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"

LABELS_NARY5 = ("resistance or nonresponse", "sensitivity", "response", "resistance", "none")
LABELS_BINARY = ("yes", "no")
TASK_LABELS = {
    "nary5": LABELS_NARY5,
    "nary2": LABELS_BINARY,
    "binary_abs": LABELS_BINARY,
}


@dataclass(frozen=True)
class Entity:
    """One entity slot: its kb ids and its mention spans.

    ``kb_ids`` may be empty (unnormalized corpora). ``mention_kb_ids``, when
    present, assigns one of ``kb_ids`` to each mention so that entity
    expansion can partition mentions by id; otherwise every expansion keeps
    all mentions.
    """

    eid: str
    kb_ids: tuple[str, ...] = ()
    mentions: tuple[tuple[int, int], ...] = ()
    mention_kb_ids: tuple[str, ...] | None = None


@dataclass(frozen=True)
class RelationInstance:
    """One classification item: text, dependency heads, entities, gold label."""

    id: str
    tokens: tuple[str, ...]
    dep_head: tuple[int, ...]
    dep_labels: tuple[str, ...]
    entities: tuple[Entity, ...]
    label: str
    task: str
    neighbors: tuple[tuple[int, ...], ...] | None = None


@dataclass(frozen=True)
class NeighborGraph:
    """Per-token neighbor index sets, the input structure of neighbor attention."""

    neighbors: tuple[frozenset[int], ...]

    def __post_init__(self):
        n = len(self.neighbors)
        for i, nbrs in enumerate(self.neighbors):
            if i not in nbrs:
                raise GraphError(f"token {i} is missing from its own neighbor set")
            for j in nbrs:
                if not 0 <= j < n:
                    raise GraphError(f"neighbor index {j} of token {i} out of range 0..{n - 1}")

    @property
    def size(self) -> int:
        return len(self.neighbors)

    def to_mask(self) -> NeighborMask:
        allowed = np.zeros((self.size, self.size), dtype=bool)
        for i, nbrs in enumerate(self.neighbors):
            allowed[i, list(nbrs)] = True
        return NeighborMask(allowed)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _roots_of(dep_head) -> list[int]:
    """Root token of each index; raises on parent cycles that reach no root."""
    n = len(dep_head)
    state = [0] * n  # 0 new, 1 on current chain, 2 resolved
    root = [-1] * n
    for start in range(n):
        if state[start] == 2:
            continue
        chain = []
        j = start
        while True:
            if state[j] == 2:
                r = root[j]
                break
            if state[j] == 1:
                raise GraphError(f"cyclic dep_head with no root, involving token {j}")
            state[j] = 1
            chain.append(j)
            if dep_head[j] == j:
                r = j
                break
            j = dep_head[j]
        for c in chain:
            root[c] = r
            state[c] = 2
    return root


def sentence_ids(dep_head) -> list[int]:
    """Component index per token: rank of each token's root in token order."""
    root = _roots_of(dep_head)
    order = {r: k for k, r in enumerate(sorted(set(root)))}
    return [order[r] for r in root]


def validate_instance(inst: RelationInstance):
    """Check every structural invariant; raises a descriptive GtrelError."""
    n = len(inst.tokens)
    if inst.task not in TASK_LABELS:
        raise LabelError(f"unknown task {inst.task!r}, expected one of {sorted(TASK_LABELS)}")
    if inst.label not in TASK_LABELS[inst.task]:
        raise LabelError(f"label {inst.label!r} not in label set for task {inst.task!r}")
    if len(inst.dep_head) != n or len(inst.dep_labels) != n:
        raise GraphError(
            f"dep arrays (len {len(inst.dep_head)}) do not match {n} tokens"
        )
    for i, h in enumerate(inst.dep_head):
        if not 0 <= h < n:
            raise GraphError(f"dep_head[{i}] = {h} out of range 0..{n - 1}")
    if n:
        _roots_of(inst.dep_head)

    spans = []
    for e_idx, ent in enumerate(inst.entities):
        if not ent.mentions:
            raise InstanceError(f"entity {ent.eid!r} has no mentions")
        prev_end = None
        for start, end in ent.mentions:
            if not (0 <= start < end <= n):
                raise InstanceError(
                    f"entity {ent.eid!r} mention [{start}, {end}) out of range for {n} tokens"
                )
            if prev_end is not None and start < prev_end:
                raise InstanceError(f"entity {ent.eid!r} mentions are not sorted and disjoint")
            prev_end = end
            spans.append((start, end, ent.eid))
        if ent.mention_kb_ids is not None:
            if len(ent.mention_kb_ids) != len(ent.mentions):
                raise InstanceError(
                    f"entity {ent.eid!r}: {len(ent.mention_kb_ids)} mention ids "
                    f"for {len(ent.mentions)} mentions"
                )
            extra = set(ent.mention_kb_ids) - set(ent.kb_ids)
            if extra:
                raise InstanceError(f"entity {ent.eid!r}: mention ids {sorted(extra)} not in kb_ids")
            missing = set(ent.kb_ids) - set(ent.mention_kb_ids)
            if missing:
                raise InstanceError(
                    f"entity {ent.eid!r}: kb_ids {sorted(missing)} have no mention assigned"
                )
    spans.sort()
    for (s1, e1, a), (s2, _e2, b) in zip(spans, spans[1:]):
        if s2 < e1:
            raise InstanceError(f"mention spans of {a!r} and {b!r} overlap at token {s2}")

    if inst.neighbors is not None:
        if len(inst.neighbors) != n:
            raise GraphError(f"{len(inst.neighbors)} neighbor rows for {n} tokens")
        NeighborGraph(tuple(frozenset(row) for row in inst.neighbors))


# ---------------------------------------------------------------------------
# Dependency paths and neighbor sets
# ---------------------------------------------------------------------------


def undirected_adjacency(dep_head) -> list[set[int]]:
    """Tree edges plus the chain linking consecutive sentence roots."""
    n = len(dep_head)
    adj: list[set[int]] = [set() for _ in range(n)]
    roots = []
    for i, h in enumerate(dep_head):
        if h == i:
            roots.append(i)
        else:
            adj[i].add(h)
            adj[h].add(i)
    for a, b in zip(roots, roots[1:]):
        adj[a].add(b)
        adj[b].add(a)
    return adj


def _components(adj) -> list[list[int]]:
    seen = [False] * len(adj)
    comps = []
    for start in range(len(adj)):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def shortest_path(dep_head, src: int, dst: int) -> list[int]:
    """Minimal undirected dependency path from src to dst, endpoints included.

    Among equal-length paths (possible only on non-tree inputs) the
    lexicographically smallest token-index sequence wins. Raises
    :class:`PathError` listing the components when no path exists.
    """
    n = len(dep_head)
    for name, tok in (("src", src), ("dst", dst)):
        if not 0 <= tok < n:
            raise IndexError(f"{name} token {tok} out of range 0..{n - 1}")
    adj = undirected_adjacency(dep_head)
    dist = [-1] * n
    dist[dst] = 0
    queue = deque([dst])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] == -1:
                dist[v] = dist[u] + 1
                queue.append(v)
    if dist[src] == -1:
        raise PathError(
            f"no dependency path from {src} to {dst}; components: {_components(adj)}"
        )
    path = [src]
    current = src
    while current != dst:
        current = min(v for v in adj[current] if dist[v] == dist[current] - 1)
        path.append(current)
    return path


def _mention_tokens(ent: Entity):
    for start, end in ent.mentions:
        yield from range(start, end)


def _best_mention_path(dep_head, mention_a, mention_b) -> list[int]:
    """Shortest path between two mention spans: minimal over endpoint pairs,
    ties broken by the lexicographically smallest index sequence."""
    best = None
    for a in range(mention_a[0], mention_a[1]):
        for b in range(mention_b[0], mention_b[1]):
            path = shortest_path(dep_head, a, b)
            key = (len(path), path)
            if best is None or key < best[0]:
                best = (key, path)
    return best[1]


def build_neighbors(inst: RelationInstance, max_neighbors: int | None = None) -> NeighborGraph:
    """Apply the neighbor rules to one instance.

    Per token: self, dependency headword, and the sequence-adjacent tokens.
    Tokens inside an entity mention also receive every token on the
    dependency shortest path from that mention to each mention of every
    other entity. ``max_neighbors`` caps each set, keeping self first, then
    headword, then adjacent tokens, then path tokens by increasing distance
    from the mention (token index breaks ties), so the result does not
    depend on entity listing order.
    """
    if max_neighbors is not None and max_neighbors < 1:
        raise GraphError(f"max_neighbors must be positive, got {max_neighbors}")
    n = len(inst.tokens)
    _roots_of(inst.dep_head)

    # path_dist[t][p] = least distance of path token p along any entity path from t's mention
    path_dist: dict[int, dict[int, int]] = {}
    for ent_a, ent_b in itertools.permutations(inst.entities, 2):
        for mention_a in ent_a.mentions:
            for mention_b in ent_b.mentions:
                path = _best_mention_path(inst.dep_head, mention_a, mention_b)
                for t in range(mention_a[0], mention_a[1]):
                    bucket = path_dist.setdefault(t, {})
                    for d, p in enumerate(path):
                        if p not in bucket or d < bucket[p]:
                            bucket[p] = d

    rows = []
    for i in range(n):
        ordered = [i, inst.dep_head[i]]
        if i - 1 >= 0:
            ordered.append(i - 1)
        if i + 1 < n:
            ordered.append(i + 1)
        for p, _d in sorted(path_dist.get(i, {}).items(), key=lambda kv: (kv[1], kv[0])):
            ordered.append(p)
        unique = list(dict.fromkeys(ordered))
        if max_neighbors is not None:
            unique = unique[:max_neighbors]
        rows.append(frozenset(unique))
    return NeighborGraph(tuple(rows))


# ---------------------------------------------------------------------------
# Entity expansion and label collapse
# ---------------------------------------------------------------------------


def expand_entities(inst: RelationInstance) -> list[RelationInstance]:
    """One instance per combination of kb ids, one id per entity.

    Entities with no kb ids pass through unchanged. When per-mention ids are
    available, each expansion keeps only the mentions tagged with its chosen
    id; otherwise all mentions are duplicated into every expansion. If every
    entity has at most one id the input is returned as-is.
    """
    per_entity = []
    for ent in inst.entities:
        if not ent.kb_ids:
            per_entity.append([ent])
            continue
        variants = []
        for kb in ent.kb_ids:
            if ent.mention_kb_ids is not None:
                picked = tuple(
                    m for m, mid in zip(ent.mentions, ent.mention_kb_ids) if mid == kb
                )
                variants.append(
                    replace(ent, kb_ids=(kb,), mentions=picked, mention_kb_ids=(kb,) * len(picked))
                )
            else:
                variants.append(replace(ent, kb_ids=(kb,)))
        per_entity.append(variants)

    if all(len(v) == 1 for v in per_entity):
        return [inst]
    out = []
    for k, combo in enumerate(itertools.product(*per_entity)):
        out.append(
            replace(inst, id=f"{inst.id}#{k}", entities=tuple(combo), neighbors=None)
        )
    return out


def collapse_to_binary(label: str) -> str:
    """Fold the five-class label set to yes/no ("none" is the only "no").

    Raises on anything outside the five-class set, including labels that
    are already binary, which catches accidental double collapsing.
    """
    if label not in LABELS_NARY5:
        raise LabelError(f"label {label!r} is not in the five-class set {LABELS_NARY5}")
    return "no" if label == "none" else "yes"


def is_single_sentence(inst: RelationInstance) -> bool:
    """True when every mention token of every entity sits in one sentence."""
    if not inst.entities:
        return True
    sent = sentence_ids(inst.dep_head)
    seen = {sent[t] for ent in inst.entities for t in _mention_tokens(ent)}
    return len(seen) <= 1


# ---------------------------------------------------------------------------
# Classifier-token handling
# ---------------------------------------------------------------------------


def attach_classifier_token(inst: RelationInstance, graph: NeighborGraph):
    """Prepend the reserved classification token and shift the built graph.

    The reserved token is its own dependency head and neighbors exactly
    itself and token 1; all other rows shift by one. Because the graph was
    built before attaching, the reserved token never occurs on dependency
    shortest paths or in the sentence-root chain.
    """
    if inst.tokens and inst.tokens[0] == CLS_TOKEN:
        raise InstanceError(f"instance {inst.id!r} already carries the classifier token")
    if graph.size != len(inst.tokens):
        raise GraphError(f"graph for {graph.size} tokens but instance has {len(inst.tokens)}")
    first = frozenset({0, 1} if inst.tokens else {0})
    rows = (first,) + tuple(frozenset(j + 1 for j in nbrs) for nbrs in graph.neighbors)
    shifted = NeighborGraph(rows)
    new_inst = replace(
        inst,
        tokens=(CLS_TOKEN,) + inst.tokens,
        dep_head=(0,) + tuple(h + 1 for h in inst.dep_head),
        dep_labels=("cls",) + inst.dep_labels,
        entities=tuple(
            replace(e, mentions=tuple((s + 1, t + 1) for s, t in e.mentions))
            for e in inst.entities
        ),
        neighbors=tuple(tuple(sorted(r)) for r in rows),
    )
    return new_inst, shifted


def build_model_inputs(instances, max_neighbors: int | None = None):
    """Expand entities, build neighbor graphs, attach the classifier token.

    Returns (instance, graph) pairs ready for the model, plus the index of
    the source instance each pair came from (for de-expansion at eval
    time). Instances that already carry the classifier token must bring
    their stored neighbor rows and are passed through untouched.
    """
    prepared = []
    for source_index, inst in enumerate(instances):
        if inst.tokens and inst.tokens[0] == CLS_TOKEN:
            if inst.neighbors is None:
                raise InstanceError(
                    f"instance {inst.id!r} has a classifier token but no stored neighbors"
                )
            graph = NeighborGraph(tuple(frozenset(r) for r in inst.neighbors))
            prepared.append((inst, graph, source_index))
            continue
        for expanded in expand_entities(inst):
            graph = build_neighbors(expanded, max_neighbors)
            with_cls, shifted = attach_classifier_token(expanded, graph)
            prepared.append((with_cls, shifted, source_index))
    return prepared


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    """Word-level vocabulary with reserved classifier and unknown tokens."""

    def __init__(self, words):
        words = tuple(words)
        if words[:2] != (CLS_TOKEN, UNK_TOKEN):
            raise DatasetError(f"vocabulary must start with {CLS_TOKEN} and {UNK_TOKEN}")
        self.words = words
        self._index = {w: i for i, w in enumerate(words)}

    @classmethod
    def build(cls, instances) -> "Vocab":
        seen = set()
        for inst in instances:
            seen.update(inst.tokens)
        seen -= {CLS_TOKEN, UNK_TOKEN}
        return cls((CLS_TOKEN, UNK_TOKEN) + tuple(sorted(seen)))

    @property
    def size(self) -> int:
        return len(self.words)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self._index.get(t, 1) for t in tokens], dtype=np.int64)


# ---------------------------------------------------------------------------
# Dataset files: one JSON object per line
# ---------------------------------------------------------------------------


def _field(obj, key, kinds, path, required=True, default=None):
    if key not in obj:
        if required:
            raise DatasetError(f"{path}{key}: missing required field")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, kinds):
        names = "/".join(k.__name__ for k in (kinds if isinstance(kinds, tuple) else (kinds,)))
        raise DatasetError(f"{path}{key}: expected {names}, got {type(value).__name__}")
    return value


def _string_list(value, path):
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        raise DatasetError(f"{path}: expected a list of strings")
    return tuple(value)


def instance_from_record(obj) -> RelationInstance:
    """Parse and fully validate one JSON record."""
    if not isinstance(obj, dict):
        raise DatasetError("record is not a JSON object")
    rid = _field(obj, "id", str, "")
    tokens = _string_list(_field(obj, "tokens", list, ""), "tokens")
    dep = _field(obj, "dep", list, "")
    heads, labels = [], []
    for i, item in enumerate(dep):
        if not isinstance(item, dict):
            raise DatasetError(f"dep[{i}]: expected an object with head and label")
        heads.append(_field(item, "head", int, f"dep[{i}]."))
        labels.append(_field(item, "label", str, f"dep[{i}]."))
    entities = []
    for i, item in enumerate(_field(obj, "entities", list, "")):
        if not isinstance(item, dict):
            raise DatasetError(f"entities[{i}]: expected an object")
        prefix = f"entities[{i}]."
        eid = _field(item, "eid", str, prefix)
        kb_ids = _string_list(_field(item, "kb_ids", list, prefix), f"{prefix}kb_ids")
        mentions = []
        for j, span in enumerate(_field(item, "mentions", list, prefix)):
            if (
                not isinstance(span, list)
                or len(span) != 2
                or any(isinstance(x, bool) or not isinstance(x, int) for x in span)
            ):
                raise DatasetError(f"{prefix}mentions[{j}]: expected [start, end] integers")
            mentions.append((span[0], span[1]))
        mention_kb_ids = None
        if "mention_kb_ids" in item:
            mention_kb_ids = _string_list(item["mention_kb_ids"], f"{prefix}mention_kb_ids")
        entities.append(Entity(eid, kb_ids, tuple(mentions), mention_kb_ids))
    label = _field(obj, "label", str, "")
    task = _field(obj, "task", str, "")
    neighbors = None
    if "neighbors" in obj:
        raw = _field(obj, "neighbors", list, "")
        parsed = []
        for i, row in enumerate(raw):
            if not isinstance(row, list) or any(
                isinstance(x, bool) or not isinstance(x, int) for x in row
            ):
                raise DatasetError(f"neighbors[{i}]: expected a list of token indices")
            parsed.append(tuple(sorted(row)))
        neighbors = tuple(parsed)
    inst = RelationInstance(
        id=rid,
        tokens=tokens,
        dep_head=tuple(heads),
        dep_labels=tuple(labels),
        entities=tuple(entities),
        label=label,
        task=task,
        neighbors=neighbors,
    )
    validate_instance(inst)
    return inst


def instance_to_record(inst: RelationInstance) -> dict:
    record = {
        "id": inst.id,
        "tokens": list(inst.tokens),
        "dep": [
            {"head": h, "label": l} for h, l in zip(inst.dep_head, inst.dep_labels)
        ],
        "entities": [],
        "label": inst.label,
        "task": inst.task,
    }
    for ent in inst.entities:
        item = {
            "eid": ent.eid,
            "kb_ids": list(ent.kb_ids),
            "mentions": [list(m) for m in ent.mentions],
        }
        if ent.mention_kb_ids is not None:
            item["mention_kb_ids"] = list(ent.mention_kb_ids)
        record["entities"].append(item)
    if inst.neighbors is not None:
        record["neighbors"] = [list(row) for row in inst.neighbors]
    return record


SCHEMA_VERSION = 1


def load_dataset(path, schema_version: int = SCHEMA_VERSION) -> list[RelationInstance]:
    """Read a JSONL dataset, rejecting malformed records with line numbers."""
    if schema_version != SCHEMA_VERSION:
        raise DatasetError(f"unsupported dataset schema version {schema_version}")
    instances = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: invalid JSON: {exc}") from None
            try:
                instances.append(instance_from_record(obj))
            except GtrelError as exc:
                raise DatasetError(f"line {line_no}: {exc}") from None
    return instances


def save_dataset(path, instances):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_record(inst), separators=(", ", ": ")))
            fh.write("\n")


def load_nary_graph_export(path):
    """Adapter for the published cross-sentence n-ary graph export format.

    Declared so downstream code has a stable import site; faithful parsing
    of that format is out of scope for this package.
    """
    raise NotImplementedError(
        "importing the published n-ary graph export is a declared stub; "
        "convert to the JSONL schema documented in the README instead"
    )
