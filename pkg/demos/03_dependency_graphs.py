"""Instance model and the dependency-neighbor construction rules.

A relation instance carries tokens, one dependency head per token (roots
point at themselves; sentence roots are chained so paths cross sentence
boundaries), entity mentions with optional knowledge-base ids, and a gold
label. This script walks the neighbor rules, shortest paths, entity
expansion, and the five-class -> binary label collapse.
"""

from gtrel.data import (
    Entity,
    RelationInstance,
    build_neighbors,
    collapse_to_binary,
    expand_entities,
    shortest_path,
)

#             0     1      2       3      4      5     6      7
tokens = ("mutations", "in", "EGFR", "reduce", "response", "to", "gefitinib", ".")
#  a small two-entity sentence; head indices point at each token's parent
heads = (3, 0, 1, 3, 3, 4, 5, 3)  # token 3 ("reduce") is the root

inst = RelationInstance(
    id="demo-1",
    tokens=tokens,
    dep_head=heads,
    dep_labels=("nsubj", "prep", "pobj", "root", "dobj", "prep", "pobj", "punct"),
    entities=(
        Entity("GENE", ("HGNC:3236",), ((2, 3),)),
        Entity("DRUG", ("CHEBI:49668", "MESH:D000068877"), ((6, 7),)),
    ),
    label="response",
    task="nary5",
)

print("dependency shortest path GENE(2) -> DRUG(6):",
      shortest_path(heads, 2, 6), "\n")

graph = build_neighbors(inst)
for i, row in enumerate(graph.neighbors):
    marker = ""
    if i == 2:
        marker = "   <- GENE gains the path tokens"
    if i == 6:
        marker = "   <- DRUG gains the path tokens"
    print(f"neighbors({i} {tokens[i]!r:12}) = {sorted(row)}{marker}")

capped = build_neighbors(inst, max_neighbors=3)
print("\nwith a cap of 3 (self > headword > adjacent > path):")
print("neighbors(2) =", sorted(capped.neighbors[2]))

# --- entity expansion: one instance per kb-id combination --------------------

expanded = expand_entities(inst)
print(f"\nDRUG has 2 ids -> {len(expanded)} instances after expansion:")
for e in expanded:
    print(" ", e.id, [ent.kb_ids for ent in e.entities])

# --- label collapse -----------------------------------------------------------

print("\nfive-class -> binary collapse:")
for label in ("resistance or nonresponse", "sensitivity", "response", "resistance", "none"):
    print(f"  {label!r} -> {collapse_to_binary(label)!r}")
