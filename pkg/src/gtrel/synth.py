"""Synthetic corpus where the label is a pure function of graph structure.

Each instance has 2-3 "sentences" with a random dependency tree apiece,
two single-token entities, and exactly one trigger token in every instance.
The label is "yes" iff the trigger lies on the undirected dependency
shortest path between the two entity mentions. Because the trigger occurs
in every instance and token positions are randomized, bag-of-tokens models
have no signal; the dependency structure carries all of it. Labels are
balanced and the whole corpus is a deterministic function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .data import Entity, RelationInstance, shortest_path, validate_instance
from .errors import ConfigError
from .rng import derive_rng

AGENT_SLOT = "AGENT"
TARGET_SLOT = "TARGET"
AGENT_WORD = "agent"
TARGET_WORD = "target"
TRIGGER_WORD = "trigger"


@dataclass
class SyntheticSpec:
    n_fillers: int = 20
    min_tokens: int = 10
    max_tokens: int = 30
    min_sentences: int = 2
    max_sentences: int = 3

    def validate(self):
        if self.n_fillers < 2:
            raise ConfigError("need at least two filler words")
        if not 1 <= self.min_sentences <= self.max_sentences:
            raise ConfigError("bad sentence count range")
        if self.min_tokens < 3 * self.max_sentences or self.min_tokens > self.max_tokens:
            raise ConfigError("token range must allow >= 3 tokens per sentence")


def gold_label(tokens, dep_head, agent_span, target_span) -> str:
    """Recompute the planted label from the emitted structure alone."""
    path = set()
    for a in range(agent_span[0], agent_span[1]):
        for b in range(target_span[0], target_span[1]):
            path.update(shortest_path(dep_head, a, b))
    on_path = any(tokens[t] == TRIGGER_WORD for t in path)
    return "yes" if on_path else "no"


def check_instance_label(inst: RelationInstance) -> bool:
    """True when the stored label matches the structural label function."""
    spans = {ent.eid: ent.mentions[0] for ent in inst.entities}
    return inst.label == gold_label(
        inst.tokens, inst.dep_head, spans[AGENT_SLOT], spans[TARGET_SLOT]
    )


def _random_sentence_trees(rng, n_tokens, n_sentences):
    """Random dependency forest: one tree per sentence over a shuffled order,
    so linear adjacency carries no information about tree structure."""
    sizes = [n_tokens // n_sentences] * n_sentences
    for i in range(n_tokens % n_sentences):
        sizes[i] += 1
    dep_head = [0] * n_tokens
    start = 0
    for size in sizes:
        positions = [start + int(p) for p in rng.permutation(size)]
        dep_head[positions[0]] = positions[0]
        for j in range(1, size):
            dep_head[positions[j]] = positions[int(rng.integers(0, j))]
        start += size
    return dep_head


def _make_instance(rng, index: int, want_yes: bool, spec: SyntheticSpec) -> RelationInstance | None:
    n_sentences = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
    n_tokens = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    dep_head = _random_sentence_trees(rng, n_tokens, n_sentences)

    agent, target = (int(p) for p in rng.choice(n_tokens, size=2, replace=False))
    path = shortest_path(dep_head, agent, target)
    interior = [t for t in path if t not in (agent, target)]
    off_path = [t for t in range(n_tokens) if t not in path]
    if want_yes:
        if not interior:
            return None
        trigger = int(interior[int(rng.integers(0, len(interior)))])
    else:
        if not off_path:
            return None
        trigger = int(off_path[int(rng.integers(0, len(off_path)))])

    fillers = rng.integers(0, spec.n_fillers, size=n_tokens)
    tokens = [f"w{int(f):02d}" for f in fillers]
    tokens[agent] = AGENT_WORD
    tokens[target] = TARGET_WORD
    tokens[trigger] = TRIGGER_WORD

    inst = RelationInstance(
        id=f"synth-{index:05d}",
        tokens=tuple(tokens),
        dep_head=tuple(dep_head),
        dep_labels=tuple("root" if dep_head[i] == i else "dep" for i in range(n_tokens)),
        entities=(
            Entity(AGENT_SLOT, (), ((agent, agent + 1),)),
            Entity(TARGET_SLOT, (), ((target, target + 1),)),
        ),
        label="yes" if want_yes else "no",
        task="nary2",
    )
    validate_instance(inst)
    return inst


def generate_synthetic(n_instances: int, seed: int,
                       spec: SyntheticSpec | None = None) -> list[RelationInstance]:
    """Balanced synthetic dataset: positives first at even indices.

    Instance i is "yes" iff i is even, so any prefix is near-balanced and
    n=2 yields exactly one of each.
    """
    if n_instances < 2:
        raise ConfigError(f"need at least 2 instances, got {n_instances}")
    spec = spec or SyntheticSpec()
    spec.validate()
    out = []
    for i in range(n_instances):
        want_yes = i % 2 == 0
        attempt = 0
        while True:
            rng = derive_rng(seed, "synth", i, attempt)
            inst = _make_instance(rng, i, want_yes, spec)
            if inst is not None:
                break
            attempt += 1
        out.append(inst)
    return out
