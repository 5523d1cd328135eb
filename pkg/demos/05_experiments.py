"""Evaluation harness: k-fold cross-validation, paired significance tests,
and the neighbor-cap sweep, on deliberately tiny settings so the whole
script runs in about a minute.
"""

from gtrel.data import TASK_LABELS
from gtrel.encoder import EncoderConfig
from gtrel.experiments import kfold, paired_t_test, significance_test, sweep_neighbor_cap, sweep_to_csv
from gtrel.model import ModelConfig
from gtrel.synth import generate_synthetic
from gtrel.training import TrainSpec

data = generate_synthetic(60, seed=11)
config = ModelConfig(
    encoder=EncoderConfig(width=16, n_heads=2, ffn_width=32, n_transformer_blocks=1,
                          n_graph_blocks=1, vocab_size=2),
    label_set=tuple(TASK_LABELS["nary2"]),
    entity_slots=("AGENT", "TARGET"),
)
spec = TrainSpec(seed=3, epochs=4, batch_size=8, learning_rate=1e-3, validation_size=0)

# --- k-fold -------------------------------------------------------------------

result = kfold(data, k=3, spec=spec, cfg=config)
print("3-fold cross-validation:")
for name, mean in result.mean.items():
    print(f"  {name:16} {mean:.3f} +/- {result.std[name]:.3f}")

# --- paired t-test on hand scores ----------------------------------------------

print("\npaired t-test on two score vectors:")
outcome = paired_t_test(
    [0.81, 0.79, 0.83, 0.80, 0.82], [0.74, 0.76, 0.75, 0.73, 0.77], metric="accuracy"
)
print(f"  t = {outcome.t_stat:.3f}, p = {outcome.p_value:.4f}")

# --- full paired significance run (two configs, shared partitions) -------------

print("\nresampled significance test, dual encoder vs text-only ablation:")
ablation = ModelConfig(
    encoder=config.encoder, label_set=config.label_set,
    entity_slots=config.entity_slots, gt_branch_enabled=False,
)
sig = significance_test(data, config, ablation, spec,
                        partitions=4, train_size=40, test_size=20)
print(f"  per-partition {sig.metric}: A={sig.scores_a} B={sig.scores_b}")
print(f"  mean diff {sig.mean_diff:+.3f}, t = {sig.t_stat:.3f}, p = {sig.p_value:.4f}")

# --- neighbor-cap sweep ---------------------------------------------------------

print("\nneighbor-cap sweep (shared seed per cap):")
rows = sweep_neighbor_cap(data, caps=[1, 2, 4, 8], spec=spec, cfg=config)
print(sweep_to_csv(rows))
