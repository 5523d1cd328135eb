"""Train the dual encoder on the synthetic graph-signal task.

The generator plants a trigger word in every instance; the label is "yes"
iff the trigger sits on the dependency shortest path between the two entity
mentions. Token positions are randomized, so a bag-of-tokens model has no
signal; the neighbor-attention branch, which sees the dependency structure,
learns the rule quickly. This trains a reduced model for about a minute.
"""

from gtrel.data import TASK_LABELS
from gtrel.encoder import EncoderConfig
from gtrel.metrics import evaluate_model
from gtrel.model import ModelConfig
from gtrel.synth import generate_synthetic
from gtrel.training import TrainSpec, train

data = generate_synthetic(320, seed=101)
train_set, test_set = data[:256], data[256:]
print(f"{len(train_set)} train / {len(test_set)} test instances")
print("one instance:", " ".join(train_set[0].tokens[:12]), "...")
print("label:", train_set[0].label, "\n")

config = ModelConfig(
    encoder=EncoderConfig(width=32, n_heads=4, ffn_width=64, vocab_size=2),
    label_set=tuple(TASK_LABELS["nary2"]),
    entity_slots=("AGENT", "TARGET"),
)
spec = TrainSpec(seed=7, epochs=15, batch_size=16, learning_rate=1e-3,
                 validation_size=0, early_stop_loss=0.05)

print("training the full dual encoder...")
result = train(train_set, spec, config)
for row in result.curve:
    print(f"  epoch {row['epoch']:2d}  loss {row['mean_loss']:.4f}")
report, _ = evaluate_model(result.model, test_set)
print(f"dual encoder test accuracy: {report.all.accuracy:.3f}\n")

print("training the text-only ablation (graph branch zeroed)...")
ablated = train(train_set, spec, ModelConfig(
    encoder=config.encoder, label_set=config.label_set,
    entity_slots=config.entity_slots, gt_branch_enabled=False,
))
ablation_report, _ = evaluate_model(ablated.model, test_set)
print(f"ablation test accuracy:     {ablation_report.all.accuracy:.3f}")
print(f"graph-signal advantage:     "
      f"{(report.all.accuracy - ablation_report.all.accuracy) * 100:.1f} points")
