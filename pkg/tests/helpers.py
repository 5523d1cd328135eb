"""Shared scenario builders for the test suite."""

from dataclasses import replace

from gtrel.data import Entity, RelationInstance, Vocab, build_model_inputs
from gtrel.encoder import EncoderConfig
from gtrel.model import Model, ModelConfig, init_model_params, prepare_instance
from gtrel.rng import derive_rng, truncated_normal


def gradcheck_scenario(seed=5, init_std=0.3):
    """Tiny full model for finite-difference verification.

    Width 8, 2 heads, one block per stack, two 2-entity instances of 5 rows
    (4 tokens + classifier token), 3 labels. Matrix parameters are drawn at
    ``init_std`` so every coordinate's gradient sits well above the float64
    central-difference noise floor; biases and norms keep their defaults.
    """
    insts = [
        RelationInstance(
            "g0", ("alpha", "beta", "gamma", "delta"), (1, 1, 1, 2), ("dep",) * 4,
            (Entity("E1", (), ((0, 1),)), Entity("E2", (), ((3, 4),))),
            "response", "nary5",
        ),
        RelationInstance(
            "g1", ("delta", "beta", "alpha", "gamma"), (0, 0, 1, 0), ("dep",) * 4,
            (Entity("E1", (), ((1, 2),)), Entity("E2", (), ((2, 3),))),
            "none", "nary5",
        ),
    ]
    cfg = ModelConfig(
        encoder=EncoderConfig(
            width=8, n_heads=2, ffn_width=16, n_transformer_blocks=1,
            n_graph_blocks=1, dropout_rate=0.0, max_len=8, vocab_size=2,
        ),
        label_set=("resistance", "response", "none"),
        entity_slots=("E1", "E2"),
    )
    vocab = Vocab.build(insts)
    cfg = replace(cfg, encoder=replace(cfg.encoder, vocab_size=vocab.size))
    params = init_model_params(cfg, derive_rng(seed, "init"))
    redraw = derive_rng(seed, "reinit")
    for _, tensor in params.named_tensors():
        if tensor.data.ndim == 2:
            tensor.data = truncated_normal(tensor.data.shape, init_std, redraw)
    model = Model(cfg, vocab, params)
    prepared = [
        prepare_instance(inst, graph, vocab, cfg, src)
        for inst, graph, src in build_model_inputs(insts)
    ]
    return model, prepared
