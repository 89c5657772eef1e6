import itertools
import math

import numpy as np
import pytest
import torch

from scriptsev.backbones import BackboneConfig
from scriptsev.corpus import Aspect, AspectDataset, SeverityLevel, stratified_split
from scriptsev.embedding import HashEmbedder
from scriptsev.errors import DataError, TrainingError, UnsupportedOperationError
from scriptsev.siamese import (
    LossBreakdown,
    PairSample,
    RankHead,
    RankLabel,
    SiameseModel,
    TrainConfig,
    canonical_rank_probabilities,
    compare,
    cpr,
    joint_step,
    classification_step,
    load_model,
    predict_severity,
    rank_head,
    rank_label_from_probabilities,
    sample_pair,
    save_model,
    train,
)

from conftest import make_dataset, make_instance

L = SeverityLevel
R = RankLabel


def tiny_model(multitask=True, dim=6, hidden=3, seed=0) -> SiameseModel:
    provider = HashEmbedder(dim=dim)
    backbone = BackboneConfig("rnn_trans", input_dim=dim, hidden_dim=hidden)
    model = SiameseModel(
        aspect=Aspect.PROFANITY,
        backbone=backbone,
        source=provider,
        multitask=multitask,
        seed=seed,
    )
    from scriptsev.backbones import init_parameters

    init_parameters(model.net, seed)
    return model


def tiny_split_dataset(n=24) -> AspectDataset:
    ds = make_dataset([L(i % 4) for i in range(n)])
    return stratified_split(ds, seed=1)


# ---------------------------------------------------------------------------
# cpr and rank labels
# ---------------------------------------------------------------------------


def test_cpr_exhaustive_table():
    for a, b in itertools.product(L, repeat=2):
        got = cpr(a, b)
        if a < b:
            assert got is R.LOWER
        elif a > b:
            assert got is R.HIGHER
        else:
            assert got is R.EQUAL


def test_cpr_antisymmetric_and_reflexive():
    for a, b in itertools.product(L, repeat=2):
        assert cpr(a, b) is cpr(b, a).swapped()
    for a in L:
        assert cpr(a, a) is R.EQUAL


def test_cpr_transitivity_consistency():
    # over all 64 triples: LOWER chains stay LOWER, EQUAL is neutral
    for a, b, c in itertools.product(L, repeat=3):
        ab, bc, ac = cpr(a, b), cpr(b, c), cpr(a, c)
        if ab is R.LOWER and bc in (R.LOWER, R.EQUAL):
            assert ac is R.LOWER
        if ab is R.HIGHER and bc in (R.HIGHER, R.EQUAL):
            assert ac is R.HIGHER
        if ab is R.EQUAL and bc is R.EQUAL:
            assert ac is R.EQUAL


def test_rank_label_swapped():
    assert R.LOWER.swapped() is R.HIGHER
    assert R.HIGHER.swapped() is R.LOWER
    assert R.EQUAL.swapped() is R.EQUAL


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------


def test_pair_sample_validates_rank_and_aspect():
    left = make_instance("m1", L.MILD)
    right = make_instance("m2", L.SEVERE)
    pair = PairSample.of(left, right)
    assert pair.rank is R.LOWER
    with pytest.raises(DataError):
        PairSample(left=left, right=right, rank=R.EQUAL)
    other = make_instance("m3", L.MILD, aspect=Aspect.SEX)
    with pytest.raises(DataError):
        PairSample.of(left, other)


def test_sample_pair_two_instances():
    ds = AspectDataset(
        aspect=Aspect.PROFANITY,
        instances=[make_instance("m1", L.MILD), make_instance("m2", L.SEVERE)],
    )
    pair = sample_pair(ds, np.random.default_rng(0))
    assert {pair.left.movie_id, pair.right.movie_id} == {"m1", "m2"}
    assert pair.rank is cpr(pair.left.label, pair.right.label)


def test_sample_pair_deterministic_and_distinct():
    ds = make_dataset([L(i % 4) for i in range(10)])
    seq_a = [sample_pair(ds, np.random.default_rng(42)) for _ in range(1)]
    rng1, rng2 = np.random.default_rng(42), np.random.default_rng(42)
    for _ in range(50):
        p1, p2 = sample_pair(ds, rng1), sample_pair(ds, rng2)
        assert (p1.left.movie_id, p1.right.movie_id) == (p2.left.movie_id, p2.right.movie_id)
        assert p1.left.movie_id != p1.right.movie_id
    with pytest.raises(DataError):
        sample_pair(make_dataset([L.MILD]), np.random.default_rng(0))


# ---------------------------------------------------------------------------
# ranking head
# ---------------------------------------------------------------------------


def test_rank_head_shape_and_bias():
    head = RankHead(8)
    with torch.no_grad():
        head.linear.weight.zero_()
        head.linear.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
    u, v = torch.zeros(5, 8), torch.zeros(5, 8)
    logits = rank_head(u, v, head)
    assert logits.shape == (5, 3)
    np.testing.assert_allclose(logits[0].detach().numpy(), [1.0, 2.0, 3.0])


def test_rank_head_width_mismatch():
    head = RankHead(8)
    with pytest.raises(DataError):
        rank_head(torch.zeros(1, 4), torch.zeros(1, 4), head)
    with pytest.raises(DataError):
        head(torch.zeros(1, 8), torch.zeros(1, 4))


def test_rank_head_equal_inputs_zero_third_block():
    head = RankHead(4)
    u = torch.randn(3, 4)
    feats = torch.cat([u, u, (u - u).abs()], dim=-1)
    assert torch.all(feats[:, 8:] == 0)


# ---------------------------------------------------------------------------
# joint and classification steps
# ---------------------------------------------------------------------------


def zeroed(model: SiameseModel) -> SiameseModel:
    with torch.no_grad():
        for p in model.net.parameters():
            p.zero_()
    return model


def test_joint_step_uniform_logit_losses():
    model = zeroed(tiny_model())
    batch = [
        PairSample.of(make_instance("m1", L.MILD), make_instance("m2", L.SEVERE)),
        PairSample.of(make_instance("m3", L.NONE), make_instance("m4", L.NONE)),
    ]
    optimizer = torch.optim.SGD(model.net.parameters(), lr=0.0)
    breakdown = joint_step(model, batch, optimizer)
    assert breakdown.l_c == pytest.approx(math.log(4), abs=1e-6)
    assert breakdown.l_r == pytest.approx(math.log(3), abs=1e-6)
    assert breakdown.total == breakdown.l_c + breakdown.l_r
    assert breakdown.total == pytest.approx(2.4849, abs=1e-3)


def test_joint_step_rejects_bad_batches():
    model = tiny_model()
    optimizer = torch.optim.SGD(model.net.parameters(), lr=0.0)
    with pytest.raises(DataError):
        joint_step(model, [], optimizer)
    other = PairSample.of(
        make_instance("m1", L.MILD, aspect=Aspect.SEX),
        make_instance("m2", L.SEVERE, aspect=Aspect.SEX),
    )
    with pytest.raises(DataError):
        joint_step(model, [other], optimizer)


def test_joint_step_nonfinite_loss_aborts():
    model = tiny_model()
    with torch.no_grad():
        model.net.cls_head.linear.bias.fill_(float("inf"))
    batch = [PairSample.of(make_instance("m1", L.MILD), make_instance("m2", L.SEVERE))]
    optimizer = torch.optim.SGD(model.net.parameters(), lr=0.0)
    with pytest.raises(TrainingError, match="non-finite"):
        joint_step(model, batch, optimizer)


def test_zero_rank_weight_matches_classification_only_gradients():
    # detaching the ranking loss leaves classification gradients identical
    pairs = [
        PairSample.of(make_instance("m1", L.MILD), make_instance("m2", L.SEVERE)),
        PairSample.of(make_instance("m3", L.NONE), make_instance("m4", L.MODERATE)),
    ]
    singles = [p.left for p in pairs] + [p.right for p in pairs]

    model_a = tiny_model(seed=9)
    model_b = tiny_model(seed=9)
    opt_a = torch.optim.Adam(model_a.net.parameters(), lr=1e-3)
    opt_b = torch.optim.Adam(model_b.net.parameters(), lr=1e-3)

    joint_step(model_a, pairs, opt_a, rank_loss_weight=0.0)
    classification_step(model_b, singles, opt_b)

    params_a = dict(model_a.net.named_parameters())
    params_b = dict(model_b.net.named_parameters())
    for name, pb in params_b.items():
        if "rank_head" in name:
            continue
        assert torch.equal(params_a[name], pb), name
    # the untouched ranking head received zero gradient and did not move
    fresh = tiny_model(seed=9)
    for name, p in model_a.net.named_parameters():
        if "rank_head" in name:
            assert torch.equal(p, dict(fresh.net.named_parameters())[name])


def test_loss_breakdown_total_is_exact_sum():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        lc, lr = float(rng.random() * 3), float(rng.random() * 3)
        b = LossBreakdown.of(lc, lr)
        assert b.total == b.l_c + b.l_r


# ---------------------------------------------------------------------------
# tied weights
# ---------------------------------------------------------------------------


def test_encoder_storage_is_shared_across_branches():
    model = tiny_model()
    names = [n for n, _ in model.net.named_parameters() if n.startswith("encoder.")]
    assert len(names) == len(set(names))
    ptrs = {p.data_ptr() for n, p in model.net.named_parameters() if n.startswith("encoder.")}
    assert len(ptrs) == len(names)  # one storage per parameter, no duplicates

    doc = make_instance("m1", L.MILD).document
    reps = model.encode_batch([doc, doc])
    np.testing.assert_array_equal(reps[0], reps[1])

    # mutating the shared encoder changes both branch encodings identically
    with torch.no_grad():
        next(model.net.encoder.parameters()).add_(0.25)
    reps2 = model.encode_batch([doc, doc])
    np.testing.assert_array_equal(reps2[0], reps2[1])
    assert not np.array_equal(reps[0], reps2[0])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_train_requires_split_and_nonempty_parts():
    ds = make_dataset([L(i % 4) for i in range(12)])
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    with pytest.raises(TrainingError, match="split"):
        train(TrainConfig(seed=0, max_epochs=1), ds, backbone, True, HashEmbedder(dim=6))


def test_train_is_bitwise_deterministic():
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    config = TrainConfig(seed=5, max_epochs=3, patience=3, batch_size=4)
    model_a = train(config, ds, backbone, True, HashEmbedder(dim=6))
    model_b = train(config, ds, backbone, True, HashEmbedder(dim=6))
    for (na, pa), (nb, pb) in zip(
        model_a.net.named_parameters(), model_b.net.named_parameters()
    ):
        assert na == nb and torch.equal(pa, pb), na
    assert model_a.metrics_lines == model_b.metrics_lines


def test_train_early_stops_within_patience():
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    config = TrainConfig(seed=5, max_epochs=30, patience=2, batch_size=4)
    model = train(config, ds, backbone, True, HashEmbedder(dim=6))
    # parse the metrics log: the last epoch is at most best_epoch + patience
    rows = [line.split(",") for line in model.metrics_lines[1:]]
    dev = [float(r[3]) for r in rows]
    best_epoch = int(np.argmax(dev)) + 1
    assert len(rows) <= best_epoch + config.patience
    assert model.best_dev_macro_f1 == pytest.approx(max(dev))


def test_train_metrics_log_format(tmp_path):
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    log_path = tmp_path / "metrics.csv"
    model = train(
        TrainConfig(seed=5, max_epochs=2, patience=2, batch_size=4),
        ds, backbone, True, HashEmbedder(dim=6), log_path=log_path,
    )
    lines = log_path.read_text().splitlines()
    assert lines[0] == "epoch,l_c,l_r,dev_macro_f1"
    for i, line in enumerate(lines[1:], start=1):
        epoch, lc, lr, f1 = line.split(",")
        assert int(epoch) == i
        assert all(math.isfinite(float(x)) for x in (lc, lr, f1))


def test_classification_only_model_rejects_compare():
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    model = train(
        TrainConfig(seed=5, max_epochs=1, batch_size=4), ds, backbone, False,
        HashEmbedder(dim=6),
    )
    doc = ds.instances[0].document
    with pytest.raises(UnsupportedOperationError):
        compare(model, doc, doc)
    level, probs = predict_severity(model, doc)
    assert isinstance(level, SeverityLevel) and probs.shape == (4,)


# ---------------------------------------------------------------------------
# prediction and comparison
# ---------------------------------------------------------------------------


def test_predict_argmax_and_tie_rule():
    model = zeroed(tiny_model())
    with torch.no_grad():
        model.net.cls_head.linear.bias.copy_(torch.tensor([0.1, 0.2, 0.3, 0.4]))
    doc = make_instance("m1", L.MILD).document
    level, probs = predict_severity(model, doc)
    assert level is L.SEVERE
    assert probs.shape == (4,) and probs.sum() == pytest.approx(1.0)

    with torch.no_grad():
        model.net.cls_head.linear.bias.copy_(torch.tensor([0.7, 0.7, 0.1, 0.1]))
    level2, probs2 = predict_severity(model, doc)
    assert probs2[0] == probs2[1]
    assert level2 is L.NONE  # ties break toward the lowest severity


def test_canonical_probabilities_worked_example():
    p_ab = np.array([0.6, 0.3, 0.1])
    p_ba = np.array([0.2, 0.3, 0.5])
    # brute-force arithmetic: average with the swap of the reverse pass
    expected = (p_ab + p_ba[::-1]) / 2
    got = canonical_rank_probabilities(p_ab, p_ba)
    np.testing.assert_allclose(got, expected)
    np.testing.assert_allclose(got, [0.55, 0.3, 0.15])
    assert rank_label_from_probabilities(got) is R.LOWER


def test_rank_label_tie_breaks_to_equal():
    assert rank_label_from_probabilities(np.array([0.4, 0.2, 0.4])) is R.EQUAL
    assert rank_label_from_probabilities(np.array([0.4, 0.4, 0.2])) is R.EQUAL
    assert rank_label_from_probabilities(np.array([1, 1, 1]) / 3) is R.EQUAL
    assert rank_label_from_probabilities(np.array([0.5, 0.3, 0.2])) is R.LOWER


def test_compare_mirror_symmetry_and_self_equality():
    model = tiny_model()
    doc_a = make_instance("m1", L.MILD, texts=["alpha beta", "gamma"]).document
    doc_b = make_instance("m2", L.SEVERE, texts=["delta epsilon zeta", "eta", "theta"]).document
    label_ab, p_ab = compare(model, doc_a, doc_b)
    label_ba, p_ba = compare(model, doc_b, doc_a)
    np.testing.assert_array_equal(p_ab, p_ba[::-1])
    assert label_ab is label_ba.swapped()

    label_self, p_self = compare(model, doc_a, doc_a)
    assert p_self[0] == p_self[2]
    assert label_self is R.EQUAL


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    model = train(
        TrainConfig(seed=5, max_epochs=2, patience=2, batch_size=4),
        ds, backbone, True, HashEmbedder(dim=6),
    )
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.aspect == model.aspect
    assert loaded.multitask == model.multitask
    assert loaded.best_dev_macro_f1 == pytest.approx(model.best_dev_macro_f1)
    for (na, pa), (nb, pb) in zip(
        model.net.named_parameters(), loaded.net.named_parameters()
    ):
        assert na == nb and torch.equal(pa, pb)
    doc = ds.instances[0].document
    level_a, probs_a = predict_severity(model, doc)
    level_b, probs_b = predict_severity(loaded, doc)
    assert level_a == level_b
    np.testing.assert_array_equal(probs_a, probs_b)


def test_save_is_byte_stable(tmp_path):
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    config = TrainConfig(seed=5, max_epochs=2, patience=2, batch_size=4)
    m1 = train(config, ds, backbone, True, HashEmbedder(dim=6))
    m2 = train(config, ds, backbone, True, HashEmbedder(dim=6))
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(m1, p1)
    save_model(m2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a model")
    with pytest.raises(DataError, match="magic"):
        load_model(path)
    with pytest.raises(DataError, match="not found"):
        load_model(tmp_path / "missing.bin")


def test_load_rejects_truncated_params(tmp_path):
    ds = tiny_split_dataset()
    backbone = BackboneConfig("rnn_trans", input_dim=6, hidden_dim=3)
    model = train(
        TrainConfig(seed=5, max_epochs=1, batch_size=4), ds, backbone, True,
        HashEmbedder(dim=6),
    )
    path = tmp_path / "model.bin"
    save_model(model, path)
    blob = path.read_bytes()
    (tmp_path / "trunc.bin").write_bytes(blob[:-10])
    with pytest.raises(DataError, match="truncated"):
        load_model(tmp_path / "trunc.bin")
