import numpy as np
import pytest

from iva.adapter import zero_output
from iva.autodiff import Tensor
from iva.errors import CapacityError
from iva.features import generate_needle_dataset
from iva.host import SEGMENTS, AssembledInput, IvaModel
from iva.training import gradcheck_model

from conftest import randomize_queries, small_config


def inputs(rng, B=2, N=2, P=3, d_v=8, text=3, vocab=12):
    return (rng.standard_normal((B, N, d_v)), rng.standard_normal((B, N, P, d_v)),
            rng.integers(0, vocab, (B, text)))


def test_sequence_length_arithmetic(small_model, rng):
    g, f, text = inputs(rng, N=2, text=3)
    a = small_model.encode(g, f, text)
    assert a.length == 9
    assert list(a.dyn_positions) == [7, 8]
    assert a.spans == {"video": (0, 4), "text": (4, 7), "dynamic": (7, 9), "response": (9, 9)}


def test_empty_text(small_model, rng):
    g, f, _ = inputs(rng, N=3)
    a = small_model.encode(g, f, np.zeros((2, 0), dtype=int))
    assert a.length == 2 * 3 + 2
    assert a.spans["text"] == (6, 6)


def test_segments_partition_the_sequence(small_model, rng):
    g, f, text = inputs(rng)
    a = small_model.encode(g, f, text, response_ids=np.array([[1, 2], [3, 4]]))
    labels = [a.segment_of(t) for t in range(a.length)]
    assert len(labels) == a.length
    # contiguous, in order
    order = [s for i, s in enumerate(labels) if i == 0 or labels[i - 1] != s]
    assert order == [s for s in SEGMENTS if a.spans[s][0] < a.spans[s][1]]
    with pytest.raises(IndexError):
        a.segment_of(a.length)


def test_capacity_error_reports_length(small_model, rng):
    g, f, _ = inputs(rng, N=8)
    with pytest.raises(CapacityError, match="25"):
        small_model.encode(g, f, np.ones((2, 7), dtype=int))


def _perturbed(model, assembled, t, rng):
    emb = assembled.embeddings.data.copy()
    emb[:, t + 1:] += rng.standard_normal(emb[:, t + 1:].shape)
    return AssembledInput(Tensor(emb), assembled.spans)


@pytest.mark.parametrize("use_iva", [True, False])
def test_logits_are_causal(small_model, rng, use_iva):
    g, f, text = inputs(rng)
    a = small_model.encode(g, f, text, response_ids=np.array([[1, 2], [3, 4]]))
    base = small_model.forward(a, g, f, use_iva).data
    for t in range(a.length - 1):
        moved = small_model.forward(_perturbed(small_model, a, t, rng), g, f, use_iva).data
        assert np.array_equal(base[:, :t + 1], moved[:, :t + 1]), t
        assert not np.allclose(base[:, t + 1:], moved[:, t + 1:])


def test_dynamic_tokens_see_every_video_and_text_token(small_model, rng):
    g, f, text = inputs(rng)
    a = small_model.encode(g, f, text)
    base = small_model.forward(a, g, f, use_iva=False).data
    for t in range(a.spans["dynamic"][0]):
        emb = a.embeddings.data.copy()
        emb[:, t] += 1.0 + rng.standard_normal(emb.shape[-1])
        moved = small_model.forward(AssembledInput(Tensor(emb), a.spans), g, f, use_iva=False).data
        assert not np.allclose(base[:, -1], moved[:, -1])


def test_zeroed_adapter_matches_the_baseline(rng):
    cfg = small_config()
    with_iva = IvaModel(cfg, seed=3, iva_out_std=0.5)
    randomize_queries(with_iva)
    baseline = IvaModel(cfg, seed=3, with_iva=False)
    g, f, text = inputs(rng)
    a = with_iva.encode(g, f, text)
    assert not np.array_equal(with_iva.forward(a, g, f).data, baseline.forward(a, g, f).data)
    zero_output(with_iva.iva)
    assert np.array_equal(with_iva.forward(a, g, f).data, baseline.forward(a, g, f).data)
    assert np.array_equal(with_iva.forward(a, g, f).data, with_iva.forward(a, g, f, use_iva=False).data)


def test_full_model_gradcheck_subset():
    cfg = small_config(vocab_size=10, max_seq_len=10, ct_layers=4)
    model = randomize_queries(IvaModel(cfg, seed=0, iva_out_std=0.3))
    sample = generate_needle_dataset(1, 2, 3, 8, 10, seed=3, num_classes=2, num_families=2)[0]
    report = gradcheck_model(model, sample, subset=4, seed=1)
    assert len(report.entries) == len(model.parameters())
    errors = [e for _, e, _ in report.entries]
    assert errors == sorted(errors, reverse=True)
    assert report.max_error < 1e-4


def test_baseline_gradcheck_subset():
    cfg = small_config(vocab_size=10, max_seq_len=10)
    model = IvaModel(cfg, seed=1, with_iva=False)
    sample = generate_needle_dataset(1, 2, 3, 8, 10, seed=4, num_classes=2, num_families=2)[0]
    assert gradcheck_model(model, sample, subset=3, use_iva=False).max_error < 1e-4


def test_generate_zero_tokens(small_model, rng):
    g, f, text = inputs(rng)
    assert small_model.generate(g, f, text, max_new=0).shape == (2, 0)


def test_generate_is_deterministic(rng):
    g, f, text = inputs(rng)
    a = IvaModel(small_config(), seed=5).generate(g, f, text, max_new=4)
    b = IvaModel(small_config(), seed=5).generate(g, f, text, max_new=4)
    assert a.shape == (2, 4) and np.array_equal(a, b)


def test_generate_keeps_dynamic_tokens_before_the_answer(small_model, rng):
    g, f, text = inputs(rng)
    out = small_model.generate(g, f, text, max_new=3)
    a = small_model.encode(g, f, text, response_ids=out[:, :2])
    assert a.spans["dynamic"] == (7, 9) and a.spans["response"] == (9, 11)
    # the third token is the argmax after the first two were fed back
    logits = small_model.forward(a, g, f).data[:, -1]
    assert np.array_equal(logits.argmax(-1), out[:, 2])


def test_generate_overflow_is_a_capacity_error(small_model, rng):
    g, f, text = inputs(rng)
    with pytest.raises(CapacityError):
        small_model.generate(g, f, text, max_new=30)


def test_checkpoint_round_trip(small_model, rng, tmp_path):
    small_model.save(str(tmp_path / "ck"), extra={"stage": 2})
    back = IvaModel.load(str(tmp_path / "ck"))
    g, f, text = inputs(rng)
    a = small_model.encode(g, f, text)
    assert np.array_equal(small_model.forward(a, g, f).data, back.forward(back.encode(g, f, text), g, f).data)
    assert (tmp_path / "ck" / "config.json").exists()
    assert (tmp_path / "ck" / "host.tok_emb.ivat").exists()


def test_tied_embeddings(rng):
    model = IvaModel(small_config(tied_embeddings=True), seed=0)
    assert model.host.head is None
    g, f, text = inputs(rng)
    logits = model.forward(model.encode(g, f, text), g, f)
    assert logits.shape == (2, 9, 12)


def test_parameter_names_are_unique(small_model):
    names = [n for n, _ in small_model.named_parameters()]
    assert len(names) == len(set(names))
    assert all(p.name == n for n, p in small_model.named_parameters())
