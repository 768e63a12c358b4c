import math

import pytest

import semfuse

TINY = {"model": {"d_model": 16, "layers": 1, "heads": 2, "ffn": 32}, "train": {"epochs": 1, "batch": 32}}


def test_membership_matches_closed_form():
    assert semfuse.membership(0.6, 0.6, 0.35) == 1.0
    for x in (0.0, 0.2, 0.8, 1.0):
        expected = [0.9 ** (abs(x - c) / 0.35) for c in (0.2, 0.6, 1.0)]
        assert semfuse.tri(x) == pytest.approx(expected, abs=1e-12)


def test_vocabulary_and_features():
    vocab = semfuse.vocabulary()
    assert len(vocab) == 40
    assert vocab[:3] == ["<pad>", "<bos>", "<eos>"]
    assert len(semfuse.feature_names()) == 22


def test_corpus_is_deterministic_and_hides_heldout_adjectives():
    train, val = semfuse.generate_corpus(3, 200, 50)
    assert (train, val) == semfuse.generate_corpus(3, 200, 50)
    assert len(train) == 200 and len(val) == 50
    heldout = {"great", "excellent", "wonderful", "terrible", "awful", "unpleasant"}
    assert not any(set(s.split()) & heldout for s in train)


def test_mixture_distribution_floor():
    logits = [0.0] * 40
    logits[24] = 9.0
    q = semfuse.mixture_distribution(logits, [24, 25, 26, 27, 28], 1.5, 0.97)
    assert sum(q) == pytest.approx(1.0)
    assert min(q) >= 0.97 / 5


def test_grad_check():
    assert semfuse.grad_check(seed=2, coords=64) < 1e-3


@pytest.fixture(scope="module")
def tiny_model():
    model, curve = semfuse.train("fusion", TINY, data_seed=4, n_train=200, n_val=40, seed=2)
    return model, curve


def test_train_generate_evaluate(tiny_model, tmp_path):
    model, curve = tiny_model
    assert model.variant == "fusion"
    assert len(curve) == 1 and math.isfinite(curve[0]["val_ppl"])

    lines = model.generate(n=5, seed=7, preset="pos-strong")
    assert lines == model.generate(n=5, seed=7, preset="pos-strong")
    positive = {"good", "great", "excellent", "pleasant", "wonderful"}
    for line in lines:
        tokens = line.split()
        assert len(tokens) == 8 and tokens[6] in positive and tokens[7] == "!"

    report = model.evaluate(data_seed=4, n_val=40)
    assert report["ppl"] > 1.0
    assert report["sem_mse"] is not None
    assert set(report["focus"]) >= {"!", "?"}

    path = tmp_path / "tiny.sflm"
    model.save(path)
    again = semfuse.Model.load(path)
    assert again.generate(n=3, seed=1) == model.generate(n=3, seed=1)


def test_errors_are_typed(tiny_model, tmp_path):
    model, _ = tiny_model
    with pytest.raises(semfuse.GrammarError, match="position 2"):
        model.generate(prefix="Carol Carol")
    with pytest.raises(semfuse.ConfigError):
        model.generate(preset="loud")
    with pytest.raises(semfuse.DataError):
        semfuse.Model.load(tmp_path / "missing.sflm")
    with pytest.raises(semfuse.ConfigError):
        semfuse.train("fusion", {"train": {"epochs": 0}}, n_train=10, n_val=5)
