import hashlib
import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from debias import autodiff as ad
from debias import nn
from debias.errors import CheckpointError, ConfigError, DivergenceError, ObjectiveError, ShapeError
from debias.nn import HeadKind, HeadSpec
from debias.train import (
    Batch,
    TrainConfig,
    checkpoint_from_training,
    evaluate_split,
    forward,
    load_checkpoint,
    minimax_loss,
    save_checkpoint,
    train,
)

TASK_HEAD = HeadSpec(HeadKind.MLP1, hidden=8)


def model(n, seed=0):
    spec = nn.ModelSpec(vocab_size=44, k=8, embed_dim=6, task_head=TASK_HEAD, adversaries=n)
    return nn.init_params(spec, seed)


def task_loss(params, batch):
    e_h = nn.encode_batch(params, batch.hypotheses)
    e_p = nn.encode_batch(params, batch.premises)
    logits = nn.task_logits(params, TASK_HEAD, nn.combine(e_h, e_p))
    return ad.mean(ad.softmax_cross_entropy(logits, batch.labels))


def adversary_loss(params, batch, i):
    """Adversary cross-entropy without gradient reversal"""
    e_h = nn.encode_batch(params, batch.hypotheses)
    return ad.mean(ad.softmax_cross_entropy(nn.adversary_logits(params, i, nn.LINEAR, e_h), batch.labels))


def unreversed_loss(params, batch, lam, n):
    """The minimax objective with the reversal node replaced by identity"""
    e_h = nn.encode_batch(params, batch.hypotheses)
    e_p = nn.encode_batch(params, batch.premises)
    task = ad.mean(ad.softmax_cross_entropy(nn.task_logits(params, TASK_HEAD, nn.combine(e_h, e_p)), batch.labels))
    shared = ad.identity(e_h)
    total = None
    for i in range(n):
        term = ad.softmax_cross_entropy(nn.adversary_logits(params, i, nn.LINEAR, shared), batch.labels)
        total = term if total is None else ad.add(total, term)
    return ad.add(ad.scale(task, 1.0 - lam), ad.scale(ad.mean(total), lam / n))


def gradients(params, loss):
    params.zero_grad()
    ad.backward(loss)
    grads = {p.name: p.grad.copy() for p in params}
    params.zero_grad()
    return grads


@pytest.fixture
def batch(tiny_corpus):
    return Batch.of(tiny_corpus.train[:16])


class TestObjective:
    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_value_decomposes(self, batch, lam, n):
        params = model(n)
        expected = (1 - lam) * float(task_loss(params, batch).value)
        if lam > 0:
            expected += lam / n * sum(float(adversary_loss(params, batch, i).value) for i in range(n))
        assert float(minimax_loss(params, batch, lam, n, TASK_HEAD).value) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_gradient_flows_separate(self, batch, lam, n):
        params = model(n)
        combined = gradients(params, minimax_loss(params, batch, lam, n, TASK_HEAD))
        task = gradients(params, task_loss(params, batch))
        adversary = {name: np.zeros_like(g) for name, g in task.items()}
        for i in range(n):
            for name, g in gradients(params, adversary_loss(params, batch, i)).items():
                adversary[name] += g

        for name in params.names():
            if name.startswith("encoder."):
                expected = (1 - lam) * task[name] - lam / n * adversary[name]
            elif name.startswith("task."):
                expected = (1 - lam) * task[name]
            else:
                # adversaries descend their own cross-entropy
                expected = lam / n * adversary[name]
            np.testing.assert_allclose(combined[name], expected, rtol=1e-9, atol=1e-12, err_msg=name)

    def test_adversary_sees_only_hypothesis(self, batch):
        params = model(2)
        grads = gradients(params, adversary_loss(params, batch, 0))
        assert np.all(grads["task.layer0.weight"] == 0.0)
        assert np.all(grads["adversary.1.layer0.weight"] == 0.0)

    def test_gradient_check(self, tiny_corpus):
        params = model(2)
        small = Batch.of(tiny_corpus.train[:4])
        checked = [
            params["adversary.0.layer0.weight"],
            params["task.layer1.bias"],
            params["encoder.projection"],
            params["encoder.embedding"],
        ]
        assert ad.gradient_check(lambda: unreversed_loss(params, small, 0.4, 2), checked) < 1e-4

    @pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
    def test_reversal_negates_encoder_gradient(self, batch, scale):
        params = model(1)

        def adversary_term(wrap):
            e_h = wrap(nn.encode_batch(params, batch.hypotheses))
            return ad.mean(ad.softmax_cross_entropy(nn.adversary_logits(params, 0, nn.LINEAR, e_h), batch.labels))

        plain = gradients(params, adversary_term(ad.identity))
        reversed_ = gradients(params, adversary_term(lambda x: ad.grad_reverse(x, ad.ReversalCoefficient(scale))))
        for name in params.names():
            expected = -scale * plain[name] if name.startswith("encoder.") else plain[name]
            np.testing.assert_allclose(reversed_[name], expected, rtol=0, atol=1e-12, err_msg=name)

    def test_objective_matches_unreversed_value(self, batch):
        params = model(3)
        reversed_ = float(minimax_loss(params, batch, 0.6, 3, TASK_HEAD).value)
        assert reversed_ == float(unreversed_loss(params, batch, 0.6, 3).value)

    @pytest.mark.parametrize("n", [2, 4])
    def test_duplicated_adversaries(self, batch, n):
        single, copies = model(1), model(n)
        for i in range(n):
            for layer in ("layer0.weight", "layer0.bias"):
                copies[f"adversary.{i}.{layer}"].assign(single[f"adversary.0.{layer}"].value)
        one = gradients(single, minimax_loss(single, batch, 0.5, 1, TASK_HEAD))
        many = gradients(copies, minimax_loss(copies, batch, 0.5, n, TASK_HEAD))
        assert float(minimax_loss(copies, batch, 0.5, n, TASK_HEAD).value) == pytest.approx(
            float(minimax_loss(single, batch, 0.5, 1, TASK_HEAD).value), rel=1e-12
        )
        for name in single.names():
            if not name.startswith("adversary."):
                np.testing.assert_allclose(many[name], one[name], rtol=1e-9, atol=1e-14, err_msg=name)
        for i in range(n):
            for layer in ("layer0.weight", "layer0.bias"):
                np.testing.assert_allclose(many[f"adversary.{i}.{layer}"], one[f"adversary.0.{layer}"] / n, rtol=1e-9, atol=1e-14)

    def test_adversaries_ignore_premises(self, tiny_corpus, batch):
        params = model(3)
        examples = tiny_corpus.train[:16]
        donors = tiny_corpus.train[16:32]
        swapped = Batch.of([replace(ex, premise=d.premise) for ex, d in zip(examples, donors)])
        before = forward(params, batch, 0.5, 3, TASK_HEAD, nn.LINEAR)
        after = forward(params, swapped, 0.5, 3, TASK_HEAD, nn.LINEAR)
        for a, b in zip(before.adversary_logits, after.adversary_logits):
            np.testing.assert_array_equal(a.value, b.value)
        assert not np.array_equal(before.task_logits.value, after.task_logits.value)

    def test_ill_posed(self, batch):
        with pytest.raises(ObjectiveError):
            minimax_loss(model(0), batch, 0.5, 0, TASK_HEAD)
        with pytest.raises(ObjectiveError):
            minimax_loss(model(1), batch, 1.5, 1, TASK_HEAD)
        # no adversarial term: n = 0 is fine
        minimax_loss(model(0), batch, 0.0, 0, TASK_HEAD)


class TestTrainConfig:
    def test_round_trip(self, tiny_config):
        data = tiny_config.to_dict()
        assert data["lambda"] == 0.5 and "lam" not in data
        assert TrainConfig.from_dict(data) == tiny_config

    def test_effective_lambda(self):
        assert TrainConfig(lam=0.5, adversaries=0).effective_lambda == 0.0
        assert TrainConfig(lam=0.5, adversaries=3).effective_lambda == 0.5

    def test_issues(self):
        issues = TrainConfig(lam=1.5, batch_size=0, learning_rate=0.0).issues()
        assert len(issues) == 3
        with pytest.raises(ConfigError):
            TrainConfig(k=0).validate()


class TestTraining:
    def test_returns_best_epoch(self, tiny_corpus, tiny_config):
        params, log = train(tiny_corpus, tiny_config)
        assert 1 <= log.best_epoch <= len(log.epochs) <= tiny_config.max_epochs
        eligible = [r.task_dev_accuracy for r in log.epochs if r.epoch >= tiny_config.warmup_epochs]
        assert log.final_dev_accuracy == max(eligible)
        task, adversaries, _ = evaluate_split(params, tiny_corpus.dev, tiny_config)
        assert task == log.final_dev_accuracy
        assert len(adversaries) == tiny_config.adversaries
        assert len(log.best.spectator_dev_accuracies) == tiny_config.spectators

    def test_deterministic(self, tiny_corpus, tiny_config):
        first, _ = train(tiny_corpus, tiny_config)
        second, _ = train(tiny_corpus, tiny_config)
        assert first.fingerprint() == second.fingerprint()

    def test_zero_lambda_matches_no_adversaries(self, tiny_corpus, tiny_config):
        config = replace(tiny_config, lam=0.0, max_epochs=2, spectators=0)
        with_adversaries, _ = train(tiny_corpus, replace(config, adversaries=3))
        without, _ = train(tiny_corpus, replace(config, adversaries=0))
        for name in without.names():
            np.testing.assert_array_equal(with_adversaries[name].value, without[name].value)

    def test_spectators_do_not_touch_the_model(self, tiny_corpus, tiny_config):
        config = replace(tiny_config, max_epochs=2)
        watched, log = train(tiny_corpus, replace(config, spectators=3))
        unwatched, _ = train(tiny_corpus, replace(config, spectators=0))
        assert watched.fingerprint() == unwatched.fingerprint()
        assert log.summary()["max_spectator_accuracy"] is not None

    def test_adversarial_warmup(self, tiny_corpus, tiny_config):
        config = replace(tiny_config, max_epochs=6, patience=1, adversarial_warmup=4, spectators=0)
        _, log = train(tiny_corpus, config)
        assert len(log.epochs) >= 4
        assert log.best_epoch >= 4
        assert log.final_dev_accuracy == max(r.task_dev_accuracy for r in log.epochs if r.epoch >= 4)

    def test_warmup_epochs(self):
        assert TrainConfig(adversaries=0).warmup_epochs == 0
        assert TrainConfig(adversaries=2, lam=0.0).warmup_epochs == 0
        assert TrainConfig(adversaries=2, adversarial_warmup=10, max_epochs=3).warmup_epochs == 3
        assert TrainConfig(adversaries=2, adversarial_warmup=10).warmup_epochs == 10
        assert TrainConfig(adversarial_warmup=-1).issues()

    def test_divergence(self, tiny_corpus, tiny_config):
        with pytest.raises(DivergenceError) as info:
            train(tiny_corpus, replace(tiny_config, learning_rate=1e300))
        assert info.value.epoch == 1

    def test_embeddings_shape_checked(self, tiny_corpus, tiny_config):
        with pytest.raises(ShapeError):
            train(tiny_corpus, tiny_config, embeddings=np.zeros((3, 3)))


class TestCheckpoint:
    @pytest.fixture
    def saved(self, tiny_corpus, tiny_config, tmp_path):
        params = nn.init_params(tiny_config.model_spec(len(tiny_corpus.vocab)), 0)
        path = tmp_path / "model.aedb"
        checkpoint_id = save_checkpoint(params, tiny_config, tiny_corpus.vocab, path, extra={"cell_id": "x"})
        return params, path, checkpoint_id

    def test_round_trip(self, saved, tiny_config, tiny_corpus):
        params, path, checkpoint_id = saved
        loaded = load_checkpoint(path)
        assert loaded.checkpoint_id == checkpoint_id == hashlib.sha256(path.read_bytes()).hexdigest()
        assert loaded.config == tiny_config
        assert loaded.vocab == tiny_corpus.vocab
        assert loaded.k == tiny_config.k
        assert loaded.metadata["extra"] == {"cell_id": "x"}
        assert loaded.params.names() == params.names()
        for p in params:
            np.testing.assert_allclose(loaded.params[p.name].value, p.value, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize(
        "corrupt, fragment",
        [
            (lambda blob: blob[:5], "truncated header"),
            (lambda blob: b"XXXX" + blob[4:], "bad magic"),
            (lambda blob: blob[:4] + (7).to_bytes(2, "little") + blob[6:], "version"),
            (lambda blob: blob[:-4], "floats"),
            (lambda blob: blob[:20], "truncated metadata"),
        ],
    )
    def test_corruption(self, saved, corrupt, fragment):
        _, path, _ = saved
        path.write_bytes(corrupt(path.read_bytes()))
        with pytest.raises(CheckpointError, match=fragment):
            load_checkpoint(path)

    def test_reloaded_encoder_matches(self, saved, tiny_corpus):
        params, path, _ = saved
        loaded = load_checkpoint(path)
        for example in tiny_corpus.dev[:10]:
            np.testing.assert_allclose(nn.encode(loaded.params, example.hypothesis), nn.encode(params, example.hypothesis), atol=1e-6)

    def test_dimension_is_reported(self, tiny_corpus, tiny_config, tmp_path):
        config = replace(tiny_config, k=256)
        path = tmp_path / "wide.aedb"
        save_checkpoint(nn.init_params(config.model_spec(len(tiny_corpus.vocab)), 0), config, tiny_corpus.vocab, path)
        loaded = load_checkpoint(path)
        assert loaded.k == 256
        assert nn.encode(loaded.params, tiny_corpus.dev[0].hypothesis).shape == (256,)

    @pytest.mark.parametrize(
        "edit",
        [
            lambda meta: meta["tensors"][0].pop("shape"),
            lambda meta: meta["tensors"][0].update(shape=[999]),
            lambda meta: meta["tensors"][1].update(offset=10**9),
            lambda meta: meta.pop("vocab"),
        ],
    )
    def test_malformed_directory(self, saved, edit):
        _, path, _ = saved
        blob = path.read_bytes()
        magic, version, length = struct.unpack_from("<4sHI", blob)
        meta = json.loads(blob[10 : 10 + length])
        edit(meta)
        encoded = json.dumps(meta).encode("utf-8")
        path.write_bytes(struct.pack("<4sHI", magic, version, len(encoded)) + encoded + blob[10 + length :])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_non_finite_payload(self, saved):
        _, path, _ = saved
        blob = bytearray(path.read_bytes())
        _, _, length = struct.unpack_from("<4sHI", blob)
        blob[10 + length : 14 + length] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing.aedb")

    def test_in_memory_checkpoint(self, tiny_corpus, tiny_config):
        params = nn.init_params(tiny_config.model_spec(len(tiny_corpus.vocab)), 0)
        checkpoint = checkpoint_from_training(params, tiny_config, tiny_corpus.vocab)
        assert checkpoint.params is params
        assert checkpoint.checkpoint_id == checkpoint_from_training(params.copy(), tiny_config, tiny_corpus.vocab).checkpoint_id
