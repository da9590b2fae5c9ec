from __future__ import annotations

import numpy as np
import pytest

from cpt.corruption import build_batch, doc_rng, make_dae_instance, make_mlm_instance, synthetic_corpus
from cpt.decoding import greedy_decode
from cpt.exceptions import BatchError, ConfigError, TrainingExampleError
from cpt.managers import CheckpointManager, MetricsWriter, read_metrics
from cpt.models.config import (
    CorruptionConfig,
    FineTuneMode,
    GenerationConfig,
    PromptSpec,
    RunConfig,
    ScheduleConfig,
    TaskKind,
    TaskSpec,
    model_preset,
)
from cpt.models.corpus import ClassifyRecord, MrcRecord
from cpt.network import CPTParams, encode, mlm_logits, understand
from cpt.optim import AdamState
from cpt.tasks import synthetic_task
from cpt.tensor import backward, gradcheck, softmax
from cpt.training import (
    TaskHeads,
    Trainer,
    bio_entities,
    build_g_prompt_targets,
    build_u_prompt_input,
    classify_forward,
    compile_prompt,
    cond_gen_finetune_step,
    cond_gen_loss,
    dae_loss,
    decode_span,
    evaluate,
    frame_pair,
    mlm_accuracy,
    mlm_loss,
    mrc_forward,
    mrc_loss,
    pretrain_batches,
    pretrain_gradients,
)
from cpt.vocab import CLS_ID, EOS_ID, MASK_ID, SEP_ID, Vocabulary

LABELS = ["neg", "pos"]


def _batches(vocab, n=4, seed=0):
    docs = synthetic_corpus(n, seed=seed, vocab=vocab)
    cfg = CorruptionConfig(word_mask_rate=0.4, dae_infill_rate=0.3)
    mlm = [make_mlm_instance(d, cfg, doc_rng(seed, d.doc_id, "mlm"), vocab, 64) for d in docs]
    dae = [make_dae_instance(d, cfg, doc_rng(seed, d.doc_id, "dae"), vocab, 64) for d in docs]
    return build_batch(mlm, None, vocab.ignore_id), build_batch(dae, None, vocab.ignore_id)


def _classify_task(mode, prompt=None):
    return TaskSpec(kind=TaskKind.classify, mode=mode, labels=LABELS, prompt=prompt)


class TestPretrain:
    def test_loss_order_does_not_matter(self, tiny_params, vocab):
        mlm, dae = _batches(vocab)
        first = pretrain_gradients(mlm, dae, tiny_params, mlm_first=True)
        grads_a = {n: g.copy() for n, g in tiny_params.grads().items()}
        second = pretrain_gradients(mlm, dae, tiny_params, mlm_first=False)
        assert (first.mlm, first.dae) == (second.mlm, second.dae)
        for name, g in tiny_params.grads().items():
            np.testing.assert_allclose(g, grads_a[name], rtol=1e-10, atol=1e-14, err_msg=name)

    def test_mlm_only_leaves_generation_untouched(self, tiny_params, vocab):
        mlm, _ = _batches(vocab)
        losses = pretrain_gradients(mlm, None, tiny_params)
        assert losses.dae == 0.0 and losses.mlm > 0.0
        assert all(not t.grad.any() for t in tiny_params.part_arrays("gdec").values())

    def test_dae_only_leaves_understanding_untouched(self, tiny_params, vocab):
        _, dae = _batches(vocab)
        pretrain_gradients(None, dae, tiny_params)
        assert all(not t.grad.any() for t in tiny_params.part_arrays("udec").values())
        assert tiny_params.token_embeddings.grad.any()

    def test_nothing_to_train(self, tiny_params):
        with pytest.raises(BatchError):
            pretrain_gradients(None, None, tiny_params)

    def test_all_ignored_mlm_batch(self, tiny_params, vocab):
        mlm, _ = _batches(vocab)
        mlm.target_ids[...] = vocab.ignore_id
        losses = pretrain_gradients(mlm, None, tiny_params)
        assert losses.mlm == 0.0
        assert not tiny_params.token_embeddings.grad.any()

    def test_joint_loss_gradients_match_finite_differences(self, tiny_params, vocab):
        mlm, dae = _batches(vocab, n=2)
        arrays = list(tiny_params.arrays.values())
        per_array = 4
        assert sum(min(per_array, t.values.size) for t in arrays) >= 200
        err = gradcheck(
            lambda: mlm_loss(mlm, tiny_params) + dae_loss(dae, tiny_params),
            arrays,
            samples_per_param=per_array,
            rng=np.random.default_rng(0),
        )
        assert err < 1e-4

    def test_mlm_accuracy_scores_target_positions_only(self, tiny_params, vocab):
        mlm, _ = _batches(vocab)
        assert 0.0 <= mlm_accuracy(mlm, tiny_params) <= 1.0
        mlm.target_ids[...] = vocab.ignore_id
        assert mlm_accuracy(mlm, tiny_params) == 0.0

    def test_batches_follow_the_task(self, tiny_config, vocab):
        docs = synthetic_corpus(6, seed=1, vocab=vocab)
        joint = RunConfig(seed=1, model=tiny_config, batch_size=4, max_len=48)
        mlm, dae = pretrain_batches(docs, joint, vocab, 0)
        assert mlm is not None and dae is not None and len(mlm.doc_ids) == 4
        only = joint.model_copy(update={"task": "mlm-only"})
        assert pretrain_batches(docs, only, vocab, 0)[1] is None
        again, _ = pretrain_batches(docs, joint, vocab, 0)
        assert again.doc_ids == mlm.doc_ids
        following, _ = pretrain_batches(docs, joint, vocab, 1)
        assert len(following.doc_ids) == 2


class TestPrompts:
    def test_u_prompt_layout(self, vocab):
        prompt = compile_prompt(PromptSpec(prefix=["s005"], verbalizers={"neg": ["s000"], "pos": ["s001", "s002"]}), LABELS, vocab)
        ids, first = build_u_prompt_input([20, 21], prompt)
        assert ids == [CLS_ID, 20, 21, vocab.id_of("s005"), MASK_ID, MASK_ID, SEP_ID]
        assert first == 4

    def test_g_prompt_targets(self, vocab):
        prompt = compile_prompt(PromptSpec(prefix=["s005"], suffix=["s006"], verbalizers={"neg": ["s000"], "pos": ["s001"]}), LABELS, vocab)
        target, scored = build_g_prompt_targets(prompt, 1)
        assert target == [vocab.id_of("s005"), vocab.id_of("s001"), vocab.id_of("s006"), EOS_ID]
        assert scored == 2

    def test_missing_verbalizer(self, vocab):
        with pytest.raises(ConfigError):
            compile_prompt(PromptSpec(verbalizers={"neg": ["s000"]}), LABELS, vocab)

    def test_single_token_u_prompt_is_mask_probability(self, wide_params, vocab):
        prompt = compile_prompt(PromptSpec(prefix=["s005"], verbalizers={"neg": ["s000"], "pos": ["s001"]}), LABELS, vocab)
        rows = [[10, 11, 12]]
        scores = classify_forward(rows, FineTuneMode.u_prompt, wide_params, prompt=prompt).values
        ids, first = build_u_prompt_input(rows[0], prompt)
        ids = np.array([ids])
        probs = softmax(mlm_logits(understand(encode(ids, ids != 0, wide_params), ids != 0, wide_params), wide_params)).values
        np.testing.assert_allclose(scores[0], probs[0, first, [vocab.id_of("s000"), vocab.id_of("s001")]], rtol=1e-10)

    def test_g_prompt_ignores_template_suffix(self, wide_params, vocab):
        words = {"neg": ["s000"], "pos": ["s001", "s003"]}
        plain = compile_prompt(PromptSpec(prefix=["s005"], verbalizers=words), LABELS, vocab)
        suffixed = compile_prompt(PromptSpec(prefix=["s005"], suffix=["s007", "s008"], verbalizers=words), LABELS, vocab)
        rows = [[10, 11], [12, 13, 14]]
        a = classify_forward(rows, FineTuneMode.g_prompt, wide_params, prompt=plain).values
        b = classify_forward(rows, FineTuneMode.g_prompt, wide_params, prompt=suffixed).values
        np.testing.assert_allclose(a, b, rtol=1e-10)
        assert np.all(a < 0.0)


class TestClassify:
    @pytest.mark.parametrize("mode", [FineTuneMode.u, FineTuneMode.g, FineTuneMode.ug])
    def test_head_modes(self, tiny_params, vocab, rng, mode):
        task = _classify_task(mode)
        heads = TaskHeads.create(task, 16, rng)
        assert heads.width == (32 if mode == FineTuneMode.ug else 16)
        scores = classify_forward([[10, 11, 12], [13]], mode, tiny_params, heads)
        assert scores.shape == (2, 2)

    def test_g_decoder_bos_changes_features(self, wide_params, rng):
        heads = TaskHeads.create(_classify_task(FineTuneMode.g), 16, rng, std=0.5)
        a = classify_forward([[10, 11]], FineTuneMode.g, wide_params, heads).values
        b = classify_forward([[10, 11]], FineTuneMode.g, wide_params, heads, g_decoder_bos=True).values
        assert a.shape == b.shape == (1, 2)
        assert not np.allclose(a, b)

    def test_head_required(self, tiny_params):
        with pytest.raises(ConfigError):
            classify_forward([[10]], FineTuneMode.u, tiny_params)

    def test_prompt_mode_needs_prompt(self):
        with pytest.raises(ValueError):
            _classify_task(FineTuneMode.u_prompt)

    def test_illegal_mode_for_generation(self):
        with pytest.raises(ValueError):
            TaskSpec(kind=TaskKind.gen, mode=FineTuneMode.u)

    def test_unknown_label(self, tiny_params, vocab, rng):
        task = _classify_task(FineTuneMode.u)
        heads = TaskHeads.create(task, 16, rng)
        with pytest.raises(TrainingExampleError):
            evaluate(task, [ClassifyRecord(tokens=["s010"], label="maybe")], tiny_params, heads, vocab)


class TestSeqLabel:
    def test_bio_entities(self):
        assert bio_entities(["B-PER", "I-PER", "O", "B-LOC"]) == {(0, 2, "PER"), (3, 4, "LOC")}
        assert bio_entities(["I-PER", "I-PER", "B-PER"]) == {(0, 2, "PER"), (2, 3, "PER")}
        assert bio_entities(["B-PER", "I-LOC"]) == {(0, 1, "PER"), (1, 2, "LOC")}
        assert bio_entities(["O", "O"]) == set()

    def test_evaluate_reports_entity_scores(self, tiny_params, vocab, rng):
        data = synthetic_task("seqlabel", vocab, seed=3, n_train=2, n_held_out=6)
        task = TaskSpec(kind=TaskKind.seqlabel, mode=FineTuneMode.ug, tags=data.tags)
        metrics = evaluate(task, data.held_out, tiny_params, TaskHeads.create(task, 16, rng), vocab)
        assert set(metrics) == {"f1", "precision", "recall", "tag_accuracy"}
        assert 0.0 <= metrics["f1"] <= 1.0


class TestMrc:
    def test_decode_span_respects_constraints(self):
        start = np.array([0.0, 5.0, 1.0, 0.0, 8.5])
        end = np.array([9.0, 0.0, 1.0, 4.0, 0.0])
        passage = np.array([False, True, True, True, True])
        assert decode_span(start, end, passage, max_span=3) == (1, 3)
        assert decode_span(start, end, passage, max_span=1) == (4, 4)

    def test_spans_stay_inside_passage(self, wide_params, rng):
        task = TaskSpec(kind=TaskKind.mrc, mode=FineTuneMode.u, max_span=3)
        heads = TaskHeads.create(task, 16, rng, std=0.5)
        pairs = [([10, 11], [20, 21, 22, 23, 24]), ([12], [25, 26])]
        out = mrc_forward(pairs, task.mode, wide_params, heads, task.max_span)
        for (s, e), (_, passage) in zip(out.spans, pairs):
            assert 0 <= s <= e < len(passage) and e - s < 3
        assert frame_pair([10, 11], [20])[1] == 3

    def test_gold_span_outside_passage(self, tiny_params, vocab, rng):
        task = TaskSpec(kind=TaskKind.mrc, mode=FineTuneMode.u)
        record = MrcRecord(question=["s001"], passage=["s002", "s003"], answer_start=1, answer_end=2)
        with pytest.raises(TrainingExampleError):
            mrc_loss(task, [record], tiny_params, TaskHeads.create(task, 16, rng), vocab)


class TestGeneration:
    def test_empty_target(self, tiny_params):
        with pytest.raises(TrainingExampleError):
            cond_gen_loss([[10, 11]], [[]], tiny_params)

    def test_teacher_forcing_skips_understanding(self, tiny_params):
        tiny_params.zero_grad()
        loss = cond_gen_loss([[10, 11, 12]], [[12, 11]], tiny_params)
        backward(loss)
        assert all(not t.grad.any() for t in tiny_params.part_arrays("udec").values())

    def test_finetune_step_leaves_understanding_untouched(self, tiny_params):
        udec = {name: t.values.copy() for name, t in tiny_params.part_arrays("udec").items()}
        gdec = {name: t.values.copy() for name, t in tiny_params.part_arrays("gdec").items()}
        schedule = ScheduleConfig(peak_lr=1e-2, warmup_steps=0, total_steps=10, weight_decay=0.1)
        loss = cond_gen_finetune_step([[10, 11, 12]], [[12, 11]], tiny_params, AdamState.from_schedule(schedule))
        assert loss > 0.0
        for name, t in tiny_params.part_arrays("udec").items():
            assert np.linalg.norm(t.grad) == 0.0
            np.testing.assert_array_equal(t.values, udec[name])
        assert any(not np.array_equal(t.values, gdec[name]) for name, t in tiny_params.part_arrays("gdec").items())

    def test_trainer_fine_tunes_generation_through_the_step(self, tiny_params, vocab, monkeypatch):
        calls = []
        original = cond_gen_finetune_step

        def counting(*args, **kwargs):
            calls.append(len(args[0]))
            return original(*args, **kwargs)

        monkeypatch.setattr("cpt.training.cond_gen_finetune_step", counting)
        data = synthetic_task("gen", vocab, seed=1, n_train=6, n_held_out=2)
        task = TaskSpec(kind=TaskKind.gen, mode=FineTuneMode.g)
        _, _, losses = Trainer(tiny_params, vocab, seed=1, quiet=True).finetune(
            task, data.train, steps=2, batch_size=4, schedule=ScheduleConfig(warmup_steps=0, total_steps=2)
        )
        assert calls == [4, 2] and len(losses) == 2


class TestTrainer:
    def test_vocabulary_must_match(self, tiny_params):
        with pytest.raises(ConfigError):
            Trainer(tiny_params, Vocabulary.for_size(40), seed=0)

    def test_pretrain_writes_metrics_and_checkpoints(self, tmp_path, tiny_params, vocab, tiny_config):
        run = RunConfig(
            seed=5, model=tiny_config, batch_size=2, max_len=48,
            schedule=ScheduleConfig(peak_lr=1e-3, warmup_steps=1, total_steps=3),
        )
        metrics = MetricsWriter(tmp_path / "m.csv")
        checkpoints = CheckpointManager(tmp_path / "ckpt", every=2)
        trainer = Trainer(tiny_params, vocab, seed=5, metrics=metrics, checkpoints=checkpoints, quiet=True)
        history = trainer.pretrain(synthetic_corpus(4, seed=5, vocab=vocab), run)
        assert len(history) == 3
        rows = read_metrics(tmp_path / "m.csv")
        assert [(r.step, r.task) for r in rows[:2]] == [(1, "mlm"), (1, "dae")]
        assert len(rows) == 6
        assert [p.name for p in checkpoints.saved()] == ["step_000002.ckpt", "step_000003.ckpt"]

    def test_finetune_returns_heads_and_losses(self, tiny_params, vocab):
        data = synthetic_task("classify", vocab, seed=1, n_train=8, n_held_out=4)
        task = _classify_task(FineTuneMode.u)
        heads, prompt, losses = Trainer(tiny_params, vocab, seed=1, quiet=True).finetune(
            task, data.train, steps=2, batch_size=4, schedule=ScheduleConfig(warmup_steps=0, total_steps=2)
        )
        assert prompt is None and len(losses) == 2
        assert "head.classifier.weight" in heads.named_arrays()


def _learner(seed, **overrides):
    config = model_preset("tiny", **{"hidden": 64, "heads": 4, **overrides})
    return CPTParams.initialize(config, np.random.default_rng(seed))


def _schedule(steps, peak_lr=3e-3):
    return ScheduleConfig(peak_lr=peak_lr, warmup_steps=steps // 10, total_steps=steps, weight_decay=0.0)


def _short_docs(n, seed, vocab):
    return synthetic_corpus(n, seed=seed, vocab=vocab, max_word_len=2, sentence_words=(3, 4), doc_sentences=(2, 2))


@pytest.mark.slow
class TestLearning:
    def test_mlm_overfits_small_corpus(self, vocab):
        params = _learner(0)
        docs = _short_docs(32, 0, vocab)
        run = RunConfig(
            seed=0, model=params.config, task="mlm-only", batch_size=32, max_len=64,
            corruption=CorruptionConfig(word_mask_rate=0.3), schedule=_schedule(1500),
        )
        Trainer(params, vocab, seed=0, quiet=True).pretrain(docs, run)
        instances = [
            make_mlm_instance(d, CorruptionConfig(), doc_rng(99, d.doc_id, "mlm-eval", epoch), vocab, 64)
            for d in docs
            for epoch in range(4)
        ]
        assert mlm_accuracy(build_batch(instances, None, vocab.ignore_id), params) >= 0.95

    def test_dae_learns_to_copy(self, vocab):
        params = _learner(1)
        docs = _short_docs(64, 1, vocab)
        corruption = CorruptionConfig(dae_infill_rate=0.0, permute_sentences=False)
        run = RunConfig(
            seed=1, model=params.config, task="dae-only", batch_size=32, max_len=64,
            corruption=corruption, schedule=_schedule(800),
        )
        Trainer(params, vocab, seed=1, quiet=True).pretrain(docs, run)
        instances = [make_dae_instance(d, corruption, doc_rng(1, d.doc_id, "dae"), vocab, 64) for d in docs]
        outputs = greedy_decode(
            [i.source_ids.tolist() for i in instances], params, GenerationConfig(max_new_tokens=64)
        )
        hits = sum(out == inst.target_ids.tolist() for out, inst in zip(outputs, instances))
        assert hits / len(instances) >= 0.9

    @pytest.mark.parametrize("mode", list(FineTuneMode))
    def test_every_classification_mode(self, vocab, mode):
        data = synthetic_task("classify", vocab, seed=2, n_train=256, n_held_out=64)
        prompted = mode in (FineTuneMode.u_prompt, FineTuneMode.g_prompt)
        task = _classify_task(mode, data.prompt if prompted else None)
        trainer = Trainer(_learner(2), vocab, seed=2, quiet=True)
        heads, prompt, _ = trainer.finetune(task, data.train, steps=300, batch_size=16, schedule=_schedule(300))
        assert evaluate(task, data.held_out, trainer.params, heads, vocab, prompt)["accuracy"] >= 0.95

    def test_span_extraction(self, vocab):
        data = synthetic_task("mrc", vocab, seed=3, n_train=256, n_held_out=64)
        task = TaskSpec(kind=TaskKind.mrc, mode=FineTuneMode.u, max_span=4)
        trainer = Trainer(_learner(3), vocab, seed=3, quiet=True)
        heads, _, _ = trainer.finetune(task, data.train, steps=300, batch_size=16, schedule=_schedule(300))
        assert evaluate(task, data.held_out, trainer.params, heads, vocab)["exact_match"] >= 0.95

    def test_entity_tagging(self, vocab):
        data = synthetic_task("seqlabel", vocab, seed=4, n_train=256, n_held_out=64)
        task = TaskSpec(kind=TaskKind.seqlabel, mode=FineTuneMode.u, tags=data.tags)
        trainer = Trainer(_learner(4), vocab, seed=4, quiet=True)
        heads, _, _ = trainer.finetune(task, data.train, steps=300, batch_size=16, schedule=_schedule(300))
        assert evaluate(task, data.held_out, trainer.params, heads, vocab)["f1"] >= 0.95

    def test_identity_generation(self, vocab):
        data = synthetic_task("gen", vocab, seed=5, n_train=1024, n_held_out=64, task="copy")
        task = TaskSpec(kind=TaskKind.gen, mode=FineTuneMode.g)
        trainer = Trainer(_learner(5), vocab, seed=5, quiet=True)
        heads, _, losses = trainer.finetune(task, data.train, steps=600, batch_size=32, schedule=_schedule(600))
        assert np.mean(losses[-10:]) < 0.05
        assert evaluate(task, data.held_out, trainer.params, heads, vocab)["exact_match"] >= 0.9

    def test_reversal_generation(self, vocab):
        data = synthetic_task("gen", vocab, seed=6, n_train=4096, n_held_out=64, task="reverse")
        task = TaskSpec(kind=TaskKind.gen, mode=FineTuneMode.g)
        trainer = Trainer(_learner(6, layers_udec=2, layers_gdec=2), vocab, seed=6, quiet=True)
        heads, _, _ = trainer.finetune(task, data.train, steps=2000, batch_size=32, schedule=_schedule(2000))
        assert evaluate(task, data.held_out, trainer.params, heads, vocab)["exact_match"] >= 0.9
