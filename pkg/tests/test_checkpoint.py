from __future__ import annotations

import numpy as np
import pytest

from cpt.checkpoint import load_checkpoint, read_container, save_checkpoint, sidecar_path, write_container
from cpt.exceptions import DataError, PathError
from cpt.managers import CheckpointManager, MetricsWriter, read_metrics
from cpt.models.reports import MetricsRow
from cpt.optim import AdamState, adam_step


class TestContainer:
    def test_arrays_and_aliases_survive(self, tmp_path):
        path = tmp_path / "a.ckpt"
        arrays = {"w": np.arange(6.0).reshape(2, 3), "s": np.array(2.5)}
        write_container(path, arrays, {"tied": "w"})
        back, aliases = read_container(path)
        np.testing.assert_array_equal(back["w"], arrays["w"])
        assert back["s"].shape == ()
        assert aliases == {"tied": "w"}

    def test_alias_to_unknown_array(self, tmp_path):
        with pytest.raises(DataError):
            write_container(tmp_path / "a.ckpt", {"w": np.ones(2)}, {"tied": "missing"})

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "a.ckpt"
        write_container(path, {"w": np.ones((4, 4))})
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(DataError, match="truncated"):
            read_container(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "a.ckpt"
        path.write_bytes(b"NOTACKPT\x00\x00\x00\x00")
        with pytest.raises(DataError):
            read_container(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(PathError):
            read_container(tmp_path / "nope.ckpt")


class TestCheckpoint:
    def test_model_round_trip(self, tmp_path, tiny_params):
        path = tmp_path / "sub" / "m.ckpt"
        save_checkpoint(path, tiny_params, run={"seed": 3})
        params, adam_state, run = load_checkpoint(path)
        assert params.config == tiny_params.config
        assert adam_state is None
        assert run == {"seed": "3"}
        for name, t in tiny_params.named_arrays().items():
            np.testing.assert_array_equal(params[name].values, t.values)
        assert params["lm_head.weight"] is params.token_embeddings

    def test_optimizer_moments_restored(self, tmp_path, tiny_params):
        state = AdamState(peak_lr=1e-3, warmup_steps=0, total_steps=10)
        grads = {name: np.full(t.shape, 0.1) for name, t in tiny_params.named_arrays().items()}
        adam_step(tiny_params.named_arrays(), grads, state)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, tiny_params, state)
        _, restored, _ = load_checkpoint(path)
        assert restored.step == 1
        assert restored.beta2 == state.beta2
        np.testing.assert_array_equal(restored.m["token_embeddings"], state.m["token_embeddings"])
        np.testing.assert_array_equal(restored.v["lm_head.bias"], state.v["lm_head.bias"])

    def test_missing_sidecar(self, tmp_path, tiny_params):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, tiny_params)
        sidecar_path(path).unlink()
        with pytest.raises(PathError):
            load_checkpoint(path)

    def test_foreign_alias_rejected(self, tmp_path, tiny_params):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, tiny_params)
        arrays, _ = read_container(path)
        write_container(path, arrays, {"lm_head.weight": "position_embeddings"})
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestManagers:
    def test_checkpoint_schedule_and_latest(self, tmp_path, tiny_params):
        manager = CheckpointManager(tmp_path / "ckpt", every=5)
        assert manager.due(10) and not manager.due(7)
        with pytest.raises(PathError):
            manager.latest()
        manager.save(5, tiny_params)
        manager.save(10, tiny_params)
        assert manager.latest() == manager.path_for(10)
        _, _, run = manager.load_latest()
        assert run["step"] == "10"

    def test_never_due_without_interval(self, tmp_path):
        assert not CheckpointManager(tmp_path).due(100)

    def test_metrics_rows(self, tmp_path):
        writer = MetricsWriter(tmp_path / "metrics.csv")
        writer.write(MetricsRow(step=1, task="mlm", loss=3.5, lr=1e-4, wall_ms=2.0))
        writer.write(MetricsRow(step=1, task="dae", loss=2.25, lr=1e-4, wall_ms=2.5))
        rows = read_metrics(tmp_path / "metrics.csv")
        assert [r.task for r in rows] == ["mlm", "dae"]
        assert rows[1].loss == 2.25
        assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == "step,task,loss,lr,wall_ms"

    def test_missing_metrics_file(self, tmp_path):
        with pytest.raises(PathError):
            read_metrics(tmp_path / "none.csv")
