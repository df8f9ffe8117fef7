import numpy as np
import pytest

from mvocc.data import normalize_fit
from mvocc.errors import DataFormatError
from mvocc.methods import MethodConfig, OptimizerSettings, score, train
from mvocc.model_io import CONTAINER_MAGIC, load_model, read_tensors, save_model, write_tensors

FAST = OptimizerSettings(epochs=2, batch_size=8, pretrain_epochs=1)


@pytest.mark.parametrize("method", ["TF", "DSV", "PPRD"])
def test_reloaded_model_scores_identically(method, tiny_views, tmp_path):
    model = train(MethodConfig(method=method, embedding_dim=4, optimizer=FAST), tiny_views, normalize_fit(tiny_views))
    path = save_model(model, tmp_path / "model.mvoc")
    loaded = load_model(path)
    np.testing.assert_array_equal(score(loaded, tiny_views), score(model, tiny_views))
    assert loaded.config == model.config
    assert loaded.round_counts == model.round_counts
    np.testing.assert_array_equal(loaded.norm_stats.maxs[1], model.norm_stats.maxs[1])


def test_side_file_is_written(tiny_views, tmp_path):
    model = train(MethodConfig(method="DAE", embedding_dim=4, optimizer=FAST), tiny_views)
    path = save_model(model, tmp_path / "dae.mvoc")
    assert (tmp_path / "dae.mvoc.json").exists()
    assert path.read_bytes()[:4] == CONTAINER_MAGIC


def test_tensor_container_keeps_shapes(tmp_path):
    tensors = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(1.5), "vec": np.ones(4)}
    write_tensors(tmp_path / "t.bin", tensors)
    loaded = read_tensors(tmp_path / "t.bin")
    assert list(loaded) == ["a", "scalar", "vec"]
    assert loaded["scalar"].shape == ()
    np.testing.assert_array_equal(loaded["a"], tensors["a"])


def test_bad_magic(tmp_path):
    (tmp_path / "t.bin").write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(DataFormatError):
        read_tensors(tmp_path / "t.bin")


def test_missing_side_file(tiny_views, tmp_path):
    model = train(MethodConfig(method="DAE", embedding_dim=4, optimizer=FAST), tiny_views)
    path = save_model(model, tmp_path / "dae.mvoc")
    (tmp_path / "dae.mvoc.json").unlink()
    with pytest.raises(DataFormatError):
        load_model(path)
