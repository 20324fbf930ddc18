import numpy as np
import pytest

from leakbench.checkpoint import MAGIC, load_model, read_header, save_model
from leakbench.errors import DataError
from leakbench.neural import lstm, mlp
from leakbench.svr import KernelSpec, SvrConfig, predict_svr, train_svr


def test_mlp_round_trip(tmp_path):
    model = mlp.init_mlp((6, 5, 4, 1), mlp.REGRESSION_1, np.random.default_rng(0), dropout=0.25, lr_scales=(1, 1, 10))
    path = tmp_path / "m.lbck"
    save_model(model, path, seed=3, schedule={"learning_rate": 0.01})
    back = load_model(path)
    assert back.sizes == model.sizes and back.dropout == model.dropout and back.lr_scales == model.lr_scales
    for p, q in zip(model.params(), back.params()):
        assert np.array_equal(p, q)
    assert read_header(path)["extra"] == {"seed": 3, "schedule": {"learning_rate": 0.01}}
    assert path.read_bytes()[:4] == MAGIC


def test_lstm_round_trip(tmp_path):
    model = lstm.init_lstm(3, 4, np.random.default_rng(1))
    save_model(model, tmp_path / "l.lbck")
    back = load_model(tmp_path / "l.lbck")
    for p, q in zip(model.params(), back.params()):
        assert np.array_equal(p, q)


def test_svr_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    model = train_svr(x, y, KernelSpec(), SvrConfig(), ids=[f"g{k:02d}" for k in range(20)])
    save_model(model, tmp_path / "s.lbck")
    back = load_model(tmp_path / "s.lbck")
    assert back.support_ids == model.support_ids and back.kernel == model.kernel
    assert np.array_equal(predict_svr(back, x), predict_svr(model, x))


def test_bad_files_rejected(tmp_path):
    bad = tmp_path / "bad.lbck"
    bad.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError):
        load_model(bad)
    model = lstm.init_lstm(2, 2, np.random.default_rng(0))
    save_model(model, tmp_path / "ok.lbck")
    bad.write_bytes((tmp_path / "ok.lbck").read_bytes() + b"\0")
    with pytest.raises(DataError):
        load_model(bad)
    with pytest.raises(TypeError):
        save_model(object(), tmp_path / "x.lbck")
