import base64
import json

import numpy as np
import pytest

import ltgan


def tiny_config(**extra):
    overrides = {
        "data.kind": "shapes",
        "train.steps": "6",
        "train.batch": "4",
        "train.warmup": "2",
        "data.shapes_count": "600",
        "eval.fid_samples": "500",
    }
    overrides.update(extra)
    return ltgan.Config("", overrides)


def test_config_round_trip_and_errors():
    c = tiny_config()
    assert c.get("train.steps") == "6"
    assert ltgan.Config(c.canonical()).canonical() == c.canonical()
    assert "train.sigma_eps" in ltgan.Config.keys()
    with pytest.raises(ltgan.ConfigKeyError, match="trian.seed"):
        ltgan.Config("", {"trian.seed": "1"})
    with pytest.raises(ValueError):
        c.set("train.sigma_eps", "3")


def test_training_is_deterministic(tmp_path):
    a = ltgan.Trainer(tiny_config())
    b = ltgan.Trainer(tiny_config())
    a.train()
    b.train()
    assert a.current_step == 6
    assert a.checkpoint_bytes() == b.checkpoint_bytes()
    assert a.metrics_csv() == b.metrics_csv()
    assert np.isfinite(a.last_metric("proxy_fid"))

    z = np.random.default_rng(0).normal(size=(3, 64))
    imgs = a.generate(z)
    assert imgs.shape == (3, 1, 16, 16)
    assert np.all(np.abs(imgs) <= 1.0)

    path = str(tmp_path / "run.ltgn")
    a.save_checkpoint(path)
    model = ltgan.Model.load(path)
    assert model.step == 6
    assert model.latent_dim == 64
    np.testing.assert_array_equal(model.generate(z), imgs)
    with pytest.raises(ValueError):
        model.generate(np.zeros((2, 5)))


def test_step_reports_losses():
    t = ltgan.Trainer(tiny_config())
    first = t.step()
    assert "l_d" in first and "l_a" not in first  # warmup
    t.step()
    later = t.step()
    assert {"l_d", "l_g_adv", "l_a", "total_g"} <= later.keys()


def test_service_generate_is_replayable(tmp_path):
    t = ltgan.Trainer(tiny_config())
    t.train()
    path = str(tmp_path / "run.ltgn")
    t.save_checkpoint(path)
    svc = ltgan.Service(path)
    status, info = ltgan.request(svc, "GET", "/v1/model/info")
    assert status == 200
    assert info["latent_dim"] == 64
    assert info["image_shape"] == [1, 16, 16]

    latent = [0.1 * i for i in range(64)]
    replies = {svc.handle("POST", "/v1/generate", json.dumps({"latent": latent}))[1] for _ in range(5)}
    assert len(replies) == 1
    body = json.loads(replies.pop())
    assert base64.b64decode(body["image"])[:8] == b"\x89PNG\r\n\x1a\n"
    expected = t.generate(np.array([latent])).ravel()
    np.testing.assert_array_equal(np.array(body["raw"]), expected)

    status, err = ltgan.request(svc, "POST", "/v1/generate", {"latent": [0.0]})
    assert status == 400 and "error" in err
    assert ltgan.request(svc, "GET", "/v1/nothing")[0] == 404


def test_corrupt_checkpoint_is_rejected(tmp_path):
    t = ltgan.Trainer(tiny_config())
    data = bytearray(t.checkpoint_bytes())
    data[len(data) // 2] ^= 0xFF
    path = tmp_path / "bad.ltgn"
    path.write_bytes(bytes(data))
    with pytest.raises(ltgan.CheckpointError):
        ltgan.Model.load(str(path))
