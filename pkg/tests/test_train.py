import math

import numpy as np
import pytest
import torch

from pano360.data import HybridData, MixPolicy
from pano360.errors import DomainError
from pano360.losses import LossWeights
from pano360.model import ModelConfig
from pano360.train import (RunConfig, TrainingAborted, dump_run_config, load_run_config, read_log,
                           run_train, shifted_time)

TINY = ModelConfig(blocks=1, heads=2, dim=16, latent_dim=48, width=32, height=16)


def tiny_run(**kw):
    base = dict(model=TINY, width=32, height=16, steps=6, lr=1e-3, grad_accum=1, n_pano=8,
                n_persp=4, sample_steps=4)
    return RunConfig(**{**base, **kw})


def tiny_data(seed=0):
    return HybridData(32, 16, 4, n_pano=8, n_persp=4, seed=seed)


def test_config_ini_round_trip(tmp_path):
    cfg = tiny_run(seed=3, weights=LossWeights(0.25, 1.0), mix=MixPolicy(0.6), target_mode="noise",
                   refine=False)
    dump_run_config(cfg, tmp_path / "c.ini")
    assert load_run_config(tmp_path / "c.ini") == cfg


def test_overrides_and_defaults(tmp_path):
    (tmp_path / "c.ini").write_text("[run]\nsteps = 5\nlr = 0.01\n[model]\nblocks = 2\n")
    cfg = load_run_config(tmp_path / "c.ini", {"steps": 9, "seed": None})
    assert (cfg.steps, cfg.lr, cfg.seed, cfg.model.blocks) == (9, 0.01, 0, 2)
    assert load_run_config().model == ModelConfig()


@pytest.mark.parametrize("text", ["[run]\nbogus = 1\n", "[model]\nbogus = 1\n",
                                  "[run]\nwidth = 100\n", "[weights]\nlambda_cube = -1\n",
                                  "[mix]\np_pano = 2\n"])
def test_invalid_configs(tmp_path, text):
    (tmp_path / "c.ini").write_text(text)
    with pytest.raises(DomainError):
        load_run_config(tmp_path / "c.ini")


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(tmp_path / "nope.ini")


def test_total_steps_from_epochs():
    cfg = tiny_run(steps=0, epochs=3, n_pano=10, batch=2, grad_accum=3)
    assert cfg.total_steps == math.ceil(3 * 10 / 6)


def test_run_writes_log_and_is_deterministic(tmp_path):
    cfg = tiny_run()
    a = run_train(cfg, tmp_path / "a", data=tiny_data())
    b = run_train(cfg, tmp_path / "b", data=tiny_data())
    assert a.read_bytes() == b.read_bytes()
    rows = read_log(tmp_path / "a" / "train.log")
    assert [r["step"] for r in rows] == list(range(1, 7))
    assert all(r["branch"] in ("pano", "persp") for r in rows)
    assert (tmp_path / "a" / "config.ini").exists()


def test_loss_decreases_on_micro_run(tmp_path):
    drops = []
    for seed in range(3):
        cfg = tiny_run(steps=150, seed=seed, mix=MixPolicy(1.0), target_mode="noise", lr=3e-3)
        run_train(cfg, tmp_path / str(seed), data=tiny_data(seed))
        total = [r["total"] for r in read_log(tmp_path / str(seed) / "train.log")]
        drops.append(np.mean(total[-30:]) / np.mean(total[:30]))
    assert np.median(drops) < 0.8


def test_non_finite_loss_aborts_with_dump(tmp_path):
    data = tiny_data()
    data.panos[:] = np.nan
    with pytest.raises(TrainingAborted):
        run_train(tiny_run(mix=MixPolicy(1.0)), tmp_path, data=data)
    assert (tmp_path / "aborted.ckpt").exists()


def test_threads_env(monkeypatch, tmp_path):
    before = torch.get_num_threads()
    monkeypatch.setenv("PANO360_THREADS", "1")
    run_train(tiny_run(steps=1), tmp_path, data=tiny_data())
    assert torch.get_num_threads() == 1
    torch.set_num_threads(before)


def test_shifted_time():
    u = torch.linspace(0, 1, 11, dtype=torch.float64)
    assert torch.allclose(shifted_time(u), 0.001 + 0.998 * u)
    s = shifted_time(u, 3.0)
    assert s[0] == pytest.approx(0.001) and s[-1] == pytest.approx(0.999)
    assert torch.all(s[1:-1] > shifted_time(u)[1:-1])
    assert float(shifted_time(torch.tensor(0.5, dtype=torch.float64), 3.0)) == pytest.approx(0.001 + 0.998 * 0.75)
    with pytest.raises(DomainError):
        tiny_run(time_shift=0.0)
