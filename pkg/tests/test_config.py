import json

import pytest

from sparseinr import config as C
from sparseinr.models import prunable_count


def test_full_preset_echo():
    cfg = C.preset("full")
    m = cfg.meta
    assert (m.outer_lr, m.outer_steps, m.batch_size, m.inner_steps, m.inner_lr,
            m.retrain_steps) == (1e-5, 150_000, 3, 2, 1e-3, 30_000)
    assert cfg.arch.width == 256 and cfg.arch.hidden_layers == 4 and cfg.arch.omega0 == 200.0
    assert cfg.eval.budget == 100 and cfg.eval.lr == 1e-3 and cfg.eval.widths[-1] == 28
    echo = json.loads(cfg.to_json())
    assert echo["meta"]["outer_steps"] == 150_000


def test_ticket_presets():
    assert C.preset("full_ticket").arch.omega0 == 30.0
    assert C.preset("full_ticket_ffn").arch.sigma == 20.0
    t = C.preset("full_ticket").ticket
    assert (t.train_steps, t.lr, t.gamma) == (50_000, 1e-4, 0.2)


def test_desk_preset_schedule_ends_near_one_third():
    cfg = C.preset("desk")
    n = prunable_count(cfg.arch)
    seq = cfg.prune.schedule(n).survivors(n)
    assert [round(s / n, 2) for s in seq[-3:]] == [0.51, 0.41, 0.33]
    assert (cfg.meta.outer_steps, cfg.meta.retrain_steps) == (5000, 1000)


def test_round_trip_through_json():
    for name in C.PRESET_NAMES:
        cfg = C.preset(name)
        assert C.loads(cfg.to_json()) == cfg


def test_partial_config_merges_over_preset():
    cfg = C.from_dict({"preset": "desk", "meta": {"outer_steps": 7}, "precision": "f64"})
    assert cfg.meta.outer_steps == 7 and cfg.meta.retrain_steps == 1000
    assert cfg.precision == "f64" and cfg.arch.width == 64


def test_ffn_width_change_rederives_encoding():
    cfg = C.from_dict({"preset": "full_ffn", "arch": {"width": 64}})
    assert cfg.arch.fourier_dim == 32


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"meta": {"outer_step": 5}},
    {"arch": {"kind": "transformer"}},
    {"prune": {"gamma": 1.5}},
    {"eval": {"widths": [10, 12]}},
    {"precision": "f16"},
    {"preset": "nope"},
    {"meta": {"batch_size": 0}},
    {"data": "synth"},
    [],
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(C.ConfigError):
        C.from_dict(raw)


def test_bad_json_and_missing_file(tmp_path):
    with pytest.raises(C.ConfigError):
        C.loads("{not json")
    with pytest.raises(C.ConfigError):
        C.load(tmp_path / "missing.json")


def test_seed_override_touches_every_seed():
    cfg = C.preset("desk").override(seed=9)
    assert cfg.arch.seed == cfg.meta.seed == cfg.data.seed == cfg.eval.seed == 9
