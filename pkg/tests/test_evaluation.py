import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparseinr.evaluation import (DEFAULT_WIDTHS, WidthTable, bits_per_pixel,
                                  dense_narrow_width_for, draw_signals, evaluate, fit_signal,
                                  psnr, render, write_reports_csv, write_reports_json)
from sparseinr.models import ArchSpec, Mask, dense_count, init, param_count
from sparseinr.signals import Signal, SignalSet, synth_set

BASE = ArchSpec(width=256, hidden_layers=4)


def test_psnr_examples():
    assert psnr(0.01) == pytest.approx(20.0)
    assert psnr(1.0) == 0.0
    assert psnr(0.0) == pytest.approx(120.0)
    with pytest.raises(ValueError):
        psnr(-1e-3)


@given(st.floats(1e-12, 1e3), st.floats(1e-12, 1e3))
def test_psnr_monotone(a, b):
    if a < b:
        assert psnr(a) > psnr(b)


def test_bits_per_pixel_examples():
    assert bits_per_pixel(8704, 32, 178, 178) == pytest.approx(8704 * 32 / 31684, abs=1e-9)
    assert bits_per_pixel(8704, 32, 178, 178, half_precision=True) == \
        bits_per_pixel(8704, 32, 178, 178) / 2
    assert bits_per_pixel(1, 1, 1, 1) == 1.0


def test_width_table():
    assert WidthTable() == DEFAULT_WIDTHS
    for bad in ([10, 12], [10, 9], [8, 8], []):
        with pytest.raises(ValueError):
            WidthTable(bad)


def test_dense_narrow_selection():
    assert dense_narrow_width_for(DEFAULT_WIDTHS, BASE, dense_count(BASE)) == 256
    # closed-form count of a 2 -> w -> ... -> w -> 3 SIREN with four hidden layers
    def count(w):
        return (2 * w + w) + 3 * (w * w + w) + (3 * w + 3)
    oracle = min(w for w in DEFAULT_WIDTHS if count(w) >= 8704)
    assert oracle == 54
    assert dense_narrow_width_for(DEFAULT_WIDTHS, BASE, 8704) == oracle
    with pytest.raises(ValueError):
        dense_narrow_width_for(DEFAULT_WIDTHS, BASE, dense_count(BASE) + 1)


@given(st.integers(1, 198_915))
def test_dense_narrow_is_smallest_adequate(target):
    w = dense_narrow_width_for(DEFAULT_WIDTHS, BASE, target)
    assert dense_count(BASE.replace(width=w)) >= target
    i = DEFAULT_WIDTHS.index(w)
    if i + 1 < len(DEFAULT_WIDTHS):
        assert dense_count(BASE.replace(width=DEFAULT_WIDTHS[i + 1])) < target


def test_fit_budget_zero_and_constant_image():
    arch = ArchSpec(width=32, hidden_layers=2, omega0=30.0)
    s = Signal.from_image(np.full((16, 16, 3), 0.5), "flat")
    p = init(arch)
    same, traj = fit_signal(arch, p, Mask.ones(arch), s, 0)
    assert np.array_equal(same, p) and traj.shape == (1,)
    _, traj = fit_signal(arch, p, Mask.ones(arch), s, 100)
    assert traj[-1] > 40


def test_fit_keeps_pruned_entries_zero_and_finite():
    arch = ArchSpec(width=16, hidden_layers=2, omega0=30.0)
    data = synth_set(0, 2, 16)
    mask = Mask.ones(arch)
    mask.bits[::3] = False
    params, traj = fit_signal(arch, init(arch), mask, data.train[0], 50)
    assert np.all(np.isfinite(traj)) and not np.any(params[mask.pruned_indices()])


def _set():
    return synth_set(3, 4, 12)


def test_evaluate_single_signal_matches_fit():
    arch = ArchSpec(width=8, hidden_layers=2, omega0=30.0)
    data = _set()
    p, m = init(arch), Mask.ones(arch)
    rep = evaluate(arch, p, m, data, n_signals=1, budget=10, seed=4)
    sig = {s.id: s for s in data.val}[rep.signal_ids[0]]
    assert np.array_equal(rep.trajectories[0], fit_signal(arch, p, m, sig, 10)[1])
    assert rep.trajectories.shape == (1, 11)


def test_evaluate_is_deterministic_and_consistent():
    arch = ArchSpec(width=8, hidden_layers=2, omega0=30.0)
    data = _set()
    p, m = init(arch), Mask.ones(arch)
    a = evaluate(arch, p, m, data, n_signals=3, budget=5, seed=1)
    b = evaluate(arch, p, m, data, n_signals=3, budget=5, seed=1, workers=3)
    assert np.array_equal(a.trajectories, b.trajectories) and a.signal_ids == b.signal_ids
    assert a.mean_psnr == pytest.approx(np.mean(a.summary()["per_signal_psnr"]), rel=1e-9)
    other = evaluate(arch.replace(width=6), init(arch.replace(width=6)),
                     Mask.ones(arch.replace(width=6)), data, n_signals=3, budget=5, seed=1)
    assert other.signal_ids == a.signal_ids
    assert a.surviving_params == a.total_params == param_count(arch)
    assert a.bits_per_pixel == pytest.approx(param_count(arch) * 32 / 144)


def test_evaluate_empty_split_fails():
    arch = ArchSpec(width=4, hidden_layers=1)
    data = SignalSet(_set().train, [])
    with pytest.raises(ValueError):
        evaluate(arch, init(arch), Mask.ones(arch), data)


def test_draw_signals_without_replacement():
    ids = draw_signals(list(range(10)), 7, seed=2)
    assert len(set(ids)) == 7 and ids == draw_signals(list(range(10)), 7, seed=2)
    assert sorted(draw_signals(list(range(3)), 10, seed=0)) == [0, 1, 2]


def test_report_files(tmp_path):
    arch = ArchSpec(width=4, hidden_layers=1, omega0=30.0)
    rep = evaluate(arch, init(arch), Mask.ones(arch), _set(), n_signals=2, budget=3,
                   method="scratch")
    write_reports_csv(tmp_path / "r.csv", [rep])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "method,seed,surviving_params,total_params,step,mean_psnr,std_psnr"
    assert len(lines) == 1 + 4
    write_reports_json(tmp_path / "r.json", [rep], config={"k": 1})
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["config"] == {"k": 1}
    assert payload["reports"][0]["method"] == "scratch"


def test_render_zero_network_is_black(tmp_path):
    arch = ArchSpec(width=4, hidden_layers=1)
    img = render(arch, np.zeros(param_count(arch)), None, 5, 6, tmp_path / "z.ppm")
    assert img.shape == (5, 6, 3) and not img.any()
    assert (tmp_path / "z.ppm").read_bytes().startswith(b"P6")


def test_render_error_consistent_with_psnr():
    arch = ArchSpec(width=32, hidden_layers=2, omega0=30.0)
    s = synth_set(0, 2, 16).train[0]
    fitted, traj = fit_signal(arch, init(arch), Mask.ones(arch), s, 60)
    img = render(arch, fitted, None, 16, 16).astype(np.float64) / 255
    rms_render = math.sqrt(np.mean((img - s.image) ** 2))
    rms_fit = math.sqrt(10 ** (-traj[-1] / 10))
    assert rms_render <= rms_fit + 0.5 / 255 + 1e-12
    assert np.mean(np.abs(img - s.image)) <= rms_fit + 0.5 / 255
