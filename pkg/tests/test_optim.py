import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparseinr import grad as G
from sparseinr.models import ArchSpec, Mask, init
from sparseinr.optim import (AdamState, MetaConfig, adam_step, inner_adapt, maml_outer_step,
                             mean_adapted_loss, reptile_outer_step, run_meta, sample_batch,
                             sgd_step)
from sparseinr.signals import SignalSet

from conftest import LINEAR, point_signal, random_signal, small_arch

UNIT = point_signal([[1.0]], [[0.0]])


def two_param_mask(bits):
    return Mask(np.array(bits, dtype=bool), np.arange(2), 2)


def sum_cfg(**kw):
    return MetaConfig(inner_lr_units="sum", log_every=0, **kw)


def test_sgd_examples():
    theta = np.array([1.0, 2.0])
    g = np.array([1.0, -1.0])
    full = two_param_mask([1, 1])
    assert np.array_equal(sgd_step(theta, full, g, 0.0), theta)
    assert np.array_equal(sgd_step(theta, full, g, 0.5), [0.5, 2.5])
    assert np.array_equal(sgd_step(theta, two_param_mask([1, 0]), np.array([1.0, 1e9]), 0.5),
                          [0.5, 0.0])


def test_sgd_rejects_non_finite_gradient():
    with pytest.raises(G.NonFiniteError):
        sgd_step(np.zeros(2), two_param_mask([1, 1]), np.array([np.inf, 0.0]), 0.1)


def test_adam_first_step():
    state = AdamState.zeros(1, lr=0.1)
    state, theta = adam_step(state, np.zeros(1), Mask(np.ones(1, bool), np.arange(1), 1),
                             np.array([2.0]))
    assert theta[0] == pytest.approx(-0.1, rel=1e-7)
    assert state.step == 1


def test_adam_zero_gradient_keeps_params_but_counts_step():
    state = AdamState.zeros(2, lr=0.1)
    theta = np.array([0.3, -0.2])
    state, out = adam_step(state, theta, two_param_mask([1, 1]), np.zeros(2))
    assert np.array_equal(out, theta) and state.step == 1


def test_adam_pruned_entry_stays_zero():
    state = AdamState.zeros(2, lr=0.1)
    state, out = adam_step(state, np.array([1.0, 0.0]), two_param_mask([1, 0]),
                           np.array([1.0, 1e30]))
    assert out[1] == 0 and state.m[1] == 0 and state.v[1] == 0


def test_adam_matches_reference_formula(rng):
    g_seq = rng.normal(size=(5, 3))
    theta = rng.normal(size=3)
    state = AdamState.zeros(3, lr=0.01)
    mask = Mask(np.ones(3, bool), np.arange(3), 3)
    m = v = np.zeros(3)
    ref = theta.copy()
    for k, g in enumerate(g_seq, start=1):
        state, theta = adam_step(state, theta, mask, g)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    np.testing.assert_allclose(theta, ref, rtol=1e-13)


def test_inner_adapt_examples(rng):
    theta = np.array([1.0])
    assert np.array_equal(inner_adapt(LINEAR, theta, Mask.ones(LINEAR), UNIT, 0, 0.25), theta)
    assert inner_adapt(LINEAR, theta, Mask.ones(LINEAR), UNIT, 1, 0.25)[0] == 0.5
    arch = small_arch(rng, "siren")
    mask = Mask.ones(arch)
    mask.bits[::2] = False
    out = inner_adapt(arch, init(arch), mask, random_signal(rng, out_dim=arch.out_dim), 3, 1e-2)
    assert not np.any(out[mask.pruned_indices()])


def test_maml_outer_step_examples(rng):
    mask = Mask.ones(LINEAR)
    cfg = sum_cfg(inner_lr=0.25, inner_steps=1, outer_lr=0.01)
    theta, adam = maml_outer_step(LINEAR, np.array([1.0]), mask, [UNIT], cfg,
                                  AdamState.zeros(1, 0.01))
    assert theta[0] == pytest.approx(0.99, abs=1e-8)

    arch = small_arch(rng, "siren")
    p = init(arch)
    s = random_signal(rng, out_dim=arch.out_dim)
    m = Mask.ones(arch)
    # inner_lr -> 0 collapses to one Adam step on the loss gradient
    cfg0 = sum_cfg(inner_lr=1e-300, outer_lr=1e-3)
    got, _ = maml_outer_step(arch, p, m, [s], cfg0, AdamState.zeros(p.size, 1e-3))
    _, want = adam_step(AdamState.zeros(p.size, 1e-3), p, m, G.grad(arch, p, m, s))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    one, _ = maml_outer_step(arch, p, m, [s], cfg0, AdamState.zeros(p.size, 1e-3))
    two, _ = maml_outer_step(arch, p, m, [s, s], cfg0, AdamState.zeros(p.size, 1e-3))
    np.testing.assert_allclose(one, two, rtol=0, atol=1e-15)


def test_maml_sgd_outer_flag_is_literal_update():
    cfg = sum_cfg(inner_lr=0.25, inner_steps=1, outer_lr=0.1, outer_optimizer="sgd")
    theta, adam = maml_outer_step(LINEAR, np.array([1.0]), Mask.ones(LINEAR), [UNIT], cfg, None)
    assert theta[0] == pytest.approx(1 - 0.1 * 0.5)
    assert adam is None


def test_reptile_examples(rng):
    mask = Mask.ones(LINEAR)
    cfg = sum_cfg(inner_lr=0.25, inner_steps=1, outer_lr=0.5, meta_kind="reptile")
    assert reptile_outer_step(LINEAR, np.array([1.0]), mask, [UNIT], cfg)[0] == 0.75
    at_target = point_signal([[1.0]], [[1.0]])
    assert reptile_outer_step(LINEAR, np.array([1.0]), mask, [at_target], cfg)[0] == 1.0
    arch = small_arch(rng, "siren")
    s = random_signal(rng, out_dim=arch.out_dim)
    full = sum_cfg(inner_lr=1e-2, inner_steps=2, outer_lr=1.0, meta_kind="reptile")
    p = init(arch)
    np.testing.assert_allclose(reptile_outer_step(arch, p, Mask.ones(arch), [s], full),
                               inner_adapt(arch, p, Mask.ones(arch), s, 2, 1e-2),
                               rtol=0, atol=1e-15)


def test_mean_units_scale_the_inner_step(rng):
    s = random_signal(rng, n=5)
    assert MetaConfig(inner_lr=0.3).inner_step(s) == pytest.approx(0.3 / 15)
    assert MetaConfig(inner_lr=0.3, inner_lr_units="sum").inner_step(s) == 0.3


def test_sample_batch_is_seeded():
    cfg = MetaConfig(seed=3, batch_size=3)
    a = sample_batch(cfg, 17, 10)
    assert np.array_equal(a, sample_batch(cfg, 17, 10))
    assert a.shape == (3,) and a.min() >= 0 and a.max() < 10
    draws = np.concatenate([sample_batch(cfg, k, 4) for k in range(400)])
    assert np.all(np.bincount(draws, minlength=4) > 200)


def tiny_set(rng, arch, n=4):
    train = [random_signal(rng, n=12, out_dim=arch.out_dim, id=f"t{k}") for k in range(n)]
    return SignalSet(train, [random_signal(rng, n=12, out_dim=arch.out_dim, id="v")])


def test_run_meta_steps_zero_and_determinism(rng):
    arch = ArchSpec(width=8, hidden_layers=2, omega0=5.0)
    data = tiny_set(rng, arch)
    p = init(arch)
    m = Mask.ones(arch)
    cfg = MetaConfig(outer_lr=1e-2, inner_lr=1e-2, log_every=5)
    assert np.array_equal(run_meta(arch, p, m, data, cfg, 0).params, p)
    a = run_meta(arch, p, m, data, cfg, 12)
    b = run_meta(arch, p, m, data, cfg, 12)
    assert np.array_equal(a.params, b.params)
    assert [s for s, _ in a.losses] == [0, 5, 10, 11]


def test_run_meta_resume_is_bit_exact(rng):
    arch = ArchSpec(width=8, hidden_layers=2, omega0=5.0)
    data = tiny_set(rng, arch)
    p, m = init(arch), Mask.ones(arch)
    cfg = MetaConfig(outer_lr=1e-2, inner_lr=1e-2, log_every=0)
    whole = run_meta(arch, p, m, data, cfg, 10).params
    half = run_meta(arch, p, m, data, cfg, 6)
    rest = run_meta(arch, half.params, m, data, cfg, 4, adam=half.adam, start_step=6).params
    assert np.array_equal(whole, rest)


def test_run_meta_reduces_adapted_loss(rng):
    arch = ArchSpec(width=12, hidden_layers=2, omega0=5.0)
    data = tiny_set(rng, arch)
    p, m = init(arch), Mask.ones(arch)
    cfg = MetaConfig(outer_lr=1e-2, inner_lr=1e-2, log_every=0)
    after = run_meta(arch, p, m, data, cfg, 60).params
    assert mean_adapted_loss(arch, after, m, data.train, cfg) < \
        0.5 * mean_adapted_loss(arch, p, m, data.train, cfg)


def test_run_meta_rejects_empty_training_split(rng):
    arch = ArchSpec(width=4, hidden_layers=1)
    with pytest.raises(ValueError):
        run_meta(arch, init(arch), Mask.ones(arch), SignalSet([], []), MetaConfig(), 1)


@pytest.mark.parametrize("bad", [dict(outer_lr=0), dict(inner_lr=-1), dict(batch_size=0),
                                 dict(meta_kind="anil"), dict(inner_steps=-1),
                                 dict(inner_lr_units="pixel")])
def test_meta_config_validation(bad):
    with pytest.raises(ValueError):
        MetaConfig(**bad)


@given(st.integers(0, 10_000), st.sampled_from(["maml", "fomaml", "reptile"]))
def test_meta_kinds_keep_pruned_entries_zero(seed, kind):
    rng = np.random.default_rng(seed)
    arch = small_arch(rng)
    data = tiny_set(rng, arch, n=3)
    mask = Mask.ones(arch)
    mask.bits[rng.random(len(mask)) < 0.4] = False
    cfg = MetaConfig(outer_lr=1e-2, inner_lr=1e-2, meta_kind=kind, log_every=0, seed=seed)
    res = run_meta(arch, init(arch), mask, data, cfg, 3, check_mask=True)
    assert not np.any(res.params[mask.pruned_indices()])
