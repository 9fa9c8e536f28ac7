import dataclasses
import json

import numpy as np
import pytest
from gradcheck import numeric_grad
from hypothesis import given, settings
from hypothesis import strategies as st

from transducer_cl.exceptions import (CheckpointError, CheckpointVersionError, ConfigurationError,
                                      DivergenceError, StateError)
from transducer_cl.model import ParameterStore, Transducer
from transducer_cl.training import (AdamState, Corpora, ElasticPenaltyConfig, FeaturePipeline, LrSchedule,
                                    MixWeights, ParameterSnapshot, StageConfig, adam_step, add_elastic_penalty,
                                    checkpoint_load, checkpoint_save, clip_grad_norm, elastic_penalty, lr_at,
                                    run_recipe, run_stage, sample_batch, set_freeze, train_step)
from transducer_cl.training.checkpoint import FORMAT_VERSION
from transducer_cl.training.stages import format_step, save_stage_checkpoint


def one_param_store(value=0.0, component="decoder"):
    s = ParameterStore()
    s.add("w", component, np.array([value]))
    return s


# --- learning-rate schedule -----------------------------------------------

def test_warmup_is_linear():
    s = LrSchedule(4, 2, 10, 1e-3, 1e-4)
    assert [lr_at(k, s) for k in range(4)] == pytest.approx([2.5e-4, 5e-4, 7.5e-4, 1e-3])


def test_decay_start_is_peak():
    s = LrSchedule(10, 5, 100, 5e-5, 1e-5)
    assert lr_at(15, s) == 5e-5
    assert lr_at(14, s) == 5e-5


def test_decay_end_and_clamp():
    s = LrSchedule(10, 5, 100, 5e-5, 1e-5)
    assert lr_at(115, s) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(10_000, s) == pytest.approx(1e-5, rel=1e-12)


def test_halfway_decay():
    s = LrSchedule(10, 5, 100, 5e-5, 1e-5)
    assert lr_at(65, s) == pytest.approx(2.2361e-5, abs=1e-9)


def test_constant_schedule():
    s = LrSchedule.constant(1e-5)
    assert {lr_at(k, s) for k in (0, 1, 100)} == {1e-5}


@settings(max_examples=50, deadline=None)
@given(W=st.integers(0, 20), H=st.integers(0, 20), D=st.integers(0, 50),
       peak=st.floats(1e-5, 1e-1), ratio=st.floats(0.01, 1.0))
def test_schedule_monotone_after_warmup(W, H, D, peak, ratio):
    s = LrSchedule(W, H, D, peak, peak * ratio)
    lrs = [lr_at(k, s) for k in range(W + H + D + 5)]
    after = lrs[W:]
    assert all(a >= b - 1e-18 for a, b in zip(after, after[1:]))
    assert all(lr <= peak * (1 + 1e-12) for lr in lrs)
    assert min(after) >= peak * ratio * (1 - 1e-12)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        LrSchedule(0, 0, 0, 1e-4, 1e-3)
    with pytest.raises(ConfigurationError):
        LrSchedule(-1, 0, 0, 1e-3, 1e-3)


# --- Adam, clipping, freezing ----------------------------------------------

def test_adam_first_step():
    s = one_param_store()
    s.g("w")[...] = 1.0
    adam_step(s, 0.1, AdamState.for_params(s))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert s.v("w")[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert s.v("w")[0] == pytest.approx(-0.0999999990, abs=1e-10)


def test_adam_zero_gradient():
    s = one_param_store(0.3)
    state = AdamState.for_params(s)
    s.g("w")[...] = 1.0
    adam_step(s, 0.1, state)
    m_before, v_before, w_before = state.m["w"].copy(), state.v["w"].copy(), s.v("w").copy()
    s.zero_grad()
    adam_step(s, 0.0, state)
    assert np.array_equal(s.v("w"), w_before)
    assert state.m["w"][0] == pytest.approx(0.9 * m_before[0])
    assert state.v["w"][0] == pytest.approx(0.999 * v_before[0])


def test_adam_state_mismatch():
    s = one_param_store()
    with pytest.raises(StateError):
        adam_step(s, 0.1, AdamState(0, {"w": np.zeros(2)}, {"w": np.zeros(2)}))
    with pytest.raises(StateError):
        adam_step(s, 0.1, AdamState())


def test_adam_skips_frozen_components():
    s = one_param_store(component="encoder")
    s.add("d", "decoder", np.zeros(1))
    state = AdamState.for_params(s)
    s.g("w")[...] = 1.0
    s.g("d")[...] = 1.0
    set_freeze(s, True)
    adam_step(s, 0.1, state)
    assert s.v("w")[0] == 0.0 and state.m["w"][0] == 0.0
    assert s.v("d")[0] != 0.0
    set_freeze(s, False)
    adam_step(s, 0.1, state)
    assert s.v("w")[0] != 0.0


def test_clip_grad_norm():
    s = ParameterStore()
    s.add("a", "joint", np.zeros(2))
    s.g("a")[...] = [3.0, 4.0]
    assert clip_grad_norm(s, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(s.g("a"), [0.6, 0.8])
    assert clip_grad_norm(s, 5.0) == pytest.approx(1.0)
    np.testing.assert_allclose(s.g("a"), [0.6, 0.8])


# --- elastic penalty ---------------------------------------------------------

def test_elastic_hand_value():
    s = ParameterStore()
    s.add("a", "decoder", np.array([0.5, -1.0]))
    snap = ParameterSnapshot({"a": np.zeros(2)})
    J, grads = elastic_penalty(s, ElasticPenaltyConfig(0.5, snapshot=snap))
    assert J == pytest.approx(0.625)
    np.testing.assert_allclose(grads["a"], [0.5, -1.0])


def test_elastic_zero_distance():
    s = ParameterStore()
    s.add("a", "decoder", np.array([0.5, -1.0]))
    cfg = ElasticPenaltyConfig(3.0, snapshot=ParameterSnapshot.take(s, {"decoder"}))
    assert add_elastic_penalty(s, cfg) == 0.0
    assert np.all(s.g("a") == 0.0)


def test_elastic_gradient_finite_differences():
    rng = np.random.default_rng(0)
    s = ParameterStore()
    s.add("a", "decoder", rng.normal(size=5))
    s.add("b", "joint", rng.normal(size=3))
    snap = ParameterSnapshot({"a": rng.normal(size=5), "b": rng.normal(size=3)})
    cfg = ElasticPenaltyConfig(0.7, frozenset({"decoder", "joint"}), snap)
    _, grads = elastic_penalty(s, cfg)
    for name in ("a", "b"):
        num = numeric_grad(lambda: elastic_penalty(s, cfg)[0], s.v(name))
        assert np.max(np.abs(num - grads[name])) < 1e-8


def test_elastic_scope_and_mismatch():
    s = ParameterStore()
    s.add("a", "decoder", np.ones(2))
    s.add("e", "encoder", np.ones(2))
    snap = ParameterSnapshot.take(s, {"decoder"})
    assert snap.names() == ["a"]
    with pytest.raises(ConfigurationError):
        elastic_penalty(s, ElasticPenaltyConfig(1.0, frozenset({"decoder", "encoder"}), snap))
    with pytest.raises(ConfigurationError):
        elastic_penalty(s, ElasticPenaltyConfig(1.0, snapshot=ParameterSnapshot({"a": np.ones(3)})))
    with pytest.raises(ConfigurationError):
        elastic_penalty(s, ElasticPenaltyConfig(1.0))
    with pytest.raises(ConfigurationError):
        ElasticPenaltyConfig(-1.0)
    with pytest.raises(ConfigurationError):
        ElasticPenaltyConfig(1.0, frozenset({"attention"}))


def test_snapshot_is_read_only_copy():
    s = one_param_store(1.0)
    snap = ParameterSnapshot.take(s, {"decoder"})
    s.v("w")[0] = 2.0
    assert snap["w"][0] == 1.0
    with pytest.raises(ValueError):
        snap["w"][0] = 3.0


# --- sampling ----------------------------------------------------------------

@pytest.mark.parametrize("mix,expected", [((95, 5), 0.05), ((98, 2), 0.02)])
def test_mixture_fraction(mix, expected):
    real, synth = ["r"], ["s"]
    batch = sample_batch(real, synth, MixWeights(*mix), 100_000, np.random.default_rng(7))
    assert abs(batch.count("s") / len(batch) - expected) <= 0.005


def test_real_only_mix():
    batch = sample_batch(["r1", "r2"], [], MixWeights.real_only(), 1000, np.random.default_rng(0))
    assert set(batch) == {"r1", "r2"}


def test_mix_validation():
    with pytest.raises(ConfigurationError):
        MixWeights(90, 5)
    with pytest.raises(ConfigurationError):
        MixWeights(105, -5)
    with pytest.raises(ConfigurationError):
        sample_batch(["r"], [], MixWeights(95, 5), 4, np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        sample_batch([], ["s"], MixWeights(95, 5), 4, np.random.default_rng(0))


def test_pipeline_augments_synthetic_only(tiny_corpora, tiny_pipeline):
    real, synth = tiny_corpora.real[0], tiny_corpora.synthetic[0]
    pipe = dataclasses.replace(tiny_pipeline, spec_config=None, _cache={})
    assert np.array_equal(pipe.training(real, 1, 2), pipe.clean(real))
    outs = {pipe.training(synth, seed, 0).tobytes() for seed in range(8)}
    assert len(outs) > 1
    assert np.array_equal(pipe.training(synth, 3, 0), pipe.training(synth, 3, 0))


def test_pipeline_requires_pools():
    with pytest.raises(ConfigurationError):
        FeaturePipeline().validate(needs_synthetic=True)
    FeaturePipeline().validate(needs_synthetic=False)


# --- stages ------------------------------------------------------------------

def stage(**kw):
    base = dict(name="s", schedule=LrSchedule.constant(3e-3), steps=6, batch_size=2, seed=11)
    base.update(kw)
    return StageConfig(**base)


def test_stage_validation():
    with pytest.raises(ConfigurationError):
        stage(steps=0)
    with pytest.raises(ConfigurationError):
        stage(batch_size=0)


def test_single_step_stage(tiny_model, tiny_corpora, tiny_pipeline):
    before = tiny_model.params.copy()
    r = run_stage(tiny_model, tiny_corpora, stage(steps=1), tiny_pipeline)
    assert r.steps_run == 1 and r.completed
    assert not tiny_model.params.equals(before)
    assert r.log_lines()[0].startswith("step 0 lr 0.003 loss ")


def test_format_step():
    assert format_step(3, 1e-5, 2.5, 0.0) == "step 3 lr 1e-05 loss 2.5 penalty 0"


def test_freeze_keeps_encoder_bit_identical(tiny_model, tiny_corpora, tiny_pipeline):
    enc_before = {p.name: p.value.copy() for p in tiny_model.params.in_components({"encoder"})}
    other_before = {p.name: p.value.copy() for p in tiny_model.params if p.component != "encoder"}
    run_stage(tiny_model, tiny_corpora, stage(mix=MixWeights(95, 5), freeze_encoder=True, steps=20),
              tiny_pipeline)
    for name, v in enc_before.items():
        assert np.array_equal(tiny_model.params.v(name), v)
    assert all(not np.array_equal(tiny_model.params.v(n), v) for n, v in other_before.items())
    run_stage(tiny_model, tiny_corpora, stage(steps=2), tiny_pipeline)
    assert any(not np.array_equal(tiny_model.params.v(n), v) for n, v in enc_before.items())


def test_zero_lambda_matches_unpenalized(tiny_model, tiny_corpora, tiny_pipeline):
    a = tiny_model.copy()
    b = tiny_model.copy()
    ra = run_stage(a, tiny_corpora, stage(), tiny_pipeline)
    rb = run_stage(b, tiny_corpora, stage(elastic=ElasticPenaltyConfig(0.0)), tiny_pipeline)
    assert ra.losses == rb.losses
    assert a.params.equals(b.params)
    assert all(p == 0.0 for p in rb.penalties)


def test_huge_lambda_pins_decoder(tiny_model, tiny_corpora, tiny_pipeline):
    snap = ParameterSnapshot.take(tiny_model.params, {"decoder"})
    run_stage(tiny_model, tiny_corpora, stage(elastic=ElasticPenaltyConfig(1e6), steps=30,
                                              schedule=LrSchedule.constant(1e-3)), tiny_pipeline)
    for name in snap.names():
        assert np.max(np.abs(tiny_model.params.v(name) - snap[name])) < 1e-3


def test_divergence_guard(tiny_model, tiny_corpora, tiny_pipeline):
    tiny_model.params.v("joint.out.b")[0] = np.nan
    with pytest.raises(DivergenceError):
        run_stage(tiny_model, tiny_corpora, stage(steps=1), tiny_pipeline)


def test_train_step_reports_norm(tiny_model, tiny_corpora, tiny_pipeline):
    batch = list(tiny_corpora.real[:2])
    feats = [tiny_pipeline.clean(u) for u in batch]
    loss, pen, norm = train_step(tiny_model, batch, feats, 1e-3, AdamState.for_params(tiny_model.params))
    assert loss > 0 and pen == 0.0 and norm > 0


def test_stage_is_deterministic(tiny_model, tiny_corpora, tiny_pipeline):
    a, b = tiny_model.copy(), tiny_model.copy()
    st_ = stage(mix=MixWeights(50, 50))
    ra = run_stage(a, tiny_corpora, st_, tiny_pipeline)
    rb = run_stage(b, tiny_corpora, st_, dataclasses.replace(tiny_pipeline, _cache={}))
    assert ra.losses == rb.losses
    assert a.params.equals(b.params)


def test_recipe_snapshot_is_previous_stage(tiny_model, tiny_corpora, tiny_pipeline, tmp_path):
    stages = [stage(name="a", mix=MixWeights(95, 5), freeze_encoder=True, steps=3),
              stage(name="b", mix=MixWeights(98, 2), steps=3),
              stage(name="c", elastic=ElasticPenaltyConfig(0.5, frozenset({"decoder", "joint"})), steps=3),
              stage(name="d", steps=3)]
    rep = run_recipe(tiny_model, tiny_corpora, stages, tiny_pipeline, tmp_path)
    assert [p.name for p in rep.checkpoints] == ["stage1_a.npz", "stage2_b.npz", "stage3_c.npz", "stage4_d.npz"]
    snap = rep.stages[2].snapshot
    after_b = checkpoint_load(rep.checkpoints[1]).model.params
    for name in snap.names():
        assert np.array_equal(snap[name], after_b.v(name))
    assert rep.stages[2].penalties[0] == 0.0
    assert rep.stages[2].penalties[-1] > 0.0
    assert "encoder" not in tiny_model.params.frozen


def test_single_stage_recipe_equals_run_stage(tiny_model, tiny_corpora, tiny_pipeline):
    a, b = tiny_model.copy(), tiny_model.copy()
    run_stage(a, tiny_corpora, stage(), tiny_pipeline)
    run_recipe(b, tiny_corpora, [stage()], tiny_pipeline)
    assert a.params.equals(b.params)


def test_recipe_needs_stages(tiny_model, tiny_corpora):
    with pytest.raises(ConfigurationError):
        run_recipe(tiny_model, tiny_corpora, [])


def test_synthetic_stage_needs_pools(tiny_model, tiny_corpora):
    with pytest.raises(ConfigurationError):
        run_stage(tiny_model, tiny_corpora, stage(mix=MixWeights(95, 5)), FeaturePipeline())


# --- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip(tiny_model, tiny_corpora, tiny_pipeline, tmp_path):
    r = run_stage(tiny_model, tiny_corpora, stage(elastic=ElasticPenaltyConfig(0.1), steps=2), tiny_pipeline)
    path = save_stage_checkpoint(tmp_path / "c.npz", tiny_model, r, 0)
    ck = checkpoint_load(path)
    assert ck.model.params.equals(tiny_model.params)
    assert ck.model.config == tiny_model.config
    assert ck.adam.step == r.adam.step == 2
    for name in r.adam.m:
        assert np.array_equal(ck.adam.m[name], r.adam.m[name])
        assert np.array_equal(ck.adam.v[name], r.adam.v[name])
    assert ck.rng_state == r.rng.bit_generator.state
    assert ck.meta["step"] == 2 and ck.meta["completed"]
    assert ck.snapshot.names() == r.snapshot.names()
    assert not list(tmp_path.glob("*.tmp"))


def test_resume_reproduces_trajectory(tiny_model, tiny_corpora, tiny_pipeline, tmp_path):
    st_ = stage(mix=MixWeights(70, 30), elastic=ElasticPenaltyConfig(0.2), steps=8,
                schedule=LrSchedule(2, 2, 4, 3e-3, 1e-3))
    full = tiny_model.copy()
    r_full = run_stage(full, tiny_corpora, st_, tiny_pipeline)

    part = tiny_model.copy()
    r1 = run_stage(part, tiny_corpora, st_, tiny_pipeline, stop_after=3)
    assert not r1.completed
    path = save_stage_checkpoint(tmp_path / "mid.npz", part, r1, 0)
    ck = checkpoint_load(path)
    r2 = run_stage(ck.model, tiny_corpora, st_, tiny_pipeline, resume=ck)
    assert r1.losses + r2.losses == r_full.losses
    assert ck.model.params.equals(full.params)


def _rewrite_header(path, **changes):
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(bytes(arrays["header"]).decode())
    header.update(changes)
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def test_checkpoint_version_error(tiny_model, tmp_path):
    path = checkpoint_save(tmp_path / "c.npz", tiny_model)
    assert checkpoint_load(path).adam is None
    _rewrite_header(path, format_version="transducer-cl-ckpt/999")
    with pytest.raises(CheckpointVersionError):
        checkpoint_load(path)
    assert FORMAT_VERSION != "transducer-cl-ckpt/999"


def test_corrupt_checkpoint(tmp_path):
    p = tmp_path / "bad.npz"
    p.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        checkpoint_load(p)
