import math

import numpy as np
import pytest

from pernn.autodiff import DomainError, Tape, check_gradient
from pernn.blocks import build_skip_layer, skip_layer_parameter_count
from pernn.models import ModelSpec, PernnModel, build_model, default_spec, forward_pernn
from pernn.rng import stream


def steering_inputs(n=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, 45))
    x[:, 6:25] = rng.uniform(5, 200, (n, 19))
    x[:, 25:44] = 200.0
    x[:, 44] = 2.5
    return x, {"wheelbase": np.full((n, 1), 2.5)}


def nee_inputs(n=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, 29))
    return x, {"t_air": rng.uniform(0, 25, (n, 1)), "nee_t": rng.normal(2, 1, (n, 1))}


def copy_weights_by_name(src: PernnModel, dst: PernnModel):
    by_name = {p.name: p for p in src.tape.params.values()}
    for p in dst.tape.params.values():
        if p.name in by_name:
            p.value[...] = by_name[p.name].value


# -- skip layer ---------------------------------------------------------------

def test_skip_layer_parameter_count_formula():
    # in*h + h (affine) + 2h (bn) + (in+h)*out + out (projection)
    assert skip_layer_parameter_count(4, 8, 4) == 108
    t = Tape()
    x = t.input("x")
    built = build_skip_layer(t, x, 4, 8, 4, stream(0, "t"), "s")
    n_params = sum(t.params[h].value.size for h in built.params)
    assert n_params == 108


def test_skip_layer_identity_reachable():
    t = Tape()
    x = t.input("x")
    built = build_skip_layer(t, x, 3, 5, 3, stream(1, "t"), "s")
    # projection maps the x-part with identity, activation part with zero
    proj_w = t.params[built.params[-2]]
    proj_b = t.params[built.params[-1]]
    proj_w.value[...] = 0.0
    proj_w.value[:, :3] = np.eye(3)
    proj_b.value[...] = 0.0
    t.mark_output("y", built.out)
    xs = np.random.default_rng(2).normal(0, 1, (6, 3))
    out = t.forward({"x": xs})["y"]
    np.testing.assert_allclose(out, xs, atol=1e-12)


def test_skip_layer_gradcheck():
    t = Tape()
    x = t.input("x")
    built = build_skip_layer(t, x, 4, 6, 3, stream(3, "t"), "s")
    loss = t.sum(t.square(built.out))
    t.forward({"x": np.random.default_rng(4).normal(0, 1, (5, 4))})
    assert check_gradient(t, loss, 1e-5) <= 1e-4


def test_skip_layer_width_validation():
    t = Tape()
    x = t.input("x")
    with pytest.raises(ValueError):
        build_skip_layer(t, x, 0, 4, 4, stream(0, "t"), "s")


# -- parameter counts -----------------------------------------------------------

def test_physics_block_alone_has_zero_parameters():
    from pernn.steering.physics import PurePursuitBlock

    t = Tape()
    inter = {"lookahead": t.input("lookahead"), "heading": t.input("heading")}
    raws = {"wheelbase": t.input("wheelbase")}
    PurePursuitBlock().build(t, inter, raws)
    assert sum(p.value.size for p in t.trainable()) == 0


def test_plain_stack_parameter_count():
    # learning trunk [32,16,8] + 2 single-column heads on 45 inputs:
    # 45*32+32 + 32*16+16 + 16*8+8 + 8*2+2
    model = build_model(default_spec("steering", "PENN", seed=0))
    assert model.parameter_count() == 2154


def test_pernn_count_is_learning_plus_residual():
    pernn = build_model(default_spec("steering", "PERNN", seed=0))
    penn = build_model(default_spec("steering", "PENN", seed=0))
    residual = 8 * 8 + 8 + 8 * 4 + 4 + 4 * 1 + 1  # [8,4] hidden + linear head
    assert pernn.parameter_count() == penn.parameter_count() + residual


def test_parameter_count_stable_under_use():
    model = build_model(default_spec("steering", "PERNN", seed=1))
    before = model.parameter_count()
    x, extra = steering_inputs()
    extra["delta"] = np.zeros((4, 1))
    model.forward_batch(x, extra, training=True)
    model.tape.backward(model.losses["data"])
    assert model.parameter_count() == before


# -- forward composition -----------------------------------------------------------

def test_pernn_output_is_physics_plus_residual():
    model = build_model(default_spec("steering", "PERNN", seed=2))
    x, extra = steering_inputs(8, seed=5)
    out = forward_pernn(model, x, extra)
    np.testing.assert_allclose(out["physics_out"] + out["residual_out"],
                               out["output"], atol=1e-15)


def test_penn_equals_pernn_minus_residual_with_shared_weights():
    pernn = build_model(default_spec("steering", "PERNN", seed=3))
    penn = build_model(default_spec("steering", "PENN", seed=4))
    copy_weights_by_name(pernn, penn)
    x, extra = steering_inputs(6, seed=6)
    a = forward_pernn(pernn, x, extra)
    b = forward_pernn(penn, x, extra)
    np.testing.assert_allclose(a["output"] - a["residual_out"], b["output"], atol=1e-12)


def test_zero_residual_weights_give_physics_exactly():
    model = build_model(default_spec("steering", "PERNN", seed=5))
    for p in model.tape.params.values():
        if p.name.startswith("residual"):
            p.value[...] = 0.0
    x, extra = steering_inputs(5, seed=7)
    out = forward_pernn(model, x, extra)
    np.testing.assert_array_equal(out["output"], out["physics_out"])


def test_frozen_heads_steering_zero_heading():
    model = build_model(default_spec("steering", "PERNN", seed=6))
    by_name = {p.name: p for p in model.tape.params.values()}
    # heading head -> 0 (tanh(0) = 0); lookahead head -> l = 10
    by_name["head.heading.w"].value[...] = 0.0
    by_name["head.heading.b"].value[...] = 0.0
    by_name["head.lookahead.w"].value[...] = 0.0
    by_name["head.lookahead.b"].value[...] = math.log((10.0 - 0.5) / (200.0 - 10.0))
    x, extra = steering_inputs(5, seed=8)
    out = forward_pernn(model, x, extra)
    np.testing.assert_allclose(out["intermediates"]["heading"], 0.0, atol=1e-15)
    np.testing.assert_allclose(out["intermediates"]["lookahead"], 10.0, atol=1e-9)
    np.testing.assert_allclose(out["physics_out"], 0.0, atol=1e-15)
    np.testing.assert_allclose(out["output"], out["residual_out"], atol=1e-15)


def test_frozen_dtdt_nee_zero_physics():
    model = build_model(default_spec("nee", "PERNN", seed=7))
    by_name = {p.name: p for p in model.tape.params.values()}
    by_name["head.dtdt.w"].value[...] = 0.0
    by_name["head.dtdt.b"].value[...] = 0.0
    x, extra = nee_inputs(5, seed=9)
    out = forward_pernn(model, x, extra)
    np.testing.assert_allclose(out["physics_out"], 0.0, atol=1e-18)


def test_forward_pernn_rejects_baselines():
    model = build_model(default_spec("steering", "FCNN", seed=8))
    x, extra = steering_inputs()
    with pytest.raises(ValueError):
        forward_pernn(model, x, extra)


def test_nee_domain_error_names_variable():
    model = build_model(default_spec("nee", "PERNN", seed=9))
    x, extra = nee_inputs(3, seed=10)
    extra["t_air"] = np.full((3, 1), -60.0)  # below the Lloyd-Taylor offset
    with pytest.raises(DomainError) as exc:
        model.forward_batch(x, extra)
    assert exc.value.variable == "t_air"


def test_intermediates_finite_for_finite_inputs():
    model = build_model(default_spec("nee", "PERNN", seed=10))
    rng = np.random.default_rng(11)
    x = rng.normal(0, 50, (64, 29))  # wild but finite inputs
    out = model.forward_batch(x, {"t_air": rng.uniform(-20, 40, (64, 1)),
                                  "nee_t": rng.normal(0, 5, (64, 1))})
    for name, val in out["intermediates"].items():
        assert np.all(np.isfinite(val)), name


# -- residual gradient pathway ---------------------------------------------------

def gradient_norm_over_learning_block(model, x, extra):
    extra = dict(extra)
    extra["delta" if model.spec.domain == "steering" else "nee_next"] = \
        np.ones((x.shape[0], 1))
    model.forward_batch(x, extra, training=True)
    grads = model.tape.backward(model.losses["data"])
    total = 0.0
    for handle, g in grads.items():
        if model.tape.params[handle].name.startswith(("learn", "head")):
            total += float(np.sum(g * g))
    return math.sqrt(total)


def test_zero_jacobian_stub_blocks_penn_but_not_pernn():
    x, extra = steering_inputs(16, seed=12)
    pernn = build_model(default_spec("steering", "PERNN", seed=11, physics_stub=True))
    penn = build_model(default_spec("steering", "PENN", seed=11, physics_stub=True))
    assert gradient_norm_over_learning_block(pernn, x, extra) > 0.0
    assert gradient_norm_over_learning_block(penn, x, extra) == 0.0


# -- serialization ------------------------------------------------------------------

@pytest.mark.parametrize("domain,variant", [
    ("steering", "PERNN"), ("steering", "FCNN"),
    ("nee", "PERNN"), ("nee", "PINN"),
])
def test_serialization_round_trip_bit_exact(tmp_path, domain, variant):
    model = build_model(default_spec(domain, variant, seed=13))
    if domain == "nee":
        x, extra = nee_inputs(10, seed=14)
        # exercise batch-norm running stats before saving
        extra_t = dict(extra)
        extra_t["nee_next"] = np.zeros((10, 1))
        model.forward_batch(x, extra_t, training=True)
    else:
        x, extra = steering_inputs(10, seed=14)
    model.set_scaler(x.mean(axis=0), x.std(axis=0),
                     (x.std(axis=0) >= 1e-9).astype(float))
    path = tmp_path / "model.bin"
    model.save(str(path))
    loaded = PernnModel.load(str(path))
    a = model.forward_batch(x, extra)
    b = loaded.forward_batch(x, extra)
    np.testing.assert_array_equal(a["output"], b["output"])
    path2 = tmp_path / "model2.bin"
    loaded.save(str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_model_spec_round_trip():
    spec = default_spec("nee", "PERNN", seed=3)
    spec.loss_scales = {"e0": 17.0, "rb": 0.3, "dtdt": 1e-4, "nee_next": 0.8}
    back = ModelSpec.from_dict(spec.to_dict())
    assert back == spec
