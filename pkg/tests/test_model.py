import numpy as np
import pytest

from bisplat import verify
from bisplat.model import ModelConfig, WrfModel, profile_config


def test_spectrum_shape_and_sign():
    model = WrfModel(profile_config("desk", n_primitives=40), seed=1)
    p = model.render([0.2, 0.1, 0.3])
    assert p.shape == (360, 90) and p.dtype == np.float32
    assert p.min() >= 0 and np.isfinite(p).all()


def test_forward_deterministic():
    a = WrfModel(profile_config("desk", n_primitives=30), seed=4).render([0, 0, 0])
    b = WrfModel(profile_config("desk", n_primitives=30), seed=4).render([0, 0, 0])
    assert np.array_equal(a, b)


def test_parameter_groups():
    model = WrfModel(profile_config("desk", n_primitives=30), seed=0)
    groups = model.store.groups
    assert {groups[f"prim.{k}"] for k in ("azimuth_deg", "elevation_deg", "depth")} == {"positions"}
    assert {groups[f"prim.{k}"] for k in ("log_scale_x", "log_scale_y", "rotation_rad")} == {"shape"}
    assert groups["prim.opacity_logit"] == "opacity"
    assert all(g == "networks" for n, g in groups.items() if not n.startswith("prim."))


def test_config_round_trip():
    cfg = profile_config("plus")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        profile_config("huge")


def test_tx_bounds_stored_at_checkpoint_precision():
    model = WrfModel(profile_config("desk", n_primitives=10), seed=0)
    model.set_tx_bounds([0.1, 0.2, 0.3], [1.1, 1.2, 1.3])
    assert np.array_equal(model.tx_lo, np.float32([0.1, 0.2, 0.3]).astype(np.float64))


def test_tiny_loss_gradients_all_classes():
    errs = verify.loss_gradient_errors(seed=1, per_tensor=2)
    assert set(errs) >= {"networks", "azimuth", "elevation", "depth", "log-scale", "rotation", "opacity-logit",
                         "coefficients"}
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("suite", ["bilinear", "ssim"])
def test_verify_suites(suite):
    assert all(c.passed for c in verify.run_suite(suite))


def test_verify_unknown_suite():
    with pytest.raises(KeyError):
        verify.run_suite("nope")
