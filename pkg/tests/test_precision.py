import numpy as np
import pytest

from sslpdl.errors import ConfigError
from sslpdl.precision import active_dtype


def test_default_is_f64(monkeypatch):
    monkeypatch.delenv("SSLPDL_PRECISION", raising=False)
    assert active_dtype() == np.float64


def test_f32_selected(monkeypatch):
    monkeypatch.setenv("SSLPDL_PRECISION", "f32")
    assert active_dtype() == np.float32


def test_invalid_rejected(monkeypatch):
    monkeypatch.setenv("SSLPDL_PRECISION", "f16")
    with pytest.raises(ConfigError):
        active_dtype()


def test_model_params_follow_precision(monkeypatch):
    monkeypatch.setenv("SSLPDL_PRECISION", "f32")
    from sslpdl.tinynet import ArchConfig, TinyNet

    net = TinyNet(
        ArchConfig(
            n_vars=4, height=32, width=32, q=2, p=8,
            widths=(6, 8, 10, 12), fuse_width=8, ffn_ratio=1.5,
        ),
        seed=0,
    )
    assert all(p.data.dtype == np.float32 for p in net.params.values())
