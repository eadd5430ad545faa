import numpy as np
import pytest

from sslpdl.errors import ConfigError
from sslpdl.gridio import GridField
from sslpdl.patching import PatchConfig, apply_mask, detokenize, make_mask, tokenize


def field(n=4, h=32, w=32, seed=0):
    rng = np.random.default_rng(seed)
    return GridField(
        tuple(f"v{i}" for i in range(n)),
        rng.normal(size=(n, h, w)).astype(np.float32),
    )


class TestTokenize:
    def test_full_scale_counts(self):
        cfg = PatchConfig(q=2, p=16)
        assert cfg.d == 512
        assert cfg.n_tokens(16, 224, 128) == 896

    def test_round_trip_bit_exact(self):
        f = field()
        cfg = PatchConfig(q=2, p=8)
        tokens = tokenize(f, cfg)
        back = detokenize(tokens, cfg, 4, 32, 32)
        assert back.dtype == f.values.dtype
        assert np.array_equal(back, f.values)

    def test_single_token_degenerate(self):
        f = field(n=4, h=8, w=8)
        cfg = PatchConfig(q=4, p=8)
        tokens = tokenize(f, cfg)
        assert tokens.shape == (1, 4 * 8 * 8)

    def test_token_order_row_major(self):
        # channel-group index varies slowest, then patch-row, then patch-col
        n, h, w, q, p = 2, 4, 4, 1, 2
        values = np.arange(n * h * w, dtype=np.float64).reshape(n, h, w)
        cfg = PatchConfig(q=q, p=p)
        tokens = tokenize(GridField(("a", "b"), values), cfg)
        assert np.array_equal(tokens[0], values[0, :2, :2].ravel())
        assert np.array_equal(tokens[1], values[0, :2, 2:].ravel())
        assert np.array_equal(tokens[2], values[0, 2:, :2].ravel())

    def test_divisibility_errors(self):
        f = field()
        with pytest.raises(ConfigError):
            tokenize(f, PatchConfig(q=3, p=8))
        with pytest.raises(ConfigError):
            detokenize(np.zeros((3, 128)), PatchConfig(q=2, p=8), 4, 32, 32)

    def test_zero_tokens_zero_field(self):
        cfg = PatchConfig(q=1, p=4)
        out = detokenize(np.zeros((4, 16)), cfg, 1, 8, 8)
        assert np.all(out == 0.0)


class TestMask:
    def test_counts_for_standard_ratios(self):
        for ratio, expect in [(0.0, 0), (0.25, 224), (0.5, 448), (0.75, 672), (0.9, 806), (1.0, 896)]:
            m = make_mask(896, ratio, seed=1)
            assert len(m) == expect

    def test_deterministic(self):
        a = make_mask(100, 0.4, seed=7)
        b = make_mask(100, 0.4, seed=7)
        assert np.array_equal(a.masked_indices, b.masked_indices)
        c = make_mask(100, 0.4, seed=8)
        assert not np.array_equal(a.masked_indices, c.masked_indices)

    def test_indices_sorted_unique_in_range(self):
        m = make_mask(50, 0.6, seed=3)
        idx = m.masked_indices
        assert np.all(np.diff(idx) > 0)
        assert idx.min() >= 0 and idx.max() < 50


class TestApplyMask:
    def test_zero_ratio_identity(self):
        f = field(seed=1)
        cfg = PatchConfig(q=2, p=8)
        m = make_mask(cfg.n_tokens(4, 32, 32), 0.0, seed=0)
        assert np.array_equal(apply_mask(f, m, cfg), f.values)

    def test_full_ratio_zeroes_everything(self):
        f = field(seed=2)
        cfg = PatchConfig(q=2, p=8)
        m = make_mask(cfg.n_tokens(4, 32, 32), 1.0, seed=0)
        assert np.all(apply_mask(f, m, cfg) == 0.0)

    def test_partial_mask_contract(self):
        f = field(seed=3)
        cfg = PatchConfig(q=2, p=8)
        n_tok = cfg.n_tokens(4, 32, 32)
        m = make_mask(n_tok, 0.5, seed=4)
        out = apply_mask(f, m, cfg)
        tokens_in = tokenize(f, cfg)
        tokens_out = tokenize(out, cfg)
        masked = np.zeros(n_tok, dtype=bool)
        masked[m.masked_indices] = True
        assert np.all(tokens_out[masked] == 0.0)
        assert np.array_equal(tokens_out[~masked], tokens_in[~masked])
        # exactly |M| * d scalars change (no original zeros in this field)
        changed = (out != f.values).sum()
        assert changed == len(m) * cfg.d

    def test_mismatched_mask_rejected(self):
        f = field(seed=5)
        cfg = PatchConfig(q=2, p=8)
        m = make_mask(10, 0.5, seed=0)
        with pytest.raises(ConfigError):
            apply_mask(f, m, cfg)
