import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pano360.errors import DomainError
from pano360.tokens import (LatentCodec, apply_rope, circular_pad, crop_pad, downsample_mask,
                            pad_positions, patchify, rope_table, rotate_tokens, unpatchify)


def test_patchify_shape_and_bias_only_zero_image():
    codec = LatentCodec(4, 3, 64)
    grid = patchify(np.zeros((64, 128, 3)), 4, codec)
    assert grid.shape == (16, 32, 64)
    assert torch.allclose(grid, codec.bias.expand_as(grid))
    with pytest.raises(DomainError):
        patchify(np.zeros((62, 128, 3)), 4, codec)


@pytest.mark.parametrize("scale", [1.0, 3.0])
def test_codec_round_trip(scale):
    rng = np.random.default_rng(0)
    img = rng.random((2, 32, 64, 3))
    codec = LatentCodec(4, 3, 64, seed=5, scale=scale)
    back = unpatchify(codec.encode(img), 4, codec).numpy()
    assert np.max(np.abs(back - img)) < 1e-5


def test_codec_is_frozen_and_orthonormal():
    codec = LatentCodec(4, 3, 64, scale=2.0)
    assert list(codec.parameters()) == []
    b = codec.weight.double() / 4.0
    assert torch.allclose(b @ b.T, torch.eye(48, dtype=torch.float64), atol=1e-6)


def test_rope_phases_match_hand_table():
    table = rope_table(4, 4, 8, 1)
    ang = table.angles(torch.tensor([[1, 2]]))[0]
    # head dim 8: 2 row pairs then 2 col pairs, frequencies 10000^(-2k/4)
    expect = [1 * 1.0, 1 * 10000 ** -0.5, 2 * 1.0, 2 * 10000 ** -0.5]
    assert torch.allclose(ang, torch.tensor(expect, dtype=torch.float64))


def test_rope_relative_property():
    table = rope_table(4, 16, 8, 1)
    rng = torch.Generator().manual_seed(0)
    q, k = torch.randn(8, generator=rng), torch.randn(8, generator=rng)

    def score(p1, p2):
        c1, s1 = table.cos_sin(torch.tensor([p1]))
        c2, s2 = table.cos_sin(torch.tensor([p2]))
        return float(apply_rope(q[None], c1, s1) @ apply_rope(k[None], c2, s2).T)

    ref = score((1, 0), (1, 3))
    for c in range(1, 12):
        assert score((1, c), (1, c + 3)) == pytest.approx(ref, abs=1e-5)


def test_rope_partial_rotary_leaves_rest_alone_and_keeps_norm():
    table = rope_table(4, 4, 16, 1, rotary_dim=8)
    x = torch.randn(16, 16)
    cos, sin = table.cos_sin()
    out = apply_rope(x, cos, sin)
    assert torch.equal(out[:, 8:], x[:, 8:])
    assert torch.allclose(out.norm(dim=-1), x.norm(dim=-1), atol=1e-5)
    with pytest.raises(DomainError):
        rope_table(4, 4, 10, 4)


def test_circular_pad_small_example():
    a, b = torch.tensor([1.0]), torch.tensor([2.0])
    x = torch.stack([a, b])[None]  # H=1, W=2, d=1
    padded = circular_pad(x)
    assert padded.data[0, :, 0].tolist() == [2.0, 1.0, 2.0, 1.0]
    assert torch.equal(crop_pad(padded), x)
    with pytest.raises(DomainError):
        circular_pad(torch.zeros(1, 1, 3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(2, 9), st.integers(1, 4), st.integers(0, 100))
def test_pad_crop_identity_and_copies(h, w, d, seed):
    x = torch.randn(h, w, d, generator=torch.Generator().manual_seed(seed))
    p = circular_pad(x)
    assert p.data.shape == (h, w + 2, d)
    assert torch.equal(p.data[:, 0], x[:, -1])
    assert torch.equal(p.data[:, -1], x[:, 0])
    assert torch.equal(crop_pad(p), x)
    assert p.source_cols == (w - 1, 0)


def test_pad_commutes_with_roll_on_core():
    x = torch.randn(3, 8, 2)
    for k in range(8):
        lhs = crop_pad(circular_pad(rotate_tokens(x, k)))
        rhs = rotate_tokens(crop_pad(circular_pad(x)), k)
        assert torch.equal(lhs, rhs)


def test_padded_positions_copy_and_extend():
    table = rope_table(2, 5, 8, 1)
    copy = pad_positions(table.positions)
    assert copy[:, 0, 1].tolist() == [4, 4]
    assert copy[:, -1, 1].tolist() == [0, 0]
    ext = pad_positions(table.positions, "extend")
    assert ext[:, 0, 1].tolist() == [-1, -1]
    assert ext[:, -1, 1].tolist() == [5, 5]
    with pytest.raises(DomainError):
        pad_positions(table.positions, "mirror")


def test_downsample_mask_majority_rule():
    m = np.zeros((8, 8))
    m[:4, :2] = 1  # half of the top-left 4x4 token
    m[4:, 4:] = 1
    assert downsample_mask(m, 4).tolist() == [[1, 0], [0, 1]]

    rng = np.random.default_rng(1)
    gaps = []
    for _ in range(50):
        pix = np.zeros((64, 128))
        r, c = rng.integers(0, 32), rng.integers(0, 64)
        pix[r:r + rng.integers(8, 32), c:c + rng.integers(16, 64)] = 1
        gaps.append(downsample_mask(pix, 4).mean() - pix.mean())
    assert abs(np.mean(gaps)) < 0.02
