import math
from pathlib import Path

import numpy as np
import pytest

from pano360.data import (FAMILIES, HybridData, MixPolicy, SceneSpec, blur_poles, fill_inpaint,
                          gen_procedural_pano, ingest_perspective, mix_batches, read_manifest,
                          refine_poles, render_perspective, write_manifest)
from pano360.errors import DomainError
from pano360.geometry import (YawAngle, cubemap_to_erp, dir_from_erp_pixel, erp_to_cubemap,
                              erp_to_face, face_coords_from_dir, make_polar_face_mask,
                              yaw_rotate_erp)
from pano360.metrics import _column_steps, pole_energy


def test_gradient_sky_columns_identical():
    img = gen_procedural_pano(SceneSpec(0, seed=3))
    assert np.array_equal(img, np.broadcast_to(img[:, :1], img.shape))


@pytest.mark.parametrize("cid", range(4))
def test_quantized_yaw_equivariance_is_exact(cid):
    spec = SceneSpec(cid, seed=9)
    img = gen_procedural_pano(spec)
    for k in (1, 17, 64):
        a = YawAngle.from_shift(k, 128)
        shifted = gen_procedural_pano(SceneSpec(cid, seed=9, yaw=a.radians))
        assert np.array_equal(yaw_rotate_erp(img, a), shifted)


def test_spec_is_deterministic_and_validated():
    a = gen_procedural_pano(SceneSpec(3, seed=5))
    b = gen_procedural_pano(SceneSpec(3, seed=5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gen_procedural_pano(SceneSpec(3, seed=6)))
    with pytest.raises(DomainError):
        gen_procedural_pano(SceneSpec(len(FAMILIES), seed=0))
    with pytest.raises(DomainError):
        gen_procedural_pano(SceneSpec(0), 100, 40)


def test_scene_record_round_trip():
    spec = SceneSpec(2, seed=41, yaw=0.5, params=(("sharpness", 2.5),))
    assert SceneSpec.from_record(spec.to_record()) == spec
    assert spec.resolved()["sharpness"] == 2.5


def test_seam_matches_interior_statistics():
    rng = np.random.default_rng(0)
    seam, interior = [], []
    for s in range(100):
        img = gen_procedural_pano(SceneSpec(s % 4, seed=s, yaw=float(rng.uniform(0, 2 * math.pi))))
        steps = _column_steps(img)
        seam.append(steps[-1])
        interior.append(steps[:-1].mean())
    assert 0.8 <= np.mean(seam) / np.mean(interior) <= 1.25


def test_ingest_perspective_crop():
    img = np.random.default_rng(1).random((200, 300, 3))
    out = ingest_perspective(img)
    assert out.shape == (200, 200, 3)
    assert np.array_equal(out, img[:, 50:250])
    sq = np.random.default_rng(2).random((64, 64, 3))
    assert np.array_equal(ingest_perspective(sq), sq)
    assert ingest_perspective(sq, 32).shape == (32, 32, 3)
    with pytest.raises(DomainError):
        ingest_perspective(np.zeros((7, 20, 3)))


def test_render_perspective_matches_front_face():
    spec = SceneSpec(3, seed=2)
    view = render_perspective(spec, "front", 32)
    pano = gen_procedural_pano(spec, 1024, 512)
    assert np.abs(view - erp_to_face(pano, "front", 32)).max() < 0.02


def test_fill_inpaint_cases():
    face = np.random.default_rng(3).random((16, 16, 3))
    full = np.ones((16, 16), np.uint8)
    assert np.array_equal(fill_inpaint(face, full), face)
    const = np.full((16, 16, 3), 0.4)
    mask = make_polar_face_mask(16)
    assert np.allclose(fill_inpaint(const * mask[..., None], mask), 0.4, atol=1e-3)
    with pytest.raises(DomainError):
        fill_inpaint(face, np.zeros((16, 16), np.uint8))


def test_fill_inpaint_reproduces_linear_gradient():
    size = 32
    grad = np.tile(np.linspace(0.0, 1.0, size), (size, 1))
    mask = make_polar_face_mask(size)
    filled = fill_inpaint(grad * mask, mask, tol=1e-7, max_iter=100_000)
    assert np.max(np.abs(filled - grad)) < 1e-3


def test_fill_inpaint_mean_value_property():
    rng = np.random.default_rng(4)
    face = rng.random((20, 20))
    mask = make_polar_face_mask(20)
    filled = fill_inpaint(face, mask)
    inner = np.argwhere(mask == 0)
    for r, c in inner:
        avg = (filled[r - 1, c] + filled[r + 1, c] + filled[r, c - 1] + filled[r, c + 1]) / 4
        assert abs(filled[r, c] - avg) < 1e-3


def test_refine_poles_only_changes_polar_footprint():
    rng = np.random.default_rng(5)
    img = rng.random((32, 64, 3))
    out = refine_poles(img)
    vv, uu = np.mgrid[0:32, 0:64]
    face = face_coords_from_dir(dir_from_erp_pixel(uu, vv, 64, 32))[0]
    assert np.array_equal(out[face < 4], img[face < 4])
    assert not np.array_equal(out[face >= 4], img[face >= 4])


def test_refine_poles_with_noop_fill_is_cube_round_trip_on_poles():
    img = gen_procedural_pano(SceneSpec(3, seed=7))
    original = erp_to_cubemap(img, 32)
    calls = []

    def restore(face, mask):
        calls.append((mask == 0).mean())
        f = 4 if len(calls) == 1 else 5
        return original[f]

    out = refine_poles(img, inpainter=restore)
    back = cubemap_to_erp(original, 128, 64)
    vv, uu = np.mgrid[0:64, 0:128]
    polar = face_coords_from_dir(dir_from_erp_pixel(uu, vv, 128, 64))[0] >= 4
    assert np.array_equal(out[polar], back[polar])
    assert calls == [0.25, 0.25]


@pytest.mark.parametrize("cid", [1, 2, 3])
def test_refined_blurred_poles_lose_energy(cid):
    img = blur_poles(gen_procedural_pano(SceneSpec(cid, seed=1)), 8)
    assert pole_energy(refine_poles(img), 8) < pole_energy(img, 8)


def test_mix_policy_rates():
    rng = np.random.default_rng(6)
    assert set(mix_batches(MixPolicy(1.0), rng, 200)) == {"pano"}
    assert set(mix_batches(MixPolicy(0.0), rng, 200)) == {"persp"}
    draws = list(mix_batches(MixPolicy(0.7), rng, 10_000))
    assert abs(draws.count("pano") / 1e4 - 0.7) < 0.02
    assert MixPolicy(0.7).p_persp == pytest.approx(0.3)
    with pytest.raises(DomainError):
        MixPolicy(1.5)


def test_hybrid_data_batches():
    data = HybridData(n_pano=4, n_persp=3, seed=1)
    rng = np.random.default_rng(0)
    pano = data.batch("pano", rng, 2)
    assert pano.images.shape == (2, 64, 128, 3) and pano.token_mask is None
    persp = data.batch("persp", rng, 2)
    assert persp.token_mask.shape == (2, 16, 32)
    frac = persp.token_mask.mean(axis=(1, 2))
    assert np.all((frac > 0.08) & (frac < 0.25))
    again = HybridData(n_pano=4, n_persp=3, seed=1)
    assert np.array_equal(again.panos, data.panos)


def test_manifest_round_trip(tmp_path):
    recs = [(SceneSpec(1, seed=2, yaw=0.25), "pano", 1), (Path("photos/a.png"), "persp", 3)]
    path = tmp_path / "m.tsv"
    write_manifest(path, recs)
    back = read_manifest(path)
    assert back == recs
    with pytest.raises(DomainError):
        write_manifest(path, [("x.png", "video", 0)])
