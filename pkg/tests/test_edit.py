import numpy as np
import pytest
import torch

from pano360.edit import EditRequest, inpaint, outpaint, replacement_steps, token_replace_step
from pano360.errors import DomainError
from pano360.model import Condition, ModelConfig, PanoDiT, decode_image, invert_latent, sample_latent
from pano360.tokens import LatentCodec, downsample_mask

MICRO = ModelConfig(blocks=2, heads=2, dim=16, patch=4, latent_dim=48, height=16, width=32)
CODEC = LatentCodec(4, 3, 48, seed=0, scale=3.0)


class RecordingStub:
    """Smooth token-local field that records every state it is queried at."""

    config = MICRO

    def __init__(self):
        self.seen = []

    def velocity(self, x, t, labels):
        self.seen.append(x.clone())
        return 0.5 * torch.tanh(x) - 0.2 * x * t.reshape(-1, 1, 1, 1)


def _perturbed(seed=0):
    model = PanoDiT(MICRO, seed=seed)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn(p.shape, generator=gen))
    return model.eval()


def _image(seed=0):
    return np.random.default_rng(seed).random((16, 32, 3))


def test_token_replace_step_cases():
    a, b = torch.zeros(1, 2, 3, 4), torch.ones(1, 2, 3, 4)
    assert torch.equal(token_replace_step(a, b, np.zeros((2, 3))), a)
    assert torch.equal(token_replace_step(a, b, np.ones((2, 3))), b)
    m = np.array([[1, 0, 0], [0, 0, 1]])
    once = token_replace_step(a, b, m)
    assert torch.equal(token_replace_step(once, b, m), once)
    assert once[0, :, :, 0].tolist() == [[1, 0, 0], [0, 0, 1]]
    with pytest.raises(DomainError):
        token_replace_step(a, b[:, :1], m)
    with pytest.raises(DomainError):
        token_replace_step(a, b, np.ones((3, 2)))


def test_replacement_steps():
    assert replacement_steps(28, 0.4) == 12
    assert replacement_steps(10, 0.0) == 0
    assert replacement_steps(10, 1.0) == 10


def test_edit_request_validation():
    img = _image()
    with pytest.raises(DomainError):
        EditRequest(img, np.ones((16, 32)), Condition(0), replace_until=1.2)
    with pytest.raises(DomainError):
        EditRequest(img, np.ones((8, 32)), Condition(0))
    with pytest.raises(DomainError):
        EditRequest(img, np.full((16, 32), 0.5), Condition(0))


def test_all_regenerate_mask_is_plain_sampling():
    model = _perturbed(1)
    req = EditRequest(_image(1), np.zeros((16, 32), np.uint8), Condition(2))
    got = inpaint(model, CODEC, req, steps=6, g=1.0, seed=4, return_latent=True)
    plain = sample_latent(model, Condition(2), 6, 1.0, seed=4)
    assert torch.equal(got, plain)


def test_kept_tokens_follow_inversion_trajectory():
    steps, until = 10, 0.4
    mask = np.zeros((16, 32), np.uint8)
    mask[:, :16] = 1
    img = _image(2)
    stub = RecordingStub()
    inpaint(stub, CODEC, EditRequest(img, mask, Condition(1), until), steps=steps, seed=3)
    traj = invert_latent(RecordingStub(), CODEC.encode(torch.as_tensor(img)[None]), 1, steps,
                         trajectory=True)
    sampling = stub.seen[steps:]  # first `steps` calls belong to the inversion
    keep = torch.from_numpy(downsample_mask(mask, 4)).bool()
    n = replacement_steps(steps, until)
    for i in range(n):
        assert torch.equal(sampling[i][0][keep], traj[steps - i][0][keep])
    # after the replacement window the kept tokens evolve freely
    assert not torch.equal(sampling[n][0][keep], traj[steps - n][0][keep])


def test_full_keep_mask_reconstructs_source_for_exact_field():
    class Identity:
        config = MICRO

        def velocity(self, x, t, labels):
            return torch.zeros_like(x)

    img = _image(3)
    out = inpaint(Identity(), CODEC, EditRequest(img, np.ones((16, 32), np.uint8), Condition(0)),
                  steps=5)
    assert np.max(np.abs(out - img)) < 1e-5


def test_outpaint_shapes_and_kept_region():
    class Identity:
        config = MICRO

        def velocity(self, x, t, labels):
            return torch.zeros_like(x)

    img = _image(4)
    footprint = np.zeros((16, 32), np.uint8)
    footprint[4:12, 12:20] = 1
    out = outpaint(Identity(), CODEC, img * footprint[..., None], footprint, Condition(0), steps=4)
    assert out.shape == img.shape
    assert np.allclose(out[footprint == 1], img[footprint == 1], atol=1e-5)


def test_decode_matches_codec():
    x = CODEC.encode(torch.as_tensor(_image(5))[None])
    assert np.allclose(decode_image(CODEC, x)[0], _image(5), atol=1e-5)
