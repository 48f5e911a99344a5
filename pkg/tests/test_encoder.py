import pytest
import torch

from dimnet_toy.encoder import TripleEncoder, broadcast_embedding, tap_layers
from dimnet_toy.errors import ShapeError
from dimnet_toy.nnet import grad_check

D = torch.float64


def test_tap_layers():
    assert tap_layers(9) == (3, 6, 9)
    assert tap_layers(3) == (1, 2, 3)
    assert tap_layers(4) == (2, 3, 4)
    assert tap_layers(1) == (1, 1, 1)


def make(**kw):
    torch.manual_seed(0)
    args = dict(feat_dim=6, d_model=16, d_ff=32, n_heads=2, n_shared=3, n_ctc=1, n_att=1,
                kernel_size=3)
    args.update(kw)
    return TripleEncoder(**args)


def test_last_tap_is_encoder_output():
    enc = make()
    out = enc.shared_forward(torch.randn(2, 9, 6), torch.tensor([9, 6]))
    assert out.taps[2] is out.x_se
    assert all(t.shape == out.x_se.shape for t in out.taps)
    assert not torch.equal(out.taps[0], out.taps[1])


@pytest.mark.parametrize("T", [1, 2, 7, 13, 20])
def test_ctc_encode_preserves_length(T):
    enc = make()
    out = enc.shared_forward(torch.randn(1, T, 6), torch.tensor([T]))
    assert enc.ctc_encode(out.x_se, out.mask).shape == (1, T, 16)


def test_zero_depth_branches_are_identity():
    enc = make(n_ctc=0, n_att=0)
    out = enc.shared_forward(torch.randn(2, 5, 6), torch.tensor([5, 3]))
    assert torch.equal(enc.ctc_encode(out.x_se, out.mask), out.x_se)
    assert torch.equal(enc.att_encode(out.x_se, out.mask), out.x_se)


def test_gradient_through_shared_and_ctc_encoders():
    enc = make().to(D)
    x = torch.randn(2, 6, 6, dtype=D)
    lens = torch.tensor([6, 4])
    w = torch.randn(2, 6, 16, dtype=D)

    def f():
        out = enc.shared_forward(x, lens)
        return (enc.ctc_encode(out.x_se, out.mask) * w).sum()

    assert grad_check(f, list(enc.parameters()), eps=1e-6) <= 1e-4


def test_embedding_concat_widths():
    enc = make(emb_width=5)
    assert enc.emb_proj.in_features == 16 + 5
    assert make().emb_proj is None
    out = enc.shared_forward(torch.randn(2, 4, 6), torch.tensor([4, 4]))
    with pytest.raises(ShapeError):
        enc.att_encode(out.x_se, out.mask, torch.randn(2, 1, 3))


def test_broadcast_utterance_embedding():
    emb = torch.randn(2, 1, 3)
    full = broadcast_embedding(emb, 5)
    assert full.shape == (2, 5, 3)
    assert all(torch.equal(full[:, t], emb[:, 0]) for t in range(5))
    with pytest.raises(ShapeError):
        broadcast_embedding(torch.randn(2, 3, 3), 5)


def test_embedding_swap_changes_output():
    enc = make(emb_width=4)
    out = enc.shared_forward(torch.randn(2, 5, 6), torch.tensor([5, 5]))
    emb = torch.randn(2, 1, 4)
    a = enc.att_encode(out.x_se, out.mask, emb)
    b = enc.att_encode(out.x_se, out.mask, emb.flip(0))
    assert not torch.allclose(a, b)
