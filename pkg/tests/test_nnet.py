import math

import pytest
import torch

from dimnet_toy.errors import CheckpointError, ConfigError, ShapeError
from dimnet_toy.gradsuite import block_checks
from dimnet_toy.nnet import (BLOCK_KINDS, FeedForwardBlock, Subsampling, all_finite, grad_check,
                             jvp_check, lengths_to_mask, load_checkpoint, make_encoder_block,
                             make_optimizer, save_checkpoint)

D = torch.float64


def test_zero_initialised_feedforward_is_identity():
    blk = FeedForwardBlock(8, 16)
    torch.nn.init.zeros_(blk.ff.w2.weight)
    torch.nn.init.zeros_(blk.ff.w2.bias)
    x = torch.randn(2, 5, 8)
    assert torch.equal(blk(x), x)


@pytest.mark.parametrize("kind", BLOCK_KINDS)
def test_blocks_preserve_length(kind):
    blk = make_encoder_block(kind, 16, 32, 2, 3)
    x = torch.randn(3, 7, 16)
    assert blk(x, lengths_to_mask(torch.tensor([7, 4, 1]), 7)).shape == (3, 7, 16)


@pytest.mark.parametrize("kind", BLOCK_KINDS)
def test_block_jvp_matches_finite_differences(kind):
    torch.manual_seed(1)
    blk = make_encoder_block(kind, 16, 32, 2, 3).to(D)
    x = torch.randn(2, 7, 16, dtype=D)
    assert jvp_check(lambda v: blk(v), x) <= 1e-4


def test_block_gradient_suite():
    assert max(block_checks().values()) <= 1e-4


def test_padding_does_not_leak():
    torch.manual_seed(2)
    for kind in BLOCK_KINDS:
        blk = make_encoder_block(kind, 16, 32, 2, 3).eval()
        x = torch.randn(1, 5, 16)
        padded = torch.cat([x, 100 * torch.randn(1, 4, 16)], dim=1)
        a = blk(x, lengths_to_mask(torch.tensor([5]), 5))
        b = blk(padded, lengths_to_mask(torch.tensor([5]), 9))[:, :5]
        torch.testing.assert_close(a, b, atol=1e-5, rtol=1e-5)


def test_wrong_width_rejected():
    with pytest.raises(ShapeError):
        make_encoder_block("self-attention", 16, 32, 2)(torch.randn(1, 3, 8))
    with pytest.raises(ConfigError):
        make_encoder_block("recurrent", 16, 32, 2)


def test_grad_check_polynomial_and_linear():
    x = torch.tensor(3.0, dtype=D, requires_grad=True)
    assert grad_check(lambda: x ** 2, [x], eps=1e-5) <= 1e-8
    A = torch.randn(4, 5, dtype=D)
    w = torch.randn(5, dtype=D, requires_grad=True)
    assert grad_check(lambda: (A @ w).sum(), [w], eps=1e-3) <= 1e-12


def test_grad_check_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x.sum() * 2

        @staticmethod
        def backward(ctx, g):
            return torch.ones(3, dtype=D) * g

    x = torch.randn(3, dtype=D, requires_grad=True)
    assert grad_check(lambda: Bad.apply(x), [x]) > 0.1


def test_forward_is_deterministic():
    def run():
        torch.manual_seed(5)
        blk = make_encoder_block("conv-augmented", 16, 32, 2, 3)
        return blk(torch.randn(2, 9, 16))

    assert torch.equal(run(), run())


def test_subsampling_lengths():
    sub = Subsampling(4, 8, factor=4)
    y, lens = sub(torch.randn(2, 10, 4), torch.tensor([10, 5]))
    assert y.shape == (2, 3, 8)
    assert lens.tolist() == [3, 2]


def test_parameters_finite_after_updates():
    torch.manual_seed(0)
    blk = make_encoder_block("conv-augmented", 16, 32, 2, 3)
    opt, sched = make_optimizer(blk.parameters(), 1e-2, 2, total_steps=5)
    for _ in range(5):
        loss = blk(torch.randn(2, 6, 16)).square().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        assert all_finite(blk)


@pytest.mark.parametrize("schedule", ["cosine", "inverse-sqrt", "constant"])
def test_schedules(schedule):
    p = torch.nn.Parameter(torch.zeros(1))
    opt, sched = make_optimizer([p], 1.0, 4, schedule=schedule, total_steps=20)
    rates = []
    for _ in range(20):
        rates.append(opt.param_groups[0]["lr"])
        opt.step()
        sched.step()
    assert rates[:4] == pytest.approx([0.25, 0.5, 0.75, 1.0])
    if schedule == "constant":
        assert rates[-1] == 1.0
    elif schedule == "inverse-sqrt":
        assert rates[-1] == pytest.approx(math.sqrt(4 / 20))
    else:
        assert rates[-1] < 0.05 and all(a >= b for a, b in zip(rates[3:], rates[4:]))
    with pytest.raises(ConfigError):
        make_optimizer([p], 1.0, 4, schedule="step")


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    blk = make_encoder_block("self-attention", 8, 16, 2)
    save_checkpoint(tmp_path / "c.pt", blk, {"d": 8})
    other = make_encoder_block("self-attention", 8, 16, 2)
    load_checkpoint(tmp_path / "c.pt", other, {"d": 8})
    for a, b in zip(blk.parameters(), other.parameters()):
        assert torch.equal(a, b)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.pt", other, {"d": 16})
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.pt", make_encoder_block("feedforward", 8, 16, 2))
