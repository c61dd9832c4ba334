import math

import numpy as np
import pytest
import torch

from condvae.distributions import DiagGaussian, log_prob
from condvae.flow import (
    S_MAX,
    CouplingLayer,
    FlowStack,
    Parity,
    conditional_prior_log_prob,
    coupling_forward,
    coupling_inverse,
    flow_forward,
    flow_inverse,
)


def random_stack(dim, depth=4, seed=0, hidden=16):
    torch.manual_seed(seed)
    return FlowStack(dim, depth, hidden=hidden, init_identity=False).double()


def constant_layer(parity=Parity.LOW_FIXED, scale=math.log(2), shift=3.0):
    layer = CouplingLayer(2, 1, parity, hidden=4).double()
    with torch.no_grad():
        layer.s_net[-1].bias.fill_(S_MAX * math.atanh(scale / S_MAX))
        layer.t_net[-1].bias.fill_(shift)
    return layer


def fd_log_det(fn, z: np.ndarray, h: float = 1e-5) -> float:
    D = z.shape[0]
    jac = np.zeros((D, D))
    for j in range(D):
        e = np.zeros(D)
        e[j] = h
        with torch.no_grad():
            up = fn(torch.from_numpy(z + e)[None])[0][0].numpy()
            dn = fn(torch.from_numpy(z - e)[None])[0][0].numpy()
        jac[:, j] = (up - dn) / (2 * h)
    return float(np.linalg.slogdet(jac)[1])


def test_identity_coupling():
    layer = CouplingLayer(4).double()
    z = torch.randn(3, 4, dtype=torch.float64)
    g, ld = coupling_forward(z, layer)
    assert torch.equal(g, z)
    assert torch.all(ld == 0)
    assert torch.equal(coupling_inverse(z, layer), z)


def test_constant_scale_coupling_example():
    layer = constant_layer()
    with torch.no_grad():
        g, ld = coupling_forward(torch.tensor([[1.0, 2.0]], dtype=torch.float64), layer)
    assert g[0].tolist() == pytest.approx([1.0, 7.0], abs=1e-12)
    assert float(ld) == pytest.approx(math.log(2), abs=1e-12)
    z = coupling_inverse(torch.tensor([[1.0, 7.0]], dtype=torch.float64), layer)
    assert z[0].tolist() == pytest.approx([1.0, 2.0], abs=1e-12)


def test_high_fixed_parity_moves_low_block():
    layer = constant_layer(Parity.HIGH_FIXED)
    g, _ = layer(torch.tensor([[1.0, 2.0]], dtype=torch.float64))
    assert g[0].tolist() == pytest.approx([5.0, 2.0])


def test_split_index_must_leave_both_blocks():
    with pytest.raises(ValueError):
        CouplingLayer(4, split=4)
    with pytest.raises(ValueError):
        CouplingLayer(4, split=0)


def test_depth_at_least_two():
    with pytest.raises(ValueError):
        FlowStack(4, depth=1)


def test_parities_alternate():
    parities = [layer.parity for layer in FlowStack(6, depth=5).layers]
    assert all(a is not b for a, b in zip(parities, parities[1:]))


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        CouplingLayer(4)(torch.zeros(1, 3))


def test_scale_is_bounded():
    layer = CouplingLayer(4, init_identity=False).double()
    with torch.no_grad():
        layer.s_net[-1].bias.fill_(1e3)
    s, _ = layer.scale_shift(torch.zeros(1, 2, dtype=torch.float64))
    assert torch.all(s.abs() <= S_MAX)


def test_random_layer_log_det_matches_finite_differences():
    torch.manual_seed(3)
    layer = CouplingLayer(4, hidden=16, init_identity=False).double()
    z = np.random.default_rng(0).normal(size=4)
    with torch.no_grad():
        _, ld = layer(torch.from_numpy(z)[None])
    assert abs(float(ld) - fd_log_det(layer, z)) < 1e-4


def test_random_layer_round_trip():
    torch.manual_seed(4)
    layer = CouplingLayer(5, hidden=16, init_identity=False).double()
    g = torch.randn(20, 5, dtype=torch.float64)
    with torch.no_grad():
        back, _ = layer(layer.inverse(g))
    assert float((back - g).abs().max()) < 1e-6


def test_identity_stack_forward():
    flow = FlowStack(6).double()
    z = torch.randn(4, 6, dtype=torch.float64)
    f_z, ld = flow_forward(z, flow)
    assert torch.equal(f_z, z) and torch.all(ld == 0)
    assert torch.equal(flow_inverse(z, flow), z)


def test_two_constant_layers_sum_log_dets():
    flow = FlowStack(2, depth=2, hidden=4).double()
    flow.layers = torch.nn.ModuleList([constant_layer(Parity.LOW_FIXED), constant_layer(Parity.HIGH_FIXED)])
    z = torch.tensor([[0.5, -1.0]], dtype=torch.float64)
    f_z, ld = flow(z)
    assert float(ld.detach()) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert flow.inverse(f_z).detach().tolist()[0] == pytest.approx(z.tolist()[0], abs=1e-12)


def test_random_stack_log_det_matches_finite_differences():
    flow = random_stack(8, depth=4, seed=5)
    z = np.random.default_rng(2).normal(size=8)
    with torch.no_grad():
        _, ld = flow(torch.from_numpy(z)[None])
    assert abs(float(ld) - fd_log_det(flow, z)) < 1e-4


@pytest.mark.parametrize("dim", [2, 8, 32])
def test_stack_invertibility(dim):
    flow = random_stack(dim, seed=dim)
    z = torch.randn(100, dim, dtype=torch.float64, generator=torch.Generator().manual_seed(dim))
    with torch.no_grad():
        f_z, _ = flow(z)
        assert float((flow.inverse(f_z) - z).abs().max()) < 1e-5
        e = torch.randn(100, dim, dtype=torch.float64)
        assert float((flow(flow.inverse(e))[0] - e).abs().max()) < 1e-6


@pytest.mark.parametrize("dim", [2, 3, 8])
def test_every_coordinate_is_transformed(dim):
    flow = random_stack(dim, depth=2, seed=11)
    z = torch.randn(1, dim, dtype=torch.float64)
    with torch.no_grad():
        f_z, _ = flow(z)
        assert torch.all((f_z - z).abs() > 0)
        for j in range(dim):
            bumped = z.clone()
            bumped[0, j] += 0.1
            assert not torch.equal(flow(bumped)[0], f_z)


def test_conditional_prior_identity_flow_matches_gaussian():
    flow = FlowStack(3).double()
    z = torch.randn(5, 3, dtype=torch.float64)
    base = DiagGaussian.standard(3, (5,), dtype=torch.float64)
    assert torch.allclose(conditional_prior_log_prob(z, base, flow), log_prob(z, base))


def test_conditional_prior_scaled_base_at_zero():
    # coupling needs D >= 2, so the one-dimensional value is read off a factorised 2-D prior
    flow = FlowStack(2).double()
    base = DiagGaussian(torch.zeros(2, dtype=torch.float64), torch.full((2,), math.log(2.0), dtype=torch.float64))
    val = float(conditional_prior_log_prob(torch.zeros(1, 2, dtype=torch.float64), base, flow).detach())
    assert val == pytest.approx(2 * (-0.5 * math.log(2 * math.pi) - math.log(2)), abs=1e-12)
    # one-dimensional reading of the same value
    assert val / 2 == pytest.approx(-0.9189385332 - math.log(2), abs=1e-9)


def test_conditional_prior_integrates_to_one():
    flow = random_stack(2, depth=4, seed=7)
    base = DiagGaussian(torch.tensor([0.3, -0.2], dtype=torch.float64), torch.tensor([0.1, -0.2], dtype=torch.float64))
    grid = torch.linspace(-10, 10, 801, dtype=torch.float64)
    zz = torch.cartesian_prod(grid, grid)
    with torch.no_grad():
        dens = conditional_prior_log_prob(zz, base, flow).exp().reshape(801, 801)
    mass = float(torch.trapezoid(torch.trapezoid(dens, grid, dim=1), grid))
    assert abs(mass - 1.0) < 1e-2
