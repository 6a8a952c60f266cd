import pytest
import torch

from pddf.core.errors import NumericalError
from pddf.models.field import SirenConfig
from pddf.services.evaluators import autograd_jet
from pddf.services.field import (
    curvature_at, curvature_pairs, field_eval, field_eval_jet, init_siren, surface_normal_estimate,
)

H = 1e-3


def _random_points(n, seed=0):
    g = torch.Generator().manual_seed(seed)
    p = torch.rand(n, 3, generator=g, dtype=torch.float64) * 2.0 - 1.0
    v = torch.randn(n, 3, generator=g, dtype=torch.float64)
    return p, v / v.norm(dim=-1, keepdim=True)


def _relative(a, b):
    # absolute below 1e-2, relative above
    return ((a - b).abs() / (b.abs() + 1e-2)).max().item()


@pytest.mark.unit
class TestInitialisation:

    def test_seeded_twice_identical(self, tiny_config):
        a, b = init_siren(tiny_config), init_siren(tiny_config)
        for x, y in zip(a.parameters(), b.parameters()):
            assert torch.equal(x, y)

    def test_zero_head(self, tiny_network):
        """A zeroed head gives zero depths and even weights; ties pick component 0"""
        with torch.no_grad():
            tiny_network.siren.head.weight.zero_()
            tiny_network.siren.head.bias.zero_()
        p, v = _random_points(4)
        out = field_eval(tiny_network, p, v)
        assert torch.all(out.d == 0.0)
        assert torch.all(out.w1 == 0.5)
        assert torch.all(out.xi == 0.5)
        assert torch.all(out.i_star == 0)

    def test_direction_is_normalised(self, tiny_network):
        p, v = _random_points(8)
        a = field_eval(tiny_network, p, v)
        b = field_eval(tiny_network, p, 2.0 * v)
        assert torch.allclose(a.d, b.d, rtol=0.0, atol=1e-14)
        assert torch.allclose(a.xi, b.xi, rtol=0.0, atol=1e-14)

    def test_non_finite_input(self, tiny_network):
        p, v = _random_points(2)
        p[0, 0] = float("nan")
        with pytest.raises(NumericalError):
            field_eval(tiny_network, p, v)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SirenConfig(hidden_sizes=[])


@pytest.mark.unit
class TestJet:

    def test_position_gradients_match_finite_differences(self, tiny_network):
        p, v = _random_points(1000, seed=1)
        jet = field_eval_jet(tiny_network, p, v)
        for axis in range(3):
            e = torch.zeros(3, dtype=torch.float64)
            e[axis] = H
            plus, minus = field_eval(tiny_network, p + e, v), field_eval(tiny_network, p - e, v)
            fd_d = (plus.d - minus.d) / (2 * H)
            fd_w1 = (plus.w1 - minus.w1) / (2 * H)
            fd_xi = (plus.xi - minus.xi) / (2 * H)
            # rectified depths are skipped near their kink
            active = (plus.d > 0) & (minus.d > 0)
            assert _relative(jet.grad_p_d[:, :, axis][active], fd_d[active]) < 1e-4
            assert _relative(jet.grad_p_w1[:, axis], fd_w1) < 1e-4
            assert _relative(jet.grad_p_xi[:, axis], fd_xi) < 1e-4

    def test_view_derivative_matches_finite_differences(self, tiny_network):
        p, v = _random_points(200, seed=2)
        delta = torch.linalg.cross(torch.randn(200, 3, dtype=torch.float64), v, dim=-1)
        delta = delta / delta.norm(dim=-1, keepdim=True)
        jet = field_eval_jet(tiny_network, p, v, v_tangents=delta[:, None, :])
        plus = field_eval(tiny_network, p, v + H * delta)
        minus = field_eval(tiny_network, p, v - H * delta)
        fd = (plus.d - minus.d) / (2 * H)
        active = (plus.d > 0).all(-1) & (minus.d > 0).all(-1)
        assert _relative(jet.grad_v_d[:, :, 0][active], fd[active]) < 1e-4

    def test_second_derivatives_match_finite_differences(self, tiny_network):
        p, v = _random_points(200, seed=3)
        t_x, t_y = torch.randn(2, 200, 3, dtype=torch.float64)
        t_x = t_x / t_x.norm(dim=-1, keepdim=True)
        t_y = t_y / t_y.norm(dim=-1, keepdim=True)
        jet = field_eval_jet(tiny_network, p, v, second_pairs=curvature_pairs(t_x, t_y))

        def grad_along(q, t):
            return (field_eval_jet(tiny_network, q, v).grad_p_depth * t).sum(-1)

        i_star = jet.output.i_star
        # (t_x, t_x) and (t_x, t_y) entries
        fd_xx = (grad_along(p + H * t_x, t_x) - grad_along(p - H * t_x, t_x)) / (2 * H)
        fd_xy = (grad_along(p + H * t_x, t_y) - grad_along(p - H * t_x, t_y)) / (2 * H)
        stable = (field_eval(tiny_network, p + H * t_x, v).i_star == i_star) & \
                 (field_eval(tiny_network, p - H * t_x, v).i_star == i_star) & \
                 (jet.output.d.gather(1, i_star[:, None])[:, 0] > 0.05)
        assert _relative(jet.second_dirs[:, 0][stable], fd_xx[stable]) < 1e-3
        assert _relative(jet.second_dirs[:, 1][stable], fd_xy[stable]) < 1e-3

    def test_matches_autograd_jet(self, tiny_network):
        p, v = _random_points(64, seed=4)
        mine = field_eval_jet(tiny_network, p, v)
        reference = autograd_jet(tiny_network, p, v)
        assert torch.allclose(mine.grad_p_d, reference.grad_p_d, atol=1e-10)
        assert torch.allclose(mine.grad_p_xi, reference.grad_p_xi, atol=1e-10)

    def test_differentiable_in_parameters(self, tiny_network):
        p, v = _random_points(16, seed=5)
        jet = field_eval_jet(tiny_network, p, v)
        jet.grad_p_depth.sum().backward()
        assert any(param.grad is not None and param.grad.abs().sum() > 0 for param in tiny_network.parameters())


@pytest.mark.unit
class TestNormalsAndCurvature:

    def test_normal_estimate(self):
        v = torch.tensor([[0.0, 0.0, -1.0], [0.0, 0.0, -1.0]])
        grad = torch.tensor([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]])
        n, valid = surface_normal_estimate(grad, v)
        assert valid.all()
        assert torch.equal(n, torch.tensor([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]))

    def test_degenerate_normal(self):
        n, valid = surface_normal_estimate(torch.zeros(1, 3), torch.tensor([[0.0, 0.0, -1.0]]))
        assert not valid[0]
        assert torch.isnan(n).all()

    def test_sphere_curvature(self, sphere_evaluator):
        """Sphere seen from outside: mean curvature 2/r, Gaussian 1/r^2"""
        p = torch.tensor([[0.0, 0.0, 2.0]], dtype=torch.float64)
        v = torch.tensor([[0.0, 0.0, -1.0]], dtype=torch.float64)
        t_x = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        t_y = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
        jet = sphere_evaluator.jet(p, v, second_pairs=curvature_pairs(t_x, t_y))
        n, valid = surface_normal_estimate(jet.grad_p_depth, v)
        c_h, c_k = curvature_at(jet.second_dirs, n, v, valid)
        assert c_h.item() == pytest.approx(2.0, abs=1e-9)
        assert c_k.item() == pytest.approx(1.0, abs=1e-9)

    def test_plane_curvature(self, plane_evaluator):
        p = torch.tensor([[0.1, 0.2, 0.5]], dtype=torch.float64)
        v = torch.tensor([[0.0, 0.0, -1.0]], dtype=torch.float64)
        t_x = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        t_y = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
        jet = plane_evaluator.jet(p, v, second_pairs=curvature_pairs(t_x, t_y))
        n, valid = surface_normal_estimate(jet.grad_p_depth, v)
        c_h, c_k = curvature_at(jet.second_dirs, n, v, valid)
        assert c_h.item() == pytest.approx(0.0, abs=1e-12)
        assert c_k.item() == pytest.approx(0.0, abs=1e-12)

    def test_invalid_rows_are_nan(self):
        c_h, c_k = curvature_at(
            torch.ones(2, 4), torch.tensor([[0.0, 0.0, 1.0]] * 2), torch.tensor([[0.0, 0.0, -1.0]] * 2),
            valid=torch.tensor([True, False]),
        )
        assert not torch.isnan(c_h[0])
        assert torch.isnan(c_h[1]) and torch.isnan(c_k[1])
