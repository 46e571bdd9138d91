import numpy as np
import pytest

from mnolearn import relu_net as rn
from mnolearn.errors import DomainError, ShapeError


def spec(d_in=1, d_out=1, L=1, p=1, K=100, kappa=1.0, R=10.0):
    return rn.NetClassSpec(d_in, d_out, L, p, K, kappa, R)


def net(weights, biases, s):
    return rn.MlpParams([np.atleast_2d(np.asarray(w, dtype=float)) for w in weights],
                        [np.atleast_1d(np.asarray(b, dtype=float)) for b in biases],
                        s)


class TestSpecValidation:
    def test_kappa_below_one_rejected(self):
        with pytest.raises(DomainError):
            spec(kappa=0.5)

    def test_nonpositive_counts_rejected(self):
        with pytest.raises(DomainError):
            rn.NetClassSpec(0, 1, 1, 1, 1, 1.0, 1.0)
        with pytest.raises(DomainError):
            rn.NetClassSpec(1, 1, 1, 0, 1, 1.0, 1.0)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            net([[[2.0, 1.0]]], [[1.0]], spec(d_in=1))
        with pytest.raises(ShapeError):
            net([[[2.0]]], [[1.0]], spec(L=2))


class TestForward:
    def test_depth_one_is_affine(self):
        p = net([[[2.0]]], [[1.0]], spec())
        assert rn.forward(p, [3.0]) == pytest.approx([7.0])
        # negative input passes straight through, no activation
        assert rn.forward(p, [-3.0]) == pytest.approx([-5.0])

    def test_relu_kills_negatives(self):
        p = net([[[1.0]], [[1.0]]], [[0.0], [0.0]], spec(L=2))
        assert rn.forward(p, [-5.0]) == pytest.approx([0.0])

    def test_two_layer_hand_value(self):
        p = net([[[1.0]], [[2.0]]], [[0.0], [0.0]], spec(L=2))
        assert rn.forward(p, [3.0]) == pytest.approx([6.0])

    def test_dimension_mismatch(self):
        p = net([[[2.0]]], [[1.0]], spec())
        with pytest.raises(ShapeError):
            rn.forward(p, [1.0, 2.0])


class TestClip:
    def test_saturation(self):
        assert rn.clip_scalar(1.0, 2.0) == 1.0
        assert rn.clip_scalar(1.0, -3.0) == -1.0

    def test_interior_and_relu_form(self):
        assert rn.clip_scalar(1.0, 0.3) == 0.3
        # -ReLU(-ReLU(0.3+1)+2)+1 = 0.3
        assert rn.clip_scalar_relu(1.0, 0.3) == pytest.approx(0.3, abs=1e-15)

    def test_nonpositive_bound_rejected(self):
        with pytest.raises(DomainError):
            rn.clip_scalar(0.0, 1.0)
        with pytest.raises(DomainError):
            rn.clip_scalar_relu(-1.0, 1.0)

    def test_forms_agree_on_dense_grid(self):
        for a in (0.5, 1.0, 2.0):
            v = np.linspace(-3 * a, 3 * a, 1000)
            diff = np.abs(rn.clip_scalar(a, v) - rn.clip_scalar_relu(a, v))
            assert diff.max() < 1e-12


def random_net(rng, L=None, p=None, d_in=None, kappa=4.0):
    L = L or int(rng.integers(1, 5))
    p = p or int(rng.integers(1, 9))
    d_in = d_in or int(rng.integers(1, 4))
    s = rn.NetClassSpec(d_in, 1, L, p, 10_000, kappa, 100.0)
    dims = [d_in] + [p] * (L - 1) + [1]
    ws = [rng.uniform(-1, 1, size=(dims[i + 1], dims[i])) for i in range(L)]
    bs = [rng.uniform(-1, 1, size=dims[i + 1]) for i in range(L)]
    return rn.MlpParams(ws, bs, s)


def preactivation_margin(params, x):
    """Smallest |pre-activation| over hidden layers (FD validity margin)."""
    h = np.asarray(x, dtype=float)
    margin = np.inf
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ h + b
        if ell != len(params.weights) - 1:
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
        else:
            h = z
    return margin


class TestBackprop:
    def test_chain_rule_hand_value(self):
        p = net([[[1.0]], [[2.0]]], [[0.0], [0.0]], spec(L=2, K=4))
        g = rn.backprop(p, np.array([3.0]), np.array([1.0]))
        assert g.d_weights[0][0, 0] == pytest.approx(6.0)
        assert g.d_weights[1][0, 0] == pytest.approx(3.0)

    def test_zero_upstream_gives_zero_bundle(self):
        rng = np.random.default_rng(0)
        p = random_net(rng)
        g = rn.backprop(p, rng.uniform(-1, 1, p.spec.d_in), np.zeros(1))
        assert np.all(g.as_flat() == 0.0)

    def test_matches_finite_differences_100_nets(self):
        rng = np.random.default_rng(1234)
        checked = 0
        while checked < 100:
            p = random_net(rng)
            x = rng.uniform(-1, 1, p.spec.d_in)
            if preactivation_margin(p, x) < 1e-3:
                continue
            checked += 1
            g = rn.backprop(p, x, np.ones(1)).as_flat()
            fd = np.empty_like(g)
            h = 1e-5
            flat_arrays = p.weights + p.biases

            def loss(q):
                return float(rn.forward(q, x)[0])

            i = 0
            for arr in flat_arrays:
                for j in range(arr.size):
                    orig = arr.ravel()[j]
                    arr.ravel()[j] = orig + h
                    up = loss(p)
                    arr.ravel()[j] = orig - h
                    down = loss(p)
                    arr.ravel()[j] = orig
                    fd[i] = (up - down) / (2 * h)
                    i += 1
            # gradient order: all weights then all biases
            analytic = np.concatenate(
                [g_.ravel() for g_ in rn.backprop(p, x, np.ones(1)).d_weights]
                + [g_.ravel() for g_ in rn.backprop(p, x, np.ones(1)).d_biases]
            )
            err = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-4)
            assert err.max() < 1e-5


class TestProjection:
    def test_clamp(self):
        p = net([[[2.5]]], [[0.0]], spec(kappa=1.0))
        out = rn.project_to_class(p)
        assert out.weights[0][0, 0] == 1.0

    def test_feasible_unchanged(self):
        p = net([[[0.5]]], [[0.25]], spec(kappa=1.0, K=2))
        out = rn.project_to_class(p)
        assert np.array_equal(out.weights[0], p.weights[0])
        assert np.array_equal(out.biases[0], p.biases[0])

    def test_smallest_magnitude_zeroing(self):
        p = net([[[0.9]]], [[-0.2]], spec(kappa=1.0, K=1))
        out = rn.project_to_class(p)
        assert out.weights[0][0, 0] == 0.9
        assert out.biases[0][0] == 0.0

    def test_tie_break_earliest_layer_first(self):
        s = spec(L=2, p=1, K=1, kappa=1.0)
        p = net([[[0.5]], [[0.5]]], [[0.0], [0.0]], s)
        out = rn.project_to_class(p)
        # equal magnitudes: the layer-0 weight is zeroed first
        assert out.weights[0][0, 0] == 0.0
        assert out.weights[1][0, 0] == 0.5

    def test_idempotent_and_never_grows(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = random_net(rng, kappa=1.0)
            tight = rn.NetClassSpec(
                p.spec.d_in, 1, p.spec.depth_L, p.spec.width_p,
                max(1, p.nonzero_count() // 2), 1.0, 100.0,
            )
            p = rn.MlpParams(p.weights, p.biases, tight)
            once = rn.project_to_class(p)
            twice = rn.project_to_class(once)
            assert once.nonzero_count() <= tight.sparsity_K
            assert once.max_abs_param() <= tight.magnitude_kappa
            for a, b in zip(once.weights + once.biases,
                            twice.weights + twice.biases):
                assert np.array_equal(a, b)
            for a, b in zip(once.weights + once.biases,
                            p.weights + p.biases):
                assert np.all(np.abs(a) <= np.abs(b) + 1e-15)


class TestClassBounds:
    def test_worked_values(self):
        assert rn.class_bounds(spec(L=1, p=1, kappa=1.0), 1.0) == (2.0, 2.0)
        assert rn.class_bounds(spec(L=2, p=2, kappa=2.0), 1.0) == (36.0, 36.0)
        assert rn.class_bounds(spec(L=1, p=1, kappa=1.0), 0.0) == (1.0, 1.0)

    def test_output_bound_holds(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            L = int(rng.integers(1, 4))
            p = int(rng.integers(1, 5))
            d_in = int(rng.integers(1, p + 1))  # bound assumes d_in <= p
            s = rn.NetClassSpec(d_in, 1, L, p, 10_000, 2.0, 1e9)
            dims = [d_in] + [p] * (L - 1) + [1]
            ws = [rng.uniform(-2, 2, size=(dims[i + 1], dims[i])) for i in range(L)]
            bs = [rng.uniform(-2, 2, size=dims[i + 1]) for i in range(L)]
            params = rn.MlpParams(ws, bs, s)
            bound, _ = rn.class_bounds(s, 1.0)
            x = rng.uniform(-1, 1, d_in)
            assert abs(rn.forward(params, x)[0]) <= bound + 1e-12

    def test_param_lipschitz_holds(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            L = int(rng.integers(1, 4))
            p = int(rng.integers(1, 5))
            d_in = int(rng.integers(1, p + 1))
            s = rn.NetClassSpec(d_in, 1, L, p, 10_000, 2.0, 1e9)
            dims = [d_in] + [p] * (L - 1) + [1]

            def draw():
                ws = [rng.uniform(-2, 2, size=(dims[i + 1], dims[i]))
                      for i in range(L)]
                bs = [rng.uniform(-2, 2, size=dims[i + 1]) for i in range(L)]
                return rn.MlpParams(ws, bs, s)

            q1, q2 = draw(), draw()
            _, lip = rn.class_bounds(s, 1.0)
            d = rn.param_distance(q1, q2)
            x = rng.uniform(-1, 1, d_in)
            gap = abs(rn.forward(q1, x)[0] - rn.forward(q2, x)[0])
            assert gap <= lip * d + 1e-10

    def test_kappa_precondition(self):
        s = rn.NetClassSpec(1, 1, 1, 1, 1, 1.0, 1.0)
        object.__setattr__(s, "magnitude_kappa", 0.5)
        with pytest.raises(DomainError):
            rn.class_bounds(s, 1.0)


class TestInit:
    def test_feasible_and_seeded(self):
        s = rn.NetClassSpec(3, 1, 3, 4, 20, 1.5, 1.0)
        a = rn.init_mlp(s, np.random.default_rng(9))
        b = rn.init_mlp(s, np.random.default_rng(9))
        assert a.satisfies_class()
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
