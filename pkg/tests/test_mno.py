import numpy as np
import pytest

from mnolearn import mno
from mnolearn.entropy_bounds import BoundConstants
from mnolearn.errors import DomainError, ShapeError
from mnolearn.relu_net import MlpParams, NetClassSpec


def scalar_spec(d_in=1, L=1, p=1, K=100, kappa=1.0):
    return NetClassSpec(d_in, 1, L, p, K, kappa, 1.0)


def const_net(s, c):
    """Depth-1 net with zero weights: constant output c."""
    return MlpParams([np.zeros((1, s.d_in))], [np.array([float(c)])], s)


def unit_model(theta_val, clip_a=1.0, coeff_bound=5.0):
    s = scalar_spec()
    ms = mno.MnoSpec(1, 1, 1, s, s, s, coeff_bound, clip_a)
    return mno.MnoParams(
        np.full((1, 1, 1), float(theta_val)),
        [const_net(s, 1.0)], [const_net(s, 1.0)], [const_net(s, 1.0)], ms,
    )


def random_model(rng, P=2, H=2, N=2, widths=(3, 3, 3), L=2, kappa=4.0,
                 d_alpha=2, d_u=3, d_x=1, coeff_bound=2.0, clip_a=5.0):
    sl = scalar_spec(d_alpha, L, widths[0], 10_000, kappa)
    sb = scalar_spec(d_u, L, widths[1], 10_000, kappa)
    st = scalar_spec(d_x, L, widths[2], 10_000, kappa)
    ms = mno.MnoSpec(P, H, N, sl, sb, st, coeff_bound, clip_a)
    return mno.init_mno_params(ms, rng)


class TestForward:
    def test_constant_subnet_product(self):
        p = unit_model(0.4)
        assert mno.mno_forward(p, [0.0], [0.0], [0.0]) == pytest.approx(0.4)

    def test_saturation(self):
        p = unit_model(5.0, clip_a=1.0)
        assert mno.mno_forward(p, [0.0], [0.0], [0.0]) == 1.0
        assert mno.mno_forward(p, [0.0], [0.0], [0.0], clipped=False) == 5.0

    def test_zero_tensor(self):
        rng = np.random.default_rng(3)
        p = random_model(rng)
        p.theta[:] = 0.0
        assert mno.mno_forward(p, [0.1, 0.2], [0.3, 0.1, -0.2], [0.5]) == 0.0

    def test_shape_errors(self):
        p = unit_model(0.4)
        with pytest.raises(ShapeError):
            mno.mno_forward(p, [0.0, 1.0], [0.0], [0.0])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(11)
        p = random_model(rng)
        A = rng.normal(size=(6, 2))
        U = rng.normal(size=(6, 3))
        X = rng.normal(size=(6, 1))
        batch = mno.mno_forward_batch(p, A, U, X)
        single = [mno.mno_forward(p, A[i], U[i], X[i]) for i in range(6)]
        np.testing.assert_allclose(batch, single, rtol=0, atol=1e-12)


class TestInvariants:
    def test_theta_scaling_multilinearity(self):
        rng = np.random.default_rng(5)
        p = random_model(rng)
        a, u, x = rng.normal(size=2), rng.normal(size=3), rng.normal(size=1)
        base = mno.mno_forward(p, a, u, x, clipped=False)
        doubled = p.copy()
        doubled.theta *= 2.0
        assert mno.mno_forward(doubled, a, u, x, clipped=False) == 2.0 * base
        scaled = p.copy()
        scaled.theta *= 1.7
        assert mno.mno_forward(scaled, a, u, x, clipped=False) == pytest.approx(
            1.7 * base, rel=1e-12
        )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        p = random_model(rng, P=3)
        a, u, x = rng.normal(size=2), rng.normal(size=3), rng.normal(size=1)
        base = mno.mno_forward(p, a, u, x, clipped=False)
        perm = [2, 0, 1]
        q = p.copy()
        q.theta = q.theta[perm]
        q.l_nets = [q.l_nets[i] for i in perm]
        assert mno.mno_forward(q, a, u, x, clipped=False) == pytest.approx(
            base, rel=1e-12
        )

    def test_clipped_output_in_range(self):
        rng = np.random.default_rng(7)
        p = random_model(rng, clip_a=0.3)
        p.theta *= 50.0
        for _ in range(20):
            v = mno.mno_forward(
                p, rng.normal(size=2), rng.normal(size=3), rng.normal(size=1)
            )
            assert -0.3 <= v <= 0.3


def model_margins(params, A, U, X):
    """Smallest ReLU pre-activation and clip margin over a batch."""
    from mnolearn import relu_net as rn

    margin = np.inf
    for nets, inputs in ((params.l_nets, A), (params.b_nets, U),
                         (params.tau_nets, X)):
        for n in nets:
            for row in inputs:
                h = row
                for ell, (w, b) in enumerate(zip(n.weights, n.biases)):
                    z = w @ h + b
                    if ell != len(n.weights) - 1:
                        margin = min(margin, float(np.min(np.abs(z))))
                        h = np.maximum(z, 0.0)
    s = mno.mno_forward_batch(params, A, U, X, clipped=False)
    clip_margin = float(np.min(np.abs(np.abs(s) - params.spec.clip_a)))
    return min(margin, clip_margin)


def flatten_grads(g):
    parts = [g.d_theta.ravel()]
    for fam in (g.l_grads, g.b_grads, g.tau_grads):
        for gb in fam:
            parts += [w.ravel() for w in gb.d_weights]
            parts += [b.ravel() for b in gb.d_biases]
    return np.concatenate(parts)


def flatten_params(p):
    parts = [p.theta.ravel()]
    for fam in (p.l_nets, p.b_nets, p.tau_nets):
        for n in fam:
            parts += [w.ravel() for w in n.weights]
            parts += [b.ravel() for b in n.biases]
    return np.concatenate(parts)


def set_params(p, v):
    i = 0
    arrays = [p.theta]
    for fam in (p.l_nets, p.b_nets, p.tau_nets):
        for n in fam:
            arrays += n.weights + n.biases
    for arr in arrays:
        arr.ravel()[:] = v[i:i + arr.size]
        i += arr.size


def batch_loss(p, batch):
    A = np.array([b[0] for b in batch])
    U = np.array([b[1] for b in batch])
    X = np.array([b[2] for b in batch])
    t = np.array([b[3] for b in batch])
    pred = mno.mno_forward_batch(p, A, U, X, clipped=True)
    return float(np.mean((pred - t) ** 2))


class TestGrad:
    def test_empty_batch_rejected(self):
        with pytest.raises(DomainError):
            mno.mno_grad(unit_model(0.4), [])

    def test_theta_derivative_is_product(self):
        # unclipped regime: d/dtheta of the loss is 2(y - t) l b tau / B
        p = unit_model(0.4, clip_a=1.0)
        g = mno.mno_grad(p, [([0.0], [0.0], [0.0], 0.0)])
        assert g.d_theta[0, 0, 0] == pytest.approx(2 * 0.4 * 1 * 1 * 1)

    def test_saturated_gradient_is_zero(self):
        p = unit_model(5.0, clip_a=1.0)
        g = mno.mno_grad(p, [([0.0], [0.0], [0.0], 0.0)])
        assert np.all(g.d_theta == 0.0)
        assert np.all(flatten_grads(g) == 0.0)

    def test_matches_finite_differences_50_configs(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 50:
            dims = [int(rng.integers(1, 4)) for _ in range(3)]
            p = random_model(
                rng,
                P=int(rng.integers(1, 4)),
                H=int(rng.integers(1, 4)),
                N=int(rng.integers(1, 4)),
                d_alpha=dims[0], d_u=dims[1], d_x=dims[2],
                L=int(rng.integers(1, 3)),
            )
            batch = [
                (rng.normal(size=dims[0]), rng.normal(size=dims[1]),
                 rng.normal(size=dims[2]), rng.normal())
                for _ in range(3)
            ]
            A = np.array([b[0] for b in batch])
            U = np.array([b[1] for b in batch])
            X = np.array([b[2] for b in batch])
            if model_margins(p, A, U, X) < 1e-3:
                continue
            checked += 1
            analytic = flatten_grads(mno.mno_grad(p, batch))
            v0 = flatten_params(p)
            fd = np.empty_like(v0)
            h = 1e-5
            for i in range(v0.size):
                vp = v0.copy()
                vp[i] += h
                set_params(p, vp)
                up = batch_loss(p, batch)
                vp[i] -= 2 * h
                set_params(p, vp)
                down = batch_loss(p, batch)
                fd[i] = (up - down) / (2 * h)
            set_params(p, v0)
            err = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-4)
            assert err.max() < 1e-5


class TestProject:
    def test_theta_clamp(self):
        p = unit_model(0.4, coeff_bound=1.0)
        p.theta[0, 0, 0] = -2.0
        out = mno.mno_project(p)
        assert out.theta[0, 0, 0] == -1.0

    def test_feasible_unchanged(self):
        rng = np.random.default_rng(9)
        p = random_model(rng)
        out = mno.mno_project(p)
        assert np.array_equal(out.theta, p.theta)
        for a, b in zip(out.l_nets, p.l_nets):
            for wa, wb in zip(a.weights, b.weights):
                assert np.array_equal(wa, wb)

    def test_subnet_weight_clamped(self):
        p = unit_model(0.4)
        p.l_nets[0].weights[0][0, 0] = 3.0  # kappa = 1
        out = mno.mno_project(p)
        assert out.l_nets[0].weights[0][0, 0] == 1.0


class TestSerialization:
    def test_json_roundtrip_exact(self):
        import json

        rng = np.random.default_rng(21)
        p = random_model(rng)
        blob = json.dumps(p.to_dict(), sort_keys=True)
        q = mno.MnoParams.from_dict(json.loads(blob))
        assert np.array_equal(p.theta, q.theta)
        for a, b in zip(p.b_nets, q.b_nets):
            for wa, wb in zip(a.weights, b.weights):
                assert np.array_equal(wa, wb)
        a, u, x = rng.normal(size=2), rng.normal(size=3), rng.normal(size=1)
        assert mno.mno_forward(p, a, u, x) == mno.mno_forward(q, a, u, x)


class TestPrescriber:
    def test_halved_mode_worked_values(self):
        c = BoundConstants()
        pres = mno.prescribe_architecture(0.5, 1, 1, 1, c, "halved")
        assert pres.n_raw == pytest.approx(128.0)
        assert pres.p_raw == pytest.approx(8.0)
        assert pres.mno_spec.N == 128
        assert pres.mno_spec.P == 8
        for s in (pres.mno_spec.spec_l, pres.mno_spec.spec_b,
                  pres.mno_spec.spec_tau):
            assert s.output_R == 1.0

    def test_base_mode_prefactors(self):
        c = BoundConstants()
        base = mno.prescribe_architecture(0.5, 1, 1, 1, c, "base")
        halved = mno.prescribe_architecture(0.5, 1, 1, 1, c, "halved")
        # N: 2^(n_cW+2) vs 2^(2 n_cW+3) and P: 2 vs 4 at n_cW = 1
        assert halved.n_raw == pytest.approx(4.0 * base.n_raw)
        assert halved.p_raw == pytest.approx(2.0 * base.p_raw)

    def test_counts_antitone_in_eps(self):
        c = BoundConstants()
        prev = None
        for eps in (1.0, 0.5, 0.25, 0.125):
            pres = mno.prescribe_architecture(eps, 1, 2, 3, c, "halved")
            cur = (pres.n_raw, pres.h_raw, pres.p_raw,
                   pres.mno_spec.spec_l.depth_L,
                   pres.mno_spec.spec_l.magnitude_kappa)
            if prev is not None:
                assert all(a >= b for a, b in zip(cur, prev))
            prev = cur

    def test_invalid_inputs(self):
        c = BoundConstants()
        with pytest.raises(DomainError):
            mno.prescribe_architecture(0.0, 1, 1, 1, c)
        with pytest.raises(DomainError):
            mno.prescribe_architecture(0.5, 1, 1, 1, c, mode="other")
        bad = BoundConstants(I=0.5, beta_V=1.0)
        with pytest.raises(DomainError):
            mno.prescribe_architecture(0.5, 1, 1, 1, bad)
