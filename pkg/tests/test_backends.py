"""Cross-backend agreement: the compiled kernels and the NumPy fallback must
implement identical semantics (agreement to floating round-off)."""

import numpy as np
import pytest

from mnolearn import backend


def backends():
    py = backend.get_backend("python")
    if "compiled" not in backend.available_backends():
        pytest.skip("compiled extension not built")
    return py, backend.get_backend("compiled")


def random_family(rng, q=3, dims=(2, 5, 4, 1)):
    ws = [rng.normal(size=(q, dims[i + 1], dims[i]))
          for i in range(len(dims) - 1)]
    bs = [rng.normal(size=(q, dims[i + 1])) for i in range(len(dims) - 1)]
    return ws, bs


class TestKernelAgreement:
    def test_family_forward(self):
        py, cc = backends()
        rng = np.random.default_rng(0)
        for dims in ((3, 1), (2, 4, 1), (2, 5, 4, 1), (1, 2, 2, 2, 1)):
            ws, bs = random_family(rng, dims=dims)
            x = rng.normal(size=(9, dims[0]))
            o1, h1 = py.family_forward(ws, bs, x)
            o2, h2 = cc.family_forward(ws, bs, x)
            np.testing.assert_allclose(o1, o2, rtol=0, atol=1e-12)
            assert len(h1) == len(h2)
            for a, b in zip(h1, h2):
                np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_family_backprop(self):
        py, cc = backends()
        rng = np.random.default_rng(1)
        for dims in ((3, 1), (2, 4, 1), (2, 5, 4, 1)):
            ws, bs = random_family(rng, dims=dims)
            x = rng.normal(size=(9, dims[0]))
            _, hs = py.family_forward(ws, bs, x)
            up = rng.normal(size=(9, 3))
            d1 = py.family_backprop(ws, bs, x, hs, up)
            d2 = cc.family_backprop(ws, bs, x, hs, up)
            for a, b in zip(d1[0] + d1[1], d2[0] + d2[1]):
                np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_mno_ops(self):
        py, cc = backends()
        rng = np.random.default_rng(2)
        theta = rng.normal(size=(3, 4, 2))
        lv = rng.normal(size=(8, 3))
        bv = rng.normal(size=(8, 4))
        tv = rng.normal(size=(8, 2))
        g = rng.normal(size=8)
        np.testing.assert_allclose(
            py.mno_contract(theta, lv, bv, tv),
            cc.mno_contract(theta, lv, bv, tv), rtol=0, atol=1e-12,
        )
        np.testing.assert_allclose(
            py.mno_theta_grad(g, lv, bv, tv),
            cc.mno_theta_grad(g, lv, bv, tv), rtol=0, atol=1e-12,
        )
        for a, b in zip(py.mno_upstreams(theta, g, lv, bv, tv),
                        cc.mno_upstreams(theta, g, lv, bv, tv)):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


class TestSelection:
    def test_backend_name_reported(self):
        assert backend.backend_name() in ("python", "compiled")

    def test_python_always_available(self):
        assert "python" in backend.available_backends()

    def test_get_backend_rejects_unknown(self):
        with pytest.raises(ValueError):
            backend.get_backend("fortran")


class TestEndToEndAgreement:
    def test_full_gradient_between_backends(self):
        py, cc = backends()
        import mnolearn.mno as mno_mod
        from mnolearn.mno import MnoSpec, init_mno_params
        from mnolearn.relu_net import NetClassSpec

        rng = np.random.default_rng(3)
        spec = MnoSpec(
            2, 3, 2,
            NetClassSpec(2, 1, 2, 3, 100, 4.0, 1.0),
            NetClassSpec(3, 1, 2, 3, 100, 4.0, 1.0),
            NetClassSpec(1, 1, 2, 3, 100, 4.0, 1.0),
            2.0, 1.0,
        )
        params = init_mno_params(spec, rng)
        A = rng.normal(size=(16, 2))
        U = rng.normal(size=(16, 3))
        X = rng.normal(size=(16, 1))
        t = rng.normal(size=16)
        stacks = (
            mno_mod.stack_family(params.l_nets),
            mno_mod.stack_family(params.b_nets),
            mno_mod.stack_family(params.tau_nets),
        )
        results = []
        for k in (py, cc):
            orig = mno_mod.kernels
            mno_mod.kernels = k
            try:
                results.append(
                    mno_mod.batch_loss_grad_stacked(
                        params.theta, *stacks, spec.clip_a, A, U, X, t
                    )
                )
            finally:
                mno_mod.kernels = orig
        (l1, th1, dl1, db1, dt1), (l2, th2, dl2, db2, dt2) = results
        assert l1 == pytest.approx(l2, rel=1e-13)
        np.testing.assert_allclose(th1, th2, rtol=0, atol=1e-12)
        for p1, p2 in ((dl1, dl2), (db1, db2), (dt1, dt2)):
            for a, b in zip(p1[0] + p1[1], p2[0] + p2[1]):
                np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
