import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wdlearn.errors import Diverged, TooManyRows
from wdlearn.measures import GroundSpace
from wdlearn.nets import (
    Adam,
    Layer,
    ReluNetwork,
    TrainConfig,
    backward,
    build_max_network,
    cylinder_field_batch,
    init_from_bank,
    load_model,
    max_tree_matrices,
    mean_relative_error,
    network_energy,
    output_input_sensitivity,
    random_head_network,
    save_model,
    train,
    _mae_loss_and_grads,
    _regularized_loss_and_grads,
)


def dyadic_vectors(rng, n, dim, scale=8.0):
    """Random inputs whose max-tree arithmetic is exact in binary."""
    return rng.integers(-1024, 1025, size=(n, dim)).astype(float) * (scale / 1024.0)


class TestMaxNetwork:
    def test_k1_by_hand(self):
        net = build_max_network(1)
        # max{x1-x2,0} + max{x2,0} - max{-x2,0}
        assert net.forward(np.array([[3.0, 1.0]]))[0] == 3.0
        assert net.forward(np.array([[-2.0, -5.0]]))[0] == -2.0

    def test_k2_example(self):
        net = build_max_network(2)
        assert net.forward(np.array([[1.0, 4.0, 2.0, 3.0]]))[0] == 4.0

    def test_layer_widths(self):
        for k in range(1, 7):
            net = build_max_network(k)
            assert net.hidden_widths == [3 * 2 ** (k - i) for i in range(1, k + 1)]
            assert net.output_dim == 1

    def test_block_shapes_match_construction(self):
        # B_{l+1} is 3*2^l x 2^(l+1); the merged D_l is 3*2^(l-1) x 3*2^l
        for k in (2, 3, 4):
            mats = max_tree_matrices(k)
            assert mats[0].shape == (3 * 2 ** (k - 1), 2**k)
            for pos, ell in enumerate(range(k - 1, 0, -1), start=1):
                assert mats[pos].shape == (3 * 2 ** (ell - 1), 3 * 2**ell)
            assert mats[-1].shape == (1, 3)

    def test_exact_on_random_dyadics(self):
        rng = np.random.default_rng(0)
        for k in range(1, 7):
            net = build_max_network(k)
            X = dyadic_vectors(rng, 200, 2**k)
            # include exact ties
            X[:20, 1] = X[:20, 0]
            out = net.forward(X)
            np.testing.assert_array_equal(out, X.max(axis=1))

    @settings(max_examples=30, deadline=None)
    @given(
        vals=st.lists(
            st.integers(min_value=-4096, max_value=4096), min_size=8, max_size=8
        )
    )
    def test_exact_max_property(self, vals):
        net = build_max_network(3)
        x = np.array(vals, dtype=float) / 512.0
        assert net.forward(x[None, :])[0] == x.max()

    def test_permutation_invariance_of_tree(self):
        rng = np.random.default_rng(3)
        net = build_max_network(3)
        X = rng.normal(size=(50, 8))
        out = net.forward(X)
        perm = rng.permutation(8)
        np.testing.assert_allclose(net.forward(X[:, perm]), out, atol=1e-12)


class TestBankInit:
    def test_exact_bank_realization(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(4, 6))
        b = rng.normal(size=4)
        net = init_from_bank(A, b, k=2)
        X = rng.dirichlet(np.ones(6), size=40)
        np.testing.assert_allclose(
            net.forward(X), (X @ A.T + b).max(axis=1), atol=1e-12
        )

    def test_padding_never_wins(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(3, 6))
        b = rng.normal(size=3)
        X = rng.dirichlet(np.ones(6), size=30)
        g_min = (X @ A.T + b).max(axis=1).min()
        net = init_from_bank(A, b, k=2, pad_bias=g_min - 1.0)
        np.testing.assert_allclose(
            net.forward(X), (X @ A.T + b).max(axis=1), atol=1e-12
        )

    def test_too_many_rows(self):
        with pytest.raises(TooManyRows):
            init_from_bank(np.zeros((5, 3)), np.zeros(5), k=2)

    def test_missing_pad_bias(self):
        with pytest.raises(ValueError):
            init_from_bank(np.zeros((3, 3)), np.zeros(3), k=2)

    def test_duality_consistency_before_training(self):
        # bank init realizes the lower approximant, so the forward pass
        # never exceeds the exact transport cost before any training
        from wdlearn.bank import build_bank, eval_G_many, export_affine
        from wdlearn.measures import DiscreteMeasure, GroundSpace, MeasureDataset
        from wdlearn.ot import exact_ot

        rng = np.random.default_rng(77)
        ground = GroundSpace.grid((3, 3))
        train = [DiscreteMeasure(ground, rng.dirichlet(np.ones(9))) for _ in range(10)]
        ds = MeasureDataset(ground, train, [])
        theta = DiscreteMeasure(ground, np.full(9, 1.0 / 9.0))
        bank = build_bank(ds, theta, range(6))
        A, b = export_affine(bank)
        pad = float(eval_G_many(bank, ds.train_matrix).min()) - 1.0
        net = init_from_bank(A, b, k=3, pad_bias=pad)
        preds = net.forward(ds.train_matrix)
        for mu, pred in zip(ds.train, preds):
            _, _, wpp = exact_ot(theta, mu)
            assert pred <= wpp + 1e-8

    def test_random_head_shapes_and_determinism(self):
        net1 = random_head_network(d=6, k=3, seed=9)
        net2 = random_head_network(d=6, k=3, seed=9)
        assert net1.layers[0].W.shape == (8, 6)
        np.testing.assert_array_equal(net1.layers[0].W, net2.layers[0].W)
        bound = 1.0 / np.sqrt(6)
        assert np.abs(net1.layers[0].W).max() <= bound


def _fd_check(net, X, loss_fn, n_probes, rng, rel_tol=1e-5, h=1e-6):
    """Central finite differences on random trainable coordinates."""
    loss0, grads = loss_fn()
    checked = 0
    attempts = 0
    while checked < n_probes and attempts < 20 * n_probes:
        attempts += 1
        li, name = net.trainable()[rng.integers(len(net.trainable()))]
        arr = getattr(net.layers[li], name)
        idx = tuple(rng.integers(s) for s in arr.shape)
        # skip probes that sit too close to a ReLU kink
        _, cache = net.forward_cached(X)
        margins = [
            np.abs(z).min()
            for z, lay in zip(cache["z"], net.layers)
            if lay.activation == "relu"
        ]
        if margins and min(margins) < 1e-6:
            raise AssertionError("test setup placed a probe on a kink")
        old = arr[idx]
        arr[idx] = old + h
        lp, _ = loss_fn()
        arr[idx] = old - h
        lm, _ = loss_fn()
        arr[idx] = old
        fd = (lp - lm) / (2 * h)
        an = grads[(li, name)][idx]
        if abs(fd) < 1e-10 and abs(an) < 1e-10:
            continue
        assert an == pytest.approx(fd, rel=rel_tol, abs=1e-8)
        checked += 1
    assert checked == n_probes


class TestBackward:
    def test_one_layer_chain_rule(self):
        # single affine layer, squared loss: gradient by hand
        net = ReluNetwork([Layer(np.array([[2.0, -1.0]]), np.array([0.5]), "none")])
        X = np.array([[1.0, 3.0]])
        y, cache = net.forward_cached(X)
        target = 4.0
        seeds = 2 * (y - target)
        grads = backward(net, cache, seeds)
        resid = y[0] - target  # y = 2*1 - 3 + 0.5 = -0.5
        np.testing.assert_allclose(grads[(0, "W")], 2 * resid * X)
        np.testing.assert_allclose(grads[(0, "b")], [2 * resid])

    def test_mae_gradients_match_fd(self):
        rng = np.random.default_rng(11)
        net = random_head_network(d=5, k=2, seed=4).set_all_trainable(True)
        X = rng.dirichlet(np.ones(5), size=8)
        y = rng.normal(size=8) + 3.0
        _fd_check(
            net, X, lambda: _mae_loss_and_grads(net, X, y), n_probes=12, rng=rng
        )

    def test_sensitivity_seed_gradients_match_fd(self):
        # loss = sum_j <c_j, s_j> exercises the second-order path alone
        rng = np.random.default_rng(13)
        net = random_head_network(d=4, k=2, seed=6).set_all_trainable(True)
        X = rng.dirichlet(np.ones(4), size=6)
        C = rng.normal(size=(6, 4))

        def loss_fn():
            _, cache = net.forward_cached(X)
            grads = backward(net, cache, np.zeros(6), sgrad_seeds=C)
            S = grads["S"]
            return float((C * S).sum()), grads

        _fd_check(net, X, loss_fn, n_probes=12, rng=rng)

    def test_regularized_loss_gradients_match_fd(self):
        rng = np.random.default_rng(17)
        ground = GroundSpace.grid((2, 3))
        net = random_head_network(d=6, k=2, seed=8).set_all_trainable(True)
        X = rng.dirichlet(np.ones(6), size=7)
        y = rng.normal(size=7) + 2.0

        def loss_fn():
            return _regularized_loss_and_grads(net, ground, X, y, lam=0.05)

        _fd_check(net, X, loss_fn, n_probes=12, rng=rng)

    def test_sensitivities_match_fd_of_first_preactivation(self):
        rng = np.random.default_rng(19)
        net = random_head_network(d=5, k=2, seed=10)
        X = rng.dirichlet(np.ones(5), size=3)
        S = output_input_sensitivity(net, X)
        W0, b0 = net.layers[0].W, net.layers[0].b
        tail = ReluNetwork(net.layers[1:])
        h = 1e-6
        V = X @ W0.T + b0
        for j in range(3):
            for i in range(4):
                vp, vm = V[j].copy(), V[j].copy()
                vp[i] += h
                vm[i] -= h
                fd = (tail.forward(vp[None, :])[0] - tail.forward(vm[None, :])[0]) / (
                    2 * h
                )
                assert S[j, i] == pytest.approx(fd, rel=1e-6, abs=1e-9)


class TestCylinderField:
    def test_linear_row_field(self):
        # single-row head on a 1-d grid: field equals the row's gradient
        ground = GroundSpace.grid((4,))
        W = np.array([[0.0, 1.0, 2.0, 3.0]])
        net = ReluNetwork([Layer(W, np.zeros(1), "none")])
        X = np.dirichlet = np.full((2, 4), 0.25)
        _, _, S, R, field = cylinder_field_batch(net, ground, X)
        np.testing.assert_allclose(S, 1.0)
        np.testing.assert_allclose(field[:, :, 0], 1.0)

    def test_energy_matches_quadrature(self):
        rng = np.random.default_rng(23)
        ground = GroundSpace.grid((3, 3))
        net = random_head_network(d=9, k=2, seed=3)
        X = rng.dirichlet(np.ones(9), size=5)
        en = network_energy(net, ground, X)
        _, _, _, _, field = cylinder_field_batch(net, ground, X)
        manual = [
            sum(X[j, x] * field[j, x] @ field[j, x] for x in range(9)) for j in range(5)
        ]
        np.testing.assert_allclose(en, manual, atol=1e-12)


class TestTraining:
    def test_zero_epochs_initial_record_only(self):
        rng = np.random.default_rng(29)
        net = random_head_network(d=4, k=1, seed=0)
        X = rng.dirichlet(np.ones(4), size=10)
        y = np.ones(10)
        trace = train(net, X, y, TrainConfig(epochs=0, seed=1))
        assert len(trace) == 1 and trace[0]["epoch"] == 0

    def test_bank_init_already_minimizing(self):
        # targets equal to the initial network's outputs: with a tiny lr
        # the first-epoch loss cannot rise above the initial optimum
        rng = np.random.default_rng(31)
        A = rng.normal(size=(4, 5))
        b = rng.normal(size=4)
        net = init_from_bank(A, b, k=2)
        X = rng.dirichlet(np.ones(5), size=16)
        y = net.forward(X)
        trace = train(net, X, y.copy(), TrainConfig(epochs=1, lr=1e-12, seed=2))
        assert trace[1]["loss"] <= 1e-9

    def test_learns_linear_target(self):
        rng = np.random.default_rng(37)
        ground = GroundSpace.grid((4,))
        phi = np.array([0.0, 1.0, 2.0, 3.0])
        X = rng.dirichlet(np.ones(4), size=500)
        y = X @ phi
        net = random_head_network(d=4, k=1, seed=5)
        trace = train(
            net, X, y, TrainConfig(epochs=200, batch_size=64, lr=3e-3, seed=5)
        )
        assert trace[-1]["train_rel_err"] < 0.05

    def test_bit_reproducible(self):
        rng = np.random.default_rng(41)
        X = rng.dirichlet(np.ones(4), size=30)
        y = rng.random(30) + 1.0
        runs = []
        for _ in range(2):
            net = random_head_network(d=4, k=1, seed=7)
            train(net, X, y, TrainConfig(epochs=3, seed=7))
            runs.append([lay.W.copy() for lay in net.layers])
        for a, b in zip(*runs):
            np.testing.assert_array_equal(a, b)

    def test_divergence_detected(self):
        rng = np.random.default_rng(43)
        X = rng.dirichlet(np.ones(4), size=10)
        y = np.ones(10)
        net = random_head_network(d=4, k=1, seed=3)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(Diverged):
            train(
                net,
                X,
                y,
                TrainConfig(epochs=5, lr=1e200, loss="regularized", reg_lambda=1.0),
                ground=GroundSpace.grid((4,)),
            )

    def test_regularized_training_runs(self):
        rng = np.random.default_rng(47)
        ground = GroundSpace.grid((2, 2))
        X = rng.dirichlet(np.ones(4), size=40)
        y = X @ np.array([0.0, 1.0, 1.0, 2.0])
        net = random_head_network(d=4, k=1, seed=9)
        trace = train(
            net,
            X,
            y,
            TrainConfig(epochs=30, lr=3e-3, loss="regularized", reg_lambda=1e-3, seed=9),
            ground=ground,
        )
        assert trace[-1]["loss"] < trace[1]["loss"]


class TestModelIO:
    def test_roundtrip(self, tmp_path):
        net = random_head_network(d=5, k=2, seed=1)
        cfg = TrainConfig(epochs=5, seed=1)
        path = tmp_path / "model.bin"
        save_model(path, net, cfg.hash())
        back, h = load_model(path)
        assert h == cfg.hash()
        rng = np.random.default_rng(0)
        X = rng.dirichlet(np.ones(5), size=10)
        np.testing.assert_array_equal(back.forward(X), net.forward(X))
        assert [l.activation for l in back.layers] == [
            l.activation for l in net.layers
        ]
        assert [l.train_W for l in back.layers] == [l.train_W for l in net.layers]


class TestMisc:
    def test_mean_relative_error(self):
        assert mean_relative_error([1.0, 3.0], [2.0, 2.0]) == pytest.approx(0.5)

    def test_adam_moves_toward_minimum(self):
        net = ReluNetwork([Layer(np.array([[1.0]]), np.array([0.0]), "none")])
        opt = Adam(net, lr=0.05)
        X = np.array([[1.0]])
        for _ in range(300):
            y, cache = net.forward_cached(X)
            grads = backward(net, cache, 2 * (y - 5.0))
            opt.step({k: v for k, v in grads.items() if k != "S"})
        assert net.forward(X)[0] == pytest.approx(5.0, abs=1e-2)
