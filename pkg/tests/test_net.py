import numpy as np
import pytest
from scipy.special import logsumexp

from mirror_select.datagen import gen_regression, make_signal_regression
from mirror_select.linalg import orthonormal_columns
from mirror_select.net import (
    Init,
    Loss,
    NetworkParams,
    NetworkSpec,
    NumericOverflowError,
    Sampling,
    TrainConfig,
    backward,
    forward,
    init_params,
    input_sensitivity,
    load_params,
    loss_value,
    save_params,
    train,
)
from mirror_select.rng import substream


# ------------------------------------------------------------- test oracles

def oracle_loss(params, x, y, loss):
    """Loss evaluated through forward(); reimplements the loss formulas."""
    out = forward(params, x)
    if Loss(loss) is Loss.SQUARED:
        return float(np.sum((np.atleast_1d(y) - out) ** 2))
    return float(logsumexp(out) - out[int(y)])


def fd_param_grads(params, x, y, loss, h=1e-5):
    """Central finite differences through every parameter coordinate."""
    grads = []
    for a in params.arrays():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            up = oracle_loss(params, x, y, loss)
            a[idx] = orig - h
            dn = oracle_loss(params, x, y, loss)
            a[idx] = orig
            g[idx] = (up - dn) / (2 * h)
        grads.append(g)
    return grads


def fd_input_grad(params, x, y, loss, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        g[i] = (oracle_loss(params, xp, y, loss) - oracle_loss(params, xm, y, loss)) / (2 * h)
    return g


def max_rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom))


def random_net(rng, n_tail=2, width_hi=8, out_width=1, margin=1e-3, tries=50):
    """(params, x) with every pre-activation at least ``margin`` from 0."""
    for _ in range(tries):
        n_in = int(rng.integers(2, 7))
        widths = [int(rng.integers(2, width_hi + 1)) for _ in range(n_tail + 1)]
        spec = NetworkSpec(n_in, widths[0], tuple(widths[1:]), out_width=out_width)
        params = init_params(spec, int(rng.integers(0, 2**31)))
        for _, b in params.tail:
            b += rng.standard_normal(b.shape) * 0.3
        x = rng.standard_normal(n_in)
        act = x @ params.W1
        ok = np.all(np.abs(act) > margin)
        for W, b in params.tail:
            act = np.maximum(act, 0.0) @ W + b
            ok = ok and np.all(np.abs(act) > margin)
        if ok:
            return spec, params, x
    raise AssertionError("could not find a kink-free configuration")


# ------------------------------------------------------------- construction

def test_he_init_variance_fan_in_2():
    spec = NetworkSpec(n_in=2, first_width=500000)
    params = init_params(spec, seed=0)
    assert params.W1.var() == pytest.approx(1.0, rel=0.01)  # 2 / fan_in


def test_xavier_init_variance_256():
    spec = NetworkSpec(n_in=256, first_width=256, init=Init.XAVIER_NORMAL)
    params = init_params(spec, seed=1)
    assert params.W1.var() == pytest.approx(1.0 / 256.0, rel=0.02)


def test_init_biases_zero_and_deterministic():
    spec = NetworkSpec(4, 3, (5,), out_width=2)
    p1 = init_params(spec, seed=7)
    p2 = init_params(spec, seed=7)
    for (W1, b1), (W2, b2) in zip(p1.tail, p2.tail):
        assert np.array_equal(W1, W2) and np.array_equal(b1, b2)
    assert np.array_equal(p1.W1, p2.W1)
    assert all(np.all(b == 0.0) for _, b in p1.tail)
    assert not np.array_equal(p1.W1, init_params(spec, seed=8).W1)


def test_network_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(0, 4)
    with pytest.raises(ValueError):
        NetworkSpec(4, 4, dropout_rate=1.0)
    with pytest.raises(ValueError):
        NetworkSpec(4, 4, activation="tanh")


def test_params_shape_chain_validation():
    with pytest.raises(ValueError):
        NetworkParams(W1=np.zeros((3, 2)), tail=[(np.zeros((4, 1)), np.zeros(1))])
    with pytest.raises(ValueError):
        NetworkParams(W1=np.full((3, 2), np.nan), tail=[])


# ------------------------------------------------------------------ forward

def test_forward_zero_tail_weights():
    params = NetworkParams(
        W1=np.random.default_rng(0).standard_normal((5, 4)),
        tail=[(np.zeros((4, 3)), np.zeros(3)), (np.zeros((3, 1)), np.zeros(1))],
    )
    assert np.all(forward(params, np.ones(5)) == 0.0)


def test_forward_pure_linear_map():
    params = NetworkParams(W1=np.array([[1.0], [2.0]]), tail=[])
    assert forward(params, np.array([3.0, 4.0]))[0] == 11.0


def test_forward_matches_straight_line_oracle():
    rng = np.random.default_rng(3)
    spec, params, _ = random_net(rng, n_tail=3, width_hi=8)
    X = rng.standard_normal((7, spec.n_in))
    # independent straight-line evaluation, one sample at a time
    want = []
    for x in X:
        h = params.W1.T @ x
        for W, b in params.tail:
            h = W.T @ np.maximum(h, 0.0) + b
        want.append(h)
    got = forward(params, X)
    assert np.max(np.abs(got - np.array(want))) < 1e-12


def test_forward_batch_equals_per_row():
    rng = np.random.default_rng(4)
    _, params, _ = random_net(rng)
    X = rng.standard_normal((5, params.n_in))
    rows = np.stack([forward(params, x) for x in X])
    assert np.allclose(forward(params, X), rows, atol=1e-14)


def test_forward_overflow_carries_layer_index():
    params = NetworkParams(
        W1=np.full((2, 2), 1e200),
        tail=[(np.full((2, 2), 1e200), np.zeros(2)), (np.ones((2, 1)), np.zeros(1))],
    )
    with pytest.raises(NumericOverflowError) as err:
        forward(params, np.full(2, 1e200))
    assert err.value.layer is not None


def test_feature_and_w1_row_permutation_invariance():
    # dyadic entries keep every product and sum exact in float64
    rng = np.random.default_rng(5)
    W1 = rng.integers(-8, 9, size=(6, 3)) / 16.0
    tail = [
        (rng.integers(-8, 9, size=(3, 4)) / 16.0, rng.integers(-8, 9, size=4) / 16.0),
        (rng.integers(-8, 9, size=(4, 1)) / 16.0, rng.integers(-8, 9, size=1) / 16.0),
    ]
    params = NetworkParams(W1=W1, tail=tail)
    x = rng.integers(-8, 9, size=6) / 16.0
    perm = rng.permutation(6)
    permuted = NetworkParams(W1=W1[perm], tail=tail)
    assert forward(permuted, x[perm])[0] == forward(params, x)[0]


# ----------------------------------------------------------------- backward

def test_backward_linear_closed_form():
    w = np.array([0.5, -1.5])
    params = NetworkParams(W1=w[:, None], tail=[])
    x = np.array([2.0, 1.0])
    _, input_grad = backward(params, x, 0.0, loss=Loss.SQUARED)
    assert np.allclose(input_grad, 2.0 * (w @ x) * w, atol=1e-14)


def test_backward_matches_finite_differences_squared():
    rng = np.random.default_rng(10)
    for _ in range(10):
        _, params, x = random_net(rng, n_tail=int(rng.integers(1, 4)))
        y = float(rng.standard_normal())
        grads, input_grad = backward(params, x, y, loss=Loss.SQUARED)
        fd = fd_param_grads(params, x, y, Loss.SQUARED)
        for got, want in zip(grads.arrays(), fd):
            assert max_rel_err(got, want) < 1e-6
        assert max_rel_err(input_grad, fd_input_grad(params, x, y, Loss.SQUARED)) < 1e-6


def test_backward_matches_finite_differences_cross_entropy():
    rng = np.random.default_rng(11)
    for _ in range(5):
        _, params, x = random_net(rng, n_tail=2, out_width=3)
        y = int(rng.integers(0, 3))
        grads, input_grad = backward(params, x, y, loss=Loss.CROSS_ENTROPY)
        fd = fd_param_grads(params, x, y, Loss.CROSS_ENTROPY)
        for got, want in zip(grads.arrays(), fd):
            assert max_rel_err(got, want) < 1e-6
        assert max_rel_err(input_grad, fd_input_grad(params, x, y, Loss.CROSS_ENTROPY)) < 1e-6


def test_backward_batch_sums_param_grads():
    rng = np.random.default_rng(12)
    _, params, _ = random_net(rng)
    X = rng.standard_normal((4, params.n_in))
    y = rng.standard_normal(4)
    grads, input_grads = backward(params, X, y, loss=Loss.SQUARED)
    acc = [np.zeros_like(a) for a in params.arrays()]
    for i in range(4):
        g, ig = backward(params, X[i], y[i], loss=Loss.SQUARED)
        for dst, src in zip(acc, g.arrays()):
            dst += src
        assert np.allclose(input_grads[i], ig, atol=1e-12)
    for got, want in zip(grads.arrays(), acc):
        assert np.allclose(got, want, atol=1e-10)


def test_train_mode_dropout_zero_equals_eval():
    rng = np.random.default_rng(13)
    _, params, x = random_net(rng)
    g_eval, ig_eval = backward(params, x, 0.3, loss=Loss.SQUARED, mode="eval")
    g_train, ig_train = backward(
        params, x, 0.3, loss=Loss.SQUARED, mode="train",
        dropout_rate=0.0, rng=substream(0, "mask"),
    )
    for a, b in zip(g_eval.arrays(), g_train.arrays()):
        assert np.array_equal(a, b)
    assert np.array_equal(ig_eval, ig_train)


def test_cross_entropy_gradients_finite_under_fuzz():
    rng = np.random.default_rng(14)
    spec = NetworkSpec(6, 5, (4,), out_width=3)
    for _ in range(20):
        params = init_params(spec, int(rng.integers(0, 2**31)))
        x = rng.standard_normal(6) * float(rng.choice([0.1, 1.0, 30.0]))
        y = int(rng.integers(0, 3))
        grads, ig = backward(params, x, y, loss=Loss.CROSS_ENTROPY)
        assert all(np.all(np.isfinite(a)) for a in grads.arrays())
        assert np.all(np.isfinite(ig))


# --------------------------------------------------------------- sensitivity

def test_sensitivity_of_linear_net_is_m_times_w():
    w = np.array([1.0, -2.0, 0.5])
    params = NetworkParams(W1=w[:, None], tail=[])
    X = np.random.default_rng(0).standard_normal((7, 3))
    assert np.allclose(input_sensitivity(params, X), 7 * w, atol=1e-12)


def test_sensitivity_single_row_matches_identity_loss_gradient():
    rng = np.random.default_rng(15)
    _, params, x = random_net(rng)
    # squared loss with y = f(x) - 1/2 has output-gradient exactly one
    y = float(forward(params, x)[0]) - 0.5
    _, input_grad = backward(params, x, y, loss=Loss.SQUARED)
    assert np.allclose(input_sensitivity(params, x[None, :]), input_grad, atol=1e-12)


def test_sensitivity_matches_summed_finite_differences():
    rng = np.random.default_rng(16)
    _, params, _ = random_net(rng, n_tail=1)
    X = rng.standard_normal((3, params.n_in))
    xi = input_sensitivity(params, X)
    h = 1e-5
    fd = np.zeros(params.n_in)
    for j in range(params.n_in):
        for i in range(3):
            xp, xm = X[i].copy(), X[i].copy()
            xp[j] += h
            xm[j] -= h
            fd[j] += (forward(params, xp)[0] - forward(params, xm)[0]) / (2 * h)
    assert max_rel_err(xi, fd) < 1e-6


def test_sensitivity_lies_in_w1_column_space():
    rng = np.random.default_rng(17)
    for _ in range(5):
        _, params, _ = random_net(rng)
        X = rng.standard_normal((6, params.n_in))
        _, ig = backward(params, X, rng.standard_normal(6), loss=Loss.SQUARED)
        Q = orthonormal_columns(params.W1)
        for row in ig:
            resid = row - Q @ (Q.T @ row)
            assert np.linalg.norm(resid) <= 1e-10 * max(np.linalg.norm(row), 1e-30)


def test_sensitivity_multi_output_sum_and_single_logit():
    rng = np.random.default_rng(18)
    _, params, _ = random_net(rng, out_width=3)
    X = rng.standard_normal((4, params.n_in))
    total = input_sensitivity(params, X, output="sum")
    parts = sum(input_sensitivity(params, X, output=k) for k in range(3))
    assert np.allclose(total, parts, atol=1e-12)


# ------------------------------------------------------------------ training

def test_train_zero_iterations_returns_params_unchanged():
    rng = np.random.default_rng(19)
    _, params, _ = random_net(rng)
    X = rng.standard_normal((6, params.n_in))
    y = rng.standard_normal(6)
    cfg = TrainConfig(iterations=0, batch_size=2, seed=0)
    out, traj = train(params, (X, y), cfg)
    assert traj == []
    for a, b in zip(out.arrays(), params.arrays()):
        assert np.array_equal(a, b)


def test_train_single_full_batch_step_closed_form():
    # linear net, squared loss, sum reduction:
    # w1 = w0 - eta * sum_i 2 (w0.x_i - y_i) x_i
    w0 = np.array([0.25, -0.5])
    X = np.array([[1.0, 2.0], [3.0, -1.0]])
    y = np.array([1.0, 0.5])
    eta = 0.01
    params = NetworkParams(W1=w0[:, None], tail=[])
    cfg = TrainConfig(
        loss=Loss.SQUARED, batch_size=2, learning_rate=eta, iterations=1,
        sampling=Sampling.WITHOUT_REPLACEMENT, seed=0, reduction="sum",
    )
    trained, traj = train(params, (X, y), cfg)
    resid = X @ w0 - y
    want = w0 - eta * (2.0 * resid @ X)
    assert np.allclose(trained.W1[:, 0], want, atol=1e-14)
    assert len(traj) == 1 and traj[0][0] == 1


def test_mean_reduction_equals_sum_with_scaled_rate():
    rng = np.random.default_rng(20)
    spec = NetworkSpec(5, 4, (3,))
    params = init_params(spec, 0)
    X = rng.standard_normal((8, 5))
    y = rng.standard_normal(8)
    kw = dict(loss=Loss.SQUARED, batch_size=8, iterations=3,
              sampling=Sampling.WITHOUT_REPLACEMENT, seed=1)
    got_mean, _ = train(params, (X, y), TrainConfig(learning_rate=0.08, reduction="mean", **kw))
    got_sum, _ = train(params, (X, y), TrainConfig(learning_rate=0.01, reduction="sum", **kw))
    for a, b in zip(got_mean.arrays(), got_sum.arrays()):
        assert np.allclose(a, b, atol=1e-12)


def test_train_is_bit_deterministic():
    rng = np.random.default_rng(21)
    spec = NetworkSpec(6, 8, (8,), dropout_rate=0.2)
    params = init_params(spec, 3)
    X = rng.standard_normal((20, 6))
    y = rng.standard_normal(20)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-2, iterations=25, seed=9)
    out1, traj1 = train(params, (X, y), cfg, dropout_rate=0.2)
    out2, traj2 = train(params, (X, y), cfg, dropout_rate=0.2)
    for a, b in zip(out1.arrays(), out2.arrays()):
        assert np.array_equal(a, b)
    assert traj1 == traj2


def test_train_loss_trajectory_decreases_on_learnable_problem():
    sig = make_signal_regression(6, 1)
    X = np.random.default_rng(22).standard_normal((64, 6))
    ds = gen_regression(X, sig, seed=4, noise_sd=0.1)
    spec = NetworkSpec(6, 32, (32,))
    cfg = TrainConfig(batch_size=16, learning_rate=2e-3, iterations=300, seed=5,
                      reduction="mean")
    _, traj = train(init_params(spec, 6), ds, cfg)
    assert traj[-1][1] < 0.5 * traj[0][1]


def test_train_batch_schedule_is_data_independent():
    from mirror_select.net import _batch_indices

    cfg = TrainConfig(batch_size=4, iterations=5, seed=11)
    a = [_batch_indices(cfg, 10, t).tolist() for t in range(1, 6)]
    b = [_batch_indices(cfg, 10, t).tolist() for t in range(1, 6)]
    assert a == b
    assert all(list(idx) == sorted(idx) for idx in a)
    cfg2 = TrainConfig(batch_size=4, iterations=5, seed=11,
                       sampling=Sampling.WITHOUT_REPLACEMENT)
    per_epoch = -(-10 // 4)
    epoch0 = [_batch_indices(cfg2, 10, t) for t in range(1, per_epoch + 1)]
    assert sorted(np.concatenate(epoch0).tolist()) == list(range(10))


def test_train_without_replacement_batch_too_large():
    with pytest.raises(ValueError):
        train(
            NetworkParams(W1=np.ones((2, 1)), tail=[]),
            (np.ones((3, 2)), np.ones(3)),
            TrainConfig(batch_size=8, iterations=1, sampling=Sampling.WITHOUT_REPLACEMENT),
        )


def test_train_overflow_reports_iteration():
    params = NetworkParams(W1=np.ones((2, 2)), tail=[(np.ones((2, 1)), np.zeros(1))])
    X = np.ones((4, 2))
    y = np.zeros(4)
    cfg = TrainConfig(batch_size=4, learning_rate=1e160, iterations=5, seed=0,
                      reduction="sum")
    with pytest.raises(NumericOverflowError) as err:
        train(params, (X, y), cfg)
    assert err.value.iteration is not None


def test_weight_decay_shrinks_weights_before_step():
    w0 = np.array([1.0, -2.0])
    params = NetworkParams(W1=w0[:, None], tail=[])
    X = np.zeros((2, 2))  # zero inputs: gradient is exactly zero
    y = np.zeros(2)
    eta, wd = 0.1, 0.5
    cfg = TrainConfig(batch_size=2, learning_rate=eta, iterations=1, seed=0,
                      sampling=Sampling.WITHOUT_REPLACEMENT, weight_decay=wd,
                      reduction="sum")
    trained, _ = train(params, (X, y), cfg)
    assert np.allclose(trained.W1[:, 0], w0 * (1.0 - eta * wd), atol=1e-15)


def test_learning_rate_schedule_callable():
    w0 = np.array([1.0])
    params = NetworkParams(W1=w0[:, None], tail=[])
    X = np.array([[1.0]])
    y = np.array([0.0])
    # eta_t = 0.1 / t; two full-batch steps on f(x) = w x with x = 1, y = 0
    cfg = TrainConfig(batch_size=1, learning_rate=lambda t: 0.1 / t, iterations=2,
                      sampling=Sampling.WITHOUT_REPLACEMENT, seed=0, reduction="sum")
    trained, _ = train(params, (X, y), cfg)
    w1 = 1.0 - 0.1 * 2.0 * 1.0
    w2 = w1 - 0.05 * 2.0 * w1
    assert trained.W1[0, 0] == pytest.approx(w2, abs=1e-15)


def test_checkpoint_callback_fires_and_zero_means_initial():
    rng = np.random.default_rng(23)
    spec = NetworkSpec(4, 4, ())
    params = init_params(spec, 0)
    X = rng.standard_normal((8, 4))
    y = rng.standard_normal(8)
    seen = {}
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, iterations=6, seed=2)
    train(params, (X, y), cfg, checkpoints=(0, 3, 6),
          on_checkpoint=lambda t, p: seen.__setitem__(t, p.W1.copy()))
    assert sorted(seen) == [0, 3, 6]
    assert np.array_equal(seen[0], params.W1)
    assert not np.array_equal(seen[3], seen[6])


# ---------------------------------------------------------------- checkpoints

def test_params_checkpoint_roundtrip_bit_exact(tmp_path):
    spec = NetworkSpec(5, 4, (3,), out_width=2)
    params = init_params(spec, 42)
    save_params(params, tmp_path, spec=spec, seed=42)
    back = load_params(tmp_path)
    assert np.array_equal(back.W1, params.W1)
    for (W1, b1), (W2, b2) in zip(back.tail, params.tail):
        assert np.array_equal(W1, W2) and np.array_equal(b1, b2)
    assert (tmp_path / "manifest.json").exists()


def test_loss_value_matches_oracle():
    rng = np.random.default_rng(24)
    _, params, _ = random_net(rng)
    X = rng.standard_normal((9, params.n_in))
    y = rng.standard_normal(9)
    want = np.mean([(y[i] - forward(params, X[i])[0]) ** 2 for i in range(9)])
    assert loss_value(params, X, y, Loss.SQUARED) == pytest.approx(want, rel=1e-12)
