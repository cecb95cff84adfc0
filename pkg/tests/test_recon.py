import numpy as np
import pytest

from mirid.denoiser import (
    NetArch,
    gradients_vector,
    init_weights,
    net_param_vector,
    set_net_params,
)
from mirid.numerics import RngStream, ifft2c
from mirid.operators import normal_apply, sense_adjoint, sense_forward
from mirid.recon import (
    MiridTape,
    ReconConfig,
    combine_shots,
    dc_solve,
    mirid_forward,
    mirid_backward,
    sense_recon,
)
from mirid.simulate import (
    AcquisitionSpec,
    make_coil_maps,
    make_shot_masks,
    make_shot_phase,
    acquire,
)


def random_complex(rng, shape):
    return rng.normal(shape) + 1j * rng.normal(shape)


def small_problem(seed, nshots=2, ncoils=4, ny=12, nx=12, accel=2, pf=1.0, sigma=0.0):
    rng = RngStream(seed)
    img = np.abs(rng.normal((ny, nx))) + 0.2
    coils = make_coil_maps(ncoils, ny, nx)
    phases = np.stack(
        [make_shot_phase(m, nshots, ny, nx, rng.child(m)) for m in range(nshots)]
    )
    spec = AcquisitionSpec(ny=ny, nx=nx, ncoils=ncoils, nshots=nshots,
                           accel=accel, pf=pf, noise_sigma=sigma)
    masks = make_shot_masks(spec)
    b = acquire(img, coils, phases, masks, sigma, rng.child(99))
    return img, coils, phases, masks, b


def zero_nets(nshots, hidden=8, n_layers=3, seed=0):
    arch = NetArch(complex_channels=2 * nshots, hidden=hidden, n_layers=n_layers)
    return init_weights(arch, RngStream(seed)), init_weights(arch, RngStream(seed + 1))


def proximal_iteration_oracle(b, coils, mask, cfg):
    """Net-free reimplementation: iterate the data-consistency solve with the
    current iterate as both auxiliaries."""
    adjoint_image = sense_adjoint(b, coils, mask)
    x = adjoint_image
    lam = cfg.lambda1 + cfg.lambda2
    for _ in range(cfg.unroll_count):
        rhs = adjoint_image + lam * x
        x = dc_solve(rhs, coils, mask, lam, cfg.cg_steps, cfg.cg_tol)
    return x


class TestSenseRecon:
    def test_full_mask_single_coil_is_inverse_fft(self):
        rng = RngStream(40)
        b = random_complex(rng, (2, 1, 10, 10))
        coils = np.ones((1, 10, 10), dtype=np.complex128)
        mask = np.ones((2, 10), dtype=bool)
        x = sense_recon(b, coils, mask, tikhonov=0.0, cg_steps=5)
        assert np.allclose(x, ifft2c(b[:, 0]), rtol=1e-10, atol=1e-12)

    def test_noiseless_full_sampling_recovers_truth(self):
        # simulation round-trip oracle
        img, coils, phases, masks, b = small_problem(41, nshots=2, ncoils=8, accel=1)
        x = sense_recon(b, coils, masks, tikhonov=0.0, cg_steps=20)
        for m in range(2):
            assert np.allclose(x[m], phases[m] * img, atol=1e-8)
        assert np.allclose(combine_shots(x), img, atol=1e-8)

    def test_undersampled_noisy_worse_than_full(self):
        img, coils, _, masks_full, b_full = small_problem(
            42, ncoils=8, accel=1, sigma=0.02
        )
        img2, coils2, _, masks_r3, b_r3 = small_problem(
            42, ncoils=8, accel=3, pf=1.0, sigma=0.02
        )
        assert np.array_equal(img, img2)
        err_full = np.linalg.norm(combine_shots(
            sense_recon(b_full, coils, masks_full, 0.0, 20)) - img)
        err_r3 = np.linalg.norm(combine_shots(
            sense_recon(b_r3, coils2, masks_r3, 0.0, 20)) - img)
        assert err_r3 > err_full

    def test_shot_permutation_equivariance(self):
        img, coils, phases, masks, b = small_problem(43, nshots=2, accel=2)
        x = sense_recon(b, coils, masks, 0.01, 15)
        x_perm = sense_recon(b[::-1], coils, masks[::-1], 0.01, 15)
        assert np.allclose(x_perm, x[::-1], atol=1e-13)


class TestDcSolve:
    def test_forward_then_solve_recovers(self):
        rng = RngStream(44)
        _, coils, _, masks, _ = small_problem(44, accel=2)
        x0 = random_complex(rng, (2, 12, 12))
        lam = 0.1
        rhs = normal_apply(x0, coils, masks, lam)
        x = dc_solve(rhs, coils, masks, lam, cg_steps=400, cg_tol=1e-14)
        assert np.max(np.abs(x - x0)) <= 1e-6

    def test_huge_lambda_limit(self):
        rng = RngStream(45)
        _, coils, _, masks, _ = small_problem(45, accel=2)
        rhs = random_complex(rng, (2, 12, 12))
        lam = 1e6
        x = dc_solve(rhs, coils, masks, lam, cg_steps=50)
        assert np.linalg.norm(x - rhs / lam) <= 0.01 * np.linalg.norm(rhs / lam)

    def test_full_mask_identity_plus_lambda(self):
        rng = RngStream(46)
        coils = make_coil_maps(4, 12, 12)
        mask = np.ones((2, 12), dtype=bool)
        rhs = random_complex(rng, (2, 12, 12))
        lam = 0.3
        x = dc_solve(rhs, coils, mask, lam, cg_steps=30)
        assert np.allclose(x, rhs / (1.0 + lam), rtol=1e-10, atol=1e-12)

    def test_nonpositive_lambda_rejected(self):
        _, coils, _, masks, b = small_problem(47)
        with pytest.raises(ValueError):
            dc_solve(b[:, 0], coils, masks, 0.0)


class TestMiridForward:
    def test_zero_net_full_mask_fixed_point(self):
        rng = RngStream(48)
        x_true = random_complex(rng, (2, 12, 12))
        coils = np.ones((1, 12, 12), dtype=np.complex128)
        mask = np.ones((2, 12), dtype=bool)
        b = sense_forward(x_true, coils, mask)
        image_net, kspace_net = zero_nets(2)
        for k in (1, 3, 10):
            cfg = ReconConfig(unroll_count=k)
            x, _ = mirid_forward(b, coils, mask, image_net, kspace_net, cfg)
            assert np.allclose(x, ifft2c(b[:, 0]), atol=1e-12)

    def test_zero_net_equals_proximal_iteration(self):
        # equivalence oracle against a net-free reimplementation
        _, coils, _, masks, b = small_problem(49, accel=2, sigma=0.01)
        image_net, kspace_net = zero_nets(2)
        cfg = ReconConfig(unroll_count=6)
        x, _ = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        oracle = proximal_iteration_oracle(b, coils, masks, cfg)
        assert np.max(np.abs(x - oracle)) <= 1e-8

    def test_k_zero_returns_adjoint(self):
        _, coils, _, masks, b = small_problem(50, accel=2)
        image_net, kspace_net = zero_nets(2)
        cfg = ReconConfig(unroll_count=0)
        x, _ = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        assert np.array_equal(x, sense_adjoint(b, coils, masks))

    def test_data_consistency_pull(self):
        _, coils, _, masks, b = small_problem(51, accel=3, ncoils=8, sigma=0.0)
        image_net, kspace_net = zero_nets(2)
        cfg = ReconConfig(unroll_count=10)
        x, _ = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        adj = sense_adjoint(b, coils, masks)
        res_rec = np.linalg.norm(sense_forward(x, coils, masks) - b)
        res_adj = np.linalg.norm(sense_forward(adj, coils, masks) - b)
        assert res_rec <= res_adj

    def test_deterministic(self):
        _, coils, _, masks, b = small_problem(52, accel=2)
        image_net, kspace_net = zero_nets(2, seed=5)
        cfg = ReconConfig(unroll_count=3)
        x1, _ = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        x2, _ = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        assert np.array_equal(x1, x2)

    def test_wrong_channel_count_rejected(self):
        _, coils, _, masks, b = small_problem(53, accel=2)
        image_net, kspace_net = zero_nets(1)  # built for one shot
        with pytest.raises(ValueError):
            mirid_forward(b, coils, masks, image_net, kspace_net, ReconConfig())


def randomized_nets(nshots, seed, hidden=6, n_layers=3):
    image_net, kspace_net = zero_nets(nshots, hidden=hidden, n_layers=n_layers, seed=seed)
    rng = RngStream(seed + 100)
    for net in (image_net, kspace_net):
        for layer in net.layers:
            layer.weights[...] = 0.2 * rng.normal(layer.weights.shape)
            layer.bias[...] = 0.05 * rng.normal(layer.bias.shape)
    return image_net, kspace_net


def norm_squared_loss(b, coils, masks, image_net, kspace_net, cfg):
    x, tape = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
    loss = float(np.sum(np.abs(x) ** 2))
    return loss, x, tape


class TestMiridBackward:
    def test_zero_upstream_zero_grads(self):
        _, coils, _, masks, b = small_problem(54, accel=2)
        image_net, kspace_net = randomized_nets(2, 54)
        cfg = ReconConfig(unroll_count=3)
        x, tape = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        gi, gk = mirid_backward(np.zeros_like(x), tape, coils, masks, cfg)
        assert np.all(gradients_vector(gi) == 0)
        assert np.all(gradients_vector(gk) == 0)

    def test_final_bias_gradient_nonzero_at_init(self):
        # training can escape the zero init
        _, coils, _, masks, b = small_problem(55, accel=2)
        image_net, kspace_net = zero_nets(2, seed=7)
        cfg = ReconConfig(unroll_count=3)
        x, tape = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        gi, gk = mirid_backward(2.0 * x, tape, coils, masks, cfg)
        assert np.linalg.norm(gi.biases[-1]) > 0
        assert np.linalg.norm(gk.biases[-1]) > 0

    def test_gradients_match_finite_differences(self):
        # end-to-end finite-difference oracle on an 8x8, 2-coil toy
        ny = nx = 8
        nshots = 1
        rng = RngStream(56)
        img = np.abs(rng.normal((ny, nx))) + 0.3
        coils = make_coil_maps(2, ny, nx)
        spec = AcquisitionSpec(ny=ny, nx=nx, ncoils=2, nshots=nshots, accel=2, pf=1.0)
        masks = make_shot_masks(spec)
        phases = np.ones((nshots, ny, nx), dtype=np.complex128)
        b = acquire(img, coils, phases, masks, 0.0, rng.child(1))
        image_net, kspace_net = randomized_nets(nshots, 56, hidden=4, n_layers=2)
        cfg = ReconConfig(unroll_count=2, cg_steps=200, cg_tol=1e-13)

        _, x, tape = norm_squared_loss(b, coils, masks, image_net, kspace_net, cfg)
        gi, gk = mirid_backward(2.0 * x, tape, coils, masks, cfg)
        analytic = np.concatenate([gradients_vector(gi), gradients_vector(gk)])

        p_i = net_param_vector(image_net)
        p_k = net_param_vector(kspace_net)
        params = np.concatenate([p_i, p_k])
        n_i = p_i.size
        idx = RngStream(57).choice(params.size, size=60, replace=False)
        h = 1e-5
        for j in idx:
            vals = []
            for sign in (+1, -1):
                p = params.copy()
                p[j] += sign * h
                set_net_params(image_net, p[:n_i])
                set_net_params(kspace_net, p[n_i:])
                loss, _, _ = norm_squared_loss(b, coils, masks, image_net, kspace_net, cfg)
                vals.append(loss)
            fd = (vals[0] - vals[1]) / (2 * h)
            assert abs(analytic[j] - fd) <= 1e-3 * (abs(fd) + abs(analytic[j])) + 1e-7
        set_net_params(image_net, params[:n_i])
        set_net_params(kspace_net, params[n_i:])

    def test_mismatched_tape_rejected(self):
        _, coils, _, masks, b = small_problem(58, accel=2)
        image_net, kspace_net = randomized_nets(2, 58)
        cfg = ReconConfig(unroll_count=3)
        x, tape = mirid_forward(b, coils, masks, image_net, kspace_net, cfg)
        with pytest.raises(ValueError):
            mirid_backward(x, tape, coils, masks, ReconConfig(unroll_count=4))
        with pytest.raises(ValueError):
            bad = MiridTape(image_net=image_net, kspace_net=kspace_net, unroll_count=3)
            mirid_backward(x, bad, coils, masks, cfg)


class TestCombineShots:
    def test_identical_shots(self):
        x = random_complex(RngStream(59), (1, 6, 6))
        stacked = np.concatenate([x, x, x], axis=0)
        assert np.allclose(combine_shots(stacked), np.abs(x[0]), atol=1e-15)

    def test_global_phase_invariant(self):
        x = random_complex(RngStream(60), (1, 6, 6))
        stacked = np.concatenate([x, x * np.exp(1j * 0.7)], axis=0)
        assert np.allclose(combine_shots(stacked), np.abs(x[0]), atol=1e-14)

    def test_hand_two_shot_case(self):
        # scalar evaluation: mean(|3+4i|, |1|) = mean(5, 1) = 3
        x = np.array([[[3.0 + 4.0j]], [[1.0 + 0.0j]]])
        assert combine_shots(x)[0, 0] == pytest.approx(3.0, abs=0)
