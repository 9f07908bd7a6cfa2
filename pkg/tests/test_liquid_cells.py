"""LTC/CfC/SSM step semantics, boundedness, and NCP wiring properties."""

import math

import numpy as np
import pytest

from liquidbench.liquid_cells import (CfcParams, LtcParams, NcpWiring,
                                      SsmParams, apply_wiring,
                                      build_ncp_wiring, cfc_step, ltc_rhs,
                                      ltc_step_fused, ssm_step)
from liquidbench.models import build_model
from liquidbench.numerics import rng_new, softplus


def _raw_for_tau(tau):
    """Invert tau = softplus(raw) + 0.05 for test construction."""
    return math.log(math.expm1(tau - 0.05))


def _ltc(np_rng, n, m, o, tau=None):
    p = LtcParams(W_gx=np_rng.standard_normal((n, n)),
                  W_gi=np_rng.standard_normal((n, m)),
                  b_g=np_rng.standard_normal(n),
                  tau_raw=np_rng.standard_normal(n),
                  A=np_rng.standard_normal(n),
                  W_out=np_rng.standard_normal((o, n)),
                  b_out=np_rng.standard_normal(o))
    if tau is not None:
        p.tau_raw = np.full(n, _raw_for_tau(tau))
    return p


def _cfc(np_rng, n, m, o):
    w = lambda: np_rng.standard_normal((n, n + m))
    b = lambda: np_rng.standard_normal(n)
    return CfcParams(W_f=w(), b_f=b(), W_g=w(), b_g=b(), W_h=w(), b_h=b(),
                     W_out=np_rng.standard_normal((o, n)),
                     b_out=np_rng.standard_normal(o))


class TestLtcRhs:
    def test_gate_forced_zero_gives_pure_decay(self, np_rng):
        p = _ltc(np_rng, 4, 2, 1)
        p.b_g[:] = -30.0
        p.W_gx[:] = 0.0
        p.W_gi[:] = 0.0
        x = np_rng.standard_normal(4)
        rhs = ltc_rhs(p, x, np.zeros(2))
        assert np.max(np.abs(rhs + x / p.tau)) < 1e-12

    def test_scalar_equilibrium(self, np_rng):
        # tau=1, g=1, A=2, x=1: rhs = -(1+1)*1 + 1*2 = 0
        p = _ltc(np_rng, 1, 1, 1, tau=1.0)
        p.b_g[:] = 1e4  # saturate the gate to 1
        p.W_gx[:] = 0.0
        p.W_gi[:] = 0.0
        p.A[:] = 2.0
        rhs = ltc_rhs(p, np.array([1.0]), np.zeros(1))
        assert abs(rhs[0]) < 1e-12

    def test_matches_hand_composition(self, np_rng):
        for _ in range(100):
            p = _ltc(np_rng, 3, 2, 1)
            x = np_rng.standard_normal(3)
            u = np_rng.standard_normal(2)
            a = p.W_gx @ x + p.W_gi @ u + p.b_g
            g = 1.0 / (1.0 + np.exp(-a))
            tau = np.log1p(np.exp(-np.abs(p.tau_raw))) + \
                np.maximum(p.tau_raw, 0.0) + 0.05
            expected = -(1.0 / tau + g) * x + g * p.A
            assert np.max(np.abs(ltc_rhs(p, x, u) - expected)) < 1e-14


class TestLtcFusedStep:
    def test_scalar_hand_value(self, np_rng):
        # tau=1, g=1, A=1, x=0, dt=0.1 -> 0.1 / 1.2
        p = _ltc(np_rng, 1, 1, 1, tau=1.0)
        p.b_g[:] = 1e4
        p.W_gx[:] = 0.0
        p.W_gi[:] = 0.0
        p.A[:] = 1.0
        out = ltc_step_fused(p, np.zeros(1), np.zeros(1), 0.1)
        assert out[0] == pytest.approx(0.1 / 1.2, abs=1e-9)
        assert out[0] == pytest.approx(0.083333, abs=1e-6)

    def test_small_dt_consistency_with_rhs(self, np_rng):
        dt = 1e-6
        for _ in range(20):
            p = _ltc(np_rng, 4, 2, 1)
            x = np_rng.standard_normal(4)
            u = np_rng.standard_normal(2)
            slope = (ltc_step_fused(p, x, u, dt) - x) / dt
            rhs = ltc_rhs(p, x, u)
            rel = np.max(np.abs(slope - rhs) /
                         np.maximum(1e-8, np.abs(rhs)))
            assert rel < 1e-4

    def test_contracts_toward_bias_with_huge_tau(self, np_rng):
        p = _ltc(np_rng, 3, 2, 1)
        p.tau_raw[:] = 1e4  # tau ~ 1e4: decay term negligible
        x = p.A.copy()
        out = ltc_step_fused(p, x, np_rng.standard_normal(2), 0.5)
        slack = 1e-3 * (1.0 + np.abs(p.A))  # residual 1/tau leak
        lo = np.minimum(x, p.A) - slack
        hi = np.maximum(x, p.A) + slack
        assert np.all(out >= lo) and np.all(out <= hi)

    def test_boundedness_ten_thousand_draws(self, np_rng):
        violations = 0
        for _ in range(10_000):
            n = int(np_rng.integers(1, 6))
            p = _ltc(np_rng, n, 2, 1)
            x = 5.0 * np_rng.standard_normal(n)
            u = 5.0 * np_rng.standard_normal(2)
            dt = float(np_rng.uniform(1e-4, 10.0))
            out = ltc_step_fused(p, x, u, dt)
            bound = max(np.max(np.abs(x)), np.max(np.abs(p.A)))
            if np.max(np.abs(out)) > bound + 1e-12:
                violations += 1
        assert violations == 0

    def test_rejects_nonpositive_dt(self, np_rng):
        p = _ltc(np_rng, 2, 1, 1)
        with pytest.raises(ValueError):
            ltc_step_fused(p, np.zeros(2), np.zeros(1), 0.0)


class TestCfcStep:
    def test_zero_gap_is_even_mix(self, np_rng):
        p = _cfc(np_rng, 4, 2, 1)
        x = np_rng.standard_normal(4)
        u = np_rng.standard_normal(2)
        z = np.concatenate([x, u])
        g = np.tanh(p.W_g @ z + p.b_g)
        h = np.tanh(p.W_h @ z + p.b_h)
        out = cfc_step(p, x, u, 0.0)
        assert np.max(np.abs(out - 0.5 * (g + h))) < 1e-14

    def test_large_gap_relaxes_to_h_head(self, np_rng):
        p = _cfc(np_rng, 4, 2, 1)
        x = np_rng.standard_normal(4)
        u = np_rng.standard_normal(2)
        z = np.concatenate([x, u])
        h = np.tanh(p.W_h @ z + p.b_h)
        out = cfc_step(p, x, u, 1e6)
        assert np.max(np.abs(out - h)) < 1e-9

    def test_output_between_heads_and_bounded(self, np_rng):
        for _ in range(100):
            p = _cfc(np_rng, 5, 3, 1)
            x = np_rng.standard_normal(5)
            u = np_rng.standard_normal(3)
            z = np.concatenate([x, u])
            g = np.tanh(p.W_g @ z + p.b_g)
            h = np.tanh(p.W_h @ z + p.b_h)
            out = cfc_step(p, x, u, float(np_rng.uniform(0, 10)))
            assert np.all(out >= np.minimum(g, h) - 1e-12)
            assert np.all(out <= np.maximum(g, h) + 1e-12)
            assert np.all(np.abs(out) <= 1.0)

    def test_negative_gap_rejected(self, np_rng):
        p = _cfc(np_rng, 2, 1, 1)
        with pytest.raises(ValueError):
            cfc_step(p, np.zeros(2), np.zeros(1), -1.0)


class TestSsmStep:
    def test_zero_dynamics(self, np_rng):
        C = np_rng.standard_normal((2, 3))
        p = SsmParams(A=np.zeros((3, 3)), B=np.zeros(3), C=C)
        x = np_rng.standard_normal(3)
        x2, y = ssm_step(p, x, 1.5, 0.1)
        assert np.array_equal(x2, x)
        assert np.max(np.abs(y - C @ x)) < 1e-15

    def test_scalar_hand_value(self):
        p = SsmParams(A=np.array([[-1.0]]), B=np.array([1.0]),
                      C=np.array([[2.0]]))
        x2, y = ssm_step(p, np.zeros(1), 1.0, 0.1)
        assert x2[0] == pytest.approx(0.1, abs=1e-15)
        assert y[0] == pytest.approx(0.2, abs=1e-15)

    def test_no_drive_reduces_to_linear_euler(self, np_rng):
        p = SsmParams(A=np_rng.standard_normal((4, 4)),
                      B=np_rng.standard_normal(4),
                      C=np_rng.standard_normal((2, 4)))
        x = np_rng.standard_normal(4)
        x2, _ = ssm_step(p, x, 0.0, 0.05)
        assert np.max(np.abs(x2 - (x + 0.05 * (p.A @ x)))) < 1e-14


class TestNcpWiring:
    def test_full_fanout_gives_dense_masks(self):
        w = build_ncp_wiring(rng_new(0, 0), (3, 4, 5, 2), (4, 5, 2),
                             recurrent_fanout=5)
        assert np.all(w.sensory_inter == 1.0)
        assert np.all(w.inter_command == 1.0)
        assert np.all(w.command_command == 1.0)
        assert np.all(w.command_motor == 1.0)

    def test_every_nonsensory_neuron_has_inbound_edge(self):
        for seed in range(100):
            w = build_ncp_wiring(rng_new(seed, 0), (8, 12, 6, 1), (4, 4, 3))
            assert np.all(w.sensory_inter.sum(axis=1) >= 1)
            assert np.all(w.inter_command.sum(axis=1) >= 1)
            assert np.all(w.command_motor.sum(axis=1) >= 1)

    def test_reachability_from_sensory_layer(self):
        for seed in range(25):
            w = build_ncp_wiring(rng_new(seed, 1), (5, 9, 6, 2), (2, 2, 1))
            reached_inter = w.sensory_inter.sum(axis=1) >= 1
            assert reached_inter.all()
            reached_cmd = (w.inter_command @ reached_inter) >= 1
            assert reached_cmd.all()
            reached_motor = (w.command_motor @ reached_cmd) >= 1
            assert reached_motor.all()

    def test_paper_scale_circuit_representable(self):
        # a 19-neuron (12 inter + 6 command + 1 motor) circuit with exactly
        # 253 synapses fits the mask structure: full capacity at 12 sensory
        # channels is 12*12 + 12*6 + 6*6 + 6*1 = 258 >= 253
        w = build_ncp_wiring(rng_new(3, 0), (12, 12, 6, 1), (12, 6, 1),
                             recurrent_fanout=6)
        assert w.hidden == 19
        assert w.synapse_count() == 258
        w.sensory_inter[0, :5] = 0.0  # row keeps 7 inbound edges
        assert w.synapse_count() == 253
        assert np.all(w.sensory_inter.sum(axis=1) >= 1)

    def test_determinism_and_validation(self):
        a = build_ncp_wiring(rng_new(5, 2), (4, 6, 5, 2), (3, 2, 1))
        b = build_ncp_wiring(rng_new(5, 2), (4, 6, 5, 2), (3, 2, 1))
        assert np.array_equal(a.state_mask(), b.state_mask())
        with pytest.raises(ValueError):
            build_ncp_wiring(rng_new(0, 0), (0, 2, 2, 1), (1, 1, 1))
        with pytest.raises(ValueError):
            build_ncp_wiring(rng_new(0, 0), (2, 2, 2, 1), (0, 1, 1))

    def test_assembled_mask_blocks(self):
        w = build_ncp_wiring(rng_new(1, 0), (3, 4, 3, 2), (2, 2, 1))
        sm = w.state_mask()
        n = w.hidden
        assert sm.shape == (n, n)
        assert np.all(sm[:4, :] == 0.0)          # inter rows: no state input
        assert np.all(sm[4:7, 7:] == 0.0)        # command <- motor forbidden
        assert np.all(sm[7:, :4] == 0.0)         # motor <- inter forbidden
        assert np.all(sm[7:, 7:] == 0.0)         # motor recurrence forbidden
        im = w.input_mask()
        assert np.all(im[4:, :] == 0.0)          # only inter reads sensors
        om = w.output_mask(2)
        assert np.all(om[:, :7] == 0.0) and np.all(om[:, 7:] == 1.0)


class TestApplyWiring:
    def _dense_wiring(self, s, i, c, mo):
        return NcpWiring((s, i, c, mo),
                         sensory_inter=np.ones((i, s)),
                         inter_command=np.ones((c, i)),
                         command_command=np.ones((c, c)),
                         command_motor=np.ones((mo, c)),
                         seed=0, stream_id=0)

    def test_all_ones_masks_keep_allowed_blocks(self, np_rng):
        w = self._dense_wiring(2, 3, 2, 1)
        p = _ltc(np_rng, 6, 2, 1)
        gx_before = p.W_gx.copy()
        apply_wiring(w, p)
        # allowed blocks unchanged, forbidden blocks zeroed
        assert np.array_equal(p.W_gx[3:5, :5], gx_before[3:5, :5])
        assert np.all(p.W_gx[:3, :] == 0.0)

    def test_zero_recurrent_mask_removes_state_dependence(self, np_rng):
        w = self._dense_wiring(2, 3, 2, 1)
        w.inter_command[:] = 0.0
        w.command_command[:] = 0.0
        w.command_motor[:] = 0.0
        p = _ltc(np_rng, 6, 2, 1)
        apply_wiring(w, p)
        assert np.all(p.W_gx == 0.0)
        x1 = np_rng.standard_normal(6)
        x2 = np_rng.standard_normal(6)
        u = np_rng.standard_normal(2)
        a = p.W_gi @ u + p.b_g
        g = 1.0 / (1.0 + np.exp(-a))
        # gate identical whatever the state
        for x in (x1, x2):
            rhs = ltc_rhs(p, x, u)
            assert np.max(np.abs(rhs - (-(1 / p.tau + g) * x + g * p.A))) \
                < 1e-12

    def test_masked_weights_stay_zero_through_training(self):
        from liquidbench.training import TrainConfig, train_bptt
        wiring = build_ncp_wiring(rng_new(5, 4), (2, 6, 4, 2), (3, 2, 2))
        model = build_model("cfc", 2, 2, 12, rng=rng_new(5, 2), wiring=wiring)
        mask = model.mask.copy()
        assert np.all(model.params.data[mask == 0.0] == 0.0)
        d = rng_new(9, 9)

        class Windows:
            inputs = d.normals(64 * 6 * 2).reshape(64, 6, 2)
            targets = d.normals(64 * 2).reshape(64, 2)

        train_bptt(model, Windows, TrainConfig(epochs=2, batch_size=6,
                                               lr=0.02, seed=1))
        assert np.all(model.params.data[mask == 0.0] == 0.0)
        # and the trainable entries did move
        assert np.any(model.params.data[mask == 1.0] != 0.0)

    def test_type_and_shape_validation(self, np_rng):
        w = self._dense_wiring(2, 3, 2, 1)
        with pytest.raises(TypeError):
            apply_wiring(w, object())
        with pytest.raises(ValueError):
            apply_wiring(w, _ltc(np_rng, 4, 2, 1))
