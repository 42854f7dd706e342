"""Server-side round logic: sampling, aggregation, the three update rules,
and the full training loop."""

import math

import numpy as np
import pytest

from fedsim import (
    ActiveSet,
    Batch,
    DivergenceError,
    FederatedDataset,
    LocalRunConfig,
    Model,
    ParamVector,
    ServerConfig,
    ServerState,
    biased_gradient,
    dot,
    fedavg_round,
    fedmom_round,
    full_gradient,
    generate_synthetic,
    gradient,
    local_sgd,
    loss,
    run_training,
    sample_active_set,
    weighted_average,
)
from fedsim import rng as rngmod


def make_dataset(num_clients, per_client, input_dim=2, seed=0):
    """Small least-squares federation with equal shard sizes."""
    gen = np.random.default_rng(seed)
    shards = []
    for _ in range(num_clients):
        x = gen.normal(size=(per_client, input_dim))
        y = x @ np.arange(1.0, input_dim + 1.0) + 0.01 * gen.normal(size=per_client)
        shards.append(Batch(x, y))
    return FederatedDataset(tuple(shards))


class TestServerConfig:
    def test_valid(self):
        cfg = ServerConfig("fedavg", clients=10, active=2, rounds=5, eta=5.0)
        assert cfg.eta == 5.0

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError, match="unknown algorithm"):
            ServerConfig("adam", clients=2, active=1, rounds=1)

    def test_active_exceeds_clients(self):
        with pytest.raises(ValueError, match="M=3 K=2"):
            ServerConfig("fedavg", clients=2, active=3, rounds=1)

    def test_eta_range_enforced(self):
        # K/M = 5, so 6 is out of range and 0.5 is below the floor
        with pytest.raises(ValueError, match=r"\[1, 5\]"):
            ServerConfig("fedavg", clients=10, active=2, rounds=1, eta=6.0)
        with pytest.raises(ValueError, match=r"\[1, 5\]"):
            ServerConfig("fedavg", clients=10, active=2, rounds=1, eta=0.5)

    def test_eta_override_lifts_range(self):
        cfg = ServerConfig(
            "fedavg", clients=10, active=2, rounds=1, eta=0.5,
            allow_eta_override=True,
        )
        assert cfg.eta == 0.5
        with pytest.raises(ValueError, match="finite and > 0"):
            ServerConfig(
                "fedavg", clients=10, active=2, rounds=1, eta=0.0,
                allow_eta_override=True,
            )

    def test_beta_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\)"):
            ServerConfig("fedmom", clients=2, active=1, rounds=1, eta=1.0, beta=1.0)

    def test_rounds_positive(self):
        with pytest.raises(ValueError, match="rounds"):
            ServerConfig("fedavg", clients=2, active=1, rounds=0, eta=1.0)


class TestServerState:
    def test_momentum_initial_state_copies_w(self):
        w0 = ParamVector.of(1.0, 2.0)
        st = ServerState.initial(w0, "fedmom")
        assert st.v == w0 and st.w == w0 and st.t == 0

    def test_plain_initial_state_has_no_v(self):
        st = ServerState.initial(ParamVector.of(1.0), "fedavg")
        assert st.v is None


class TestActiveSet:
    def test_sorted_and_iterable(self):
        s = ActiveSet((3, 1, 2))
        assert s.indices == (1, 2, 3)
        assert list(s) == [1, 2, 3]
        assert 2 in s and 0 not in s
        assert len(s) == 3

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            ActiveSet((1, 1))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ActiveSet(())


class TestSampleActiveSet:
    def test_full_participation_is_forced(self):
        s = sample_active_set(5, 5, np.random.default_rng(0))
        assert s.indices == (0, 1, 2, 3, 4)

    def test_singleton_universe(self):
        s = sample_active_set(1, 1, np.random.default_rng(0))
        assert s.indices == (0,)

    def test_oversampling_rejected(self):
        with pytest.raises(ValueError, match="cannot sample 3"):
            sample_active_set(2, 3, np.random.default_rng(0))

    def test_deterministic_given_stream(self):
        a = sample_active_set(100, 10, np.random.default_rng(42))
        b = sample_active_set(100, 10, np.random.default_rng(42))
        assert a.indices == b.indices

    def test_inclusion_frequency_matches_m_over_k(self):
        # each of 4 clients lands in a draw with p = M/K = 1/2; over
        # N = 10_000 draws the count is Binomial(N, 1/2) with sigma = 50
        rng = np.random.default_rng(1234)
        counts = np.zeros(4, dtype=np.int64)
        draws = 10_000
        for _ in range(draws):
            for k in sample_active_set(4, 2, rng):
                counts[k] += 1
        sigma = math.sqrt(draws * 0.25)
        assert np.all(np.abs(counts - draws / 2) <= 3 * sigma)


class TestBiasedGradient:
    def test_stationary_round_gives_zero(self):
        w = ParamVector.of(1.0, -2.0)
        locals_ = {0: w, 1: w}
        g = biased_gradient(w, locals_, [0.5, 0.5], ActiveSet((0, 1)))
        assert g == ParamVector.zeros(2)

    def test_single_mover_equal_weights(self):
        w = ParamVector.zeros(2)
        locals_ = {1: ParamVector.of(3.0, 3.0)}
        g = biased_gradient(
            w, locals_, [1 / 3, 1 / 3, 1 / 3], ActiveSet((1,))
        )
        assert g == ParamVector.of(-1.0, -1.0)

    def test_full_participation_single_step_recovers_gradient(self):
        # every client takes one full-batch step, so the aggregate must be
        # gamma times the global gradient
        ds = make_dataset(3, 6, input_dim=2, seed=5)
        model = Model.least_squares(2)
        w = ParamVector.of(0.3, -0.7)
        cfg = LocalRunConfig(gamma=0.05, local_steps=1, full_batch=True)
        locals_ = {
            k: local_sgd(w, model, ds.shards[k], cfg, np.random.default_rng(k))
            for k in range(3)
        }
        g = biased_gradient(w, locals_, ds.weights, ActiveSet((0, 1, 2)))
        want = 0.05 * full_gradient(model, w, ds).values
        np.testing.assert_allclose(g.values, want, rtol=1e-13, atol=0)

    def test_missing_model_named(self):
        w = ParamVector.zeros(1)
        with pytest.raises(ValueError, match="missing local model for active client 1"):
            biased_gradient(w, {0: w}, [0.5, 0.5], ActiveSet((0, 1)))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            biased_gradient(
                ParamVector.zeros(2),
                {0: ParamVector.zeros(3)},
                [1.0],
                ActiveSet((0,)),
            )

    def test_subset_average_is_scaled_full_sum(self):
        # brute force over all C(4,2)=6 subsets; weights and deltas are
        # dyadic so every operation is exact and equality can be literal
        import itertools

        w = ParamVector.zeros(2)
        locals_ = {
            0: ParamVector.of(1.0, -1.0),
            1: ParamVector.of(2.0, -2.0),
            2: ParamVector.of(4.0, -4.0),
            3: ParamVector.of(8.0, -8.0),
        }
        weights = [0.25] * 4
        acc = np.zeros(2)
        for pair in itertools.combinations(range(4), 2):
            acc += biased_gradient(w, locals_, weights, ActiveSet(pair)).values
        mean_over_subsets = acc / 6.0
        full = biased_gradient(w, locals_, weights, ActiveSet((0, 1, 2, 3))).values
        assert np.array_equal(mean_over_subsets, 0.5 * full)


class TestFedavgRound:
    def test_matches_weighted_average_of_local_models(self):
        # the K=3 single-mover example: with eta=1 the descent form must
        # land on the plain weighted average with inactive clients frozen
        w = ParamVector.zeros(2)
        mover = ParamVector.of(3.0, 3.0)
        g = biased_gradient(
            w, {1: mover}, [1 / 3, 1 / 3, 1 / 3], ActiveSet((1,))
        )
        nxt = fedavg_round(ServerState(w), g, eta=1.0)
        assert nxt.w == ParamVector.of(1.0, 1.0)
        avg = weighted_average([w, mover, w], [1 / 3, 1 / 3, 1 / 3])
        np.testing.assert_allclose(nxt.w.values, avg.values, rtol=1e-12)

    def test_zero_update_is_fixed_point(self):
        st = ServerState(ParamVector.of(5.0, -1.0), t=3)
        nxt = fedavg_round(st, ParamVector.zeros(2), eta=1.0)
        assert nxt.w == st.w and nxt.t == 4

    def test_scaled_step(self):
        nxt = fedavg_round(
            ServerState(ParamVector.of(1.0)), ParamVector.of(0.5), eta=2.0
        )
        assert nxt.w == ParamVector.of(0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            fedavg_round(ServerState(ParamVector.zeros(2)), ParamVector.zeros(3), 1.0)

    def test_overflow_raises_divergence(self):
        st = ServerState(ParamVector.of(1e308))
        with np.errstate(over="ignore"), pytest.raises(DivergenceError):
            fedavg_round(st, ParamVector.of(-1e308), eta=2.0)


class TestFedmomRound:
    def test_zero_beta_matches_fedavg_bitwise(self):
        gen = np.random.default_rng(9)
        for _ in range(20):
            w = ParamVector(gen.normal(size=4))
            g = ParamVector(gen.normal(size=4))
            eta = float(gen.uniform(1.0, 3.0))
            plain = fedavg_round(ServerState(w), g, eta)
            mom = fedmom_round(ServerState(w, v=w), g, eta, beta=0.0)
            assert mom.w.values.tobytes() == plain.w.values.tobytes()

    def test_extrapolation_arithmetic(self):
        st = ServerState(ParamVector.zeros(2), v=ParamVector.zeros(2))
        nxt = fedmom_round(st, ParamVector.of(-1.0, -1.0), eta=1.0, beta=0.9)
        assert nxt.v == ParamVector.of(1.0, 1.0)
        np.testing.assert_allclose(nxt.w.values, [1.9, 1.9], rtol=1e-15)

    def test_rest_is_fixed_point(self):
        w = ParamVector.of(2.0, 2.0)
        st = ServerState(w, t=7, v=w)
        nxt = fedmom_round(st, ParamVector.zeros(2), eta=1.0, beta=0.9)
        assert nxt.w == w and nxt.v == w and nxt.t == 8

    def test_requires_momentum_state(self):
        with pytest.raises(ValueError, match="momentum state"):
            fedmom_round(ServerState(ParamVector.of(1.0)), ParamVector.of(0.0), 1.0, 0.9)

    def test_beta_validated(self):
        st = ServerState(ParamVector.of(1.0), v=ParamVector.of(1.0))
        with pytest.raises(ValueError, match=r"\[0, 1\)"):
            fedmom_round(st, ParamVector.of(0.0), 1.0, 1.0)


class TestRunTraining:
    def test_degenerate_federation_is_one_sgd_step(self):
        # K=M=1, H=1, full batch, eta=1: exactly one centralized step
        ds = make_dataset(1, 8, input_dim=2, seed=3)
        model = Model.least_squares(2)
        w0 = ParamVector.of(0.5, 0.5)
        run = run_training(
            model, ds,
            ServerConfig("fedavg", clients=1, active=1, rounds=1, eta=1.0),
            LocalRunConfig(gamma=0.1, local_steps=1, full_batch=True),
            w0=w0,
        )
        want = w0.values - 0.1 * full_gradient(model, w0, ds).values
        np.testing.assert_allclose(run.final_state.w.values, want, rtol=1e-13)
        assert len(run.records) == 1 and run.records[0].t == 0

    def test_identical_seeds_identical_runs(self):
        ds = make_dataset(4, 10, seed=1)
        model = Model.least_squares(2)
        kwargs = dict(
            server_cfg=ServerConfig("fedavg", clients=4, active=2, rounds=12, eta=1.0),
            local_cfg=LocalRunConfig(gamma=0.05, local_steps=3, batch_size=4),
        )
        a = run_training(model, ds, **kwargs)
        b = run_training(model, ds, **kwargs)
        assert a.records == b.records
        for wa, wb in zip(a.weights, b.weights):
            assert wa.values.tobytes() == wb.values.tobytes()

    def test_shard_count_must_match_config(self):
        ds = make_dataset(3, 5)
        with pytest.raises(ValueError, match="3 shards but config says 4"):
            run_training(
                Model.least_squares(2), ds,
                ServerConfig("fedavg", clients=4, active=2, rounds=1, eta=1.0),
                LocalRunConfig(gamma=0.1, local_steps=1),
            )

    def test_single_step_variant_forces_one_local_step(self):
        ds = make_dataset(4, 10, seed=2)
        model = Model.least_squares(2)
        local = LocalRunConfig(gamma=0.05, local_steps=7, batch_size=4)
        sgd = run_training(
            model, ds,
            ServerConfig("fedsgd", clients=4, active=2, rounds=8, eta=1.0),
            local,
        )
        assert all(r.local_steps == 1 for r in sgd.records)
        # and it is bit-identical to fedavg explicitly configured with H=1
        avg = run_training(
            model, ds,
            ServerConfig("fedavg", clients=4, active=2, rounds=8, eta=1.0),
            LocalRunConfig(gamma=0.05, local_steps=1, batch_size=4),
        )
        assert sgd.final_state.w.values.tobytes() == avg.final_state.w.values.tobytes()

    def test_momentum_with_zero_beta_matches_plain_run_bitwise(self):
        ds = make_dataset(5, 8, seed=4)
        model = Model.least_squares(2)
        local = LocalRunConfig(gamma=0.05, local_steps=3, batch_size=4)
        plain = run_training(
            model, ds,
            ServerConfig("fedavg", clients=5, active=2, rounds=30, eta=1.0),
            local,
        )
        mom = run_training(
            model, ds,
            ServerConfig("fedmom", clients=5, active=2, rounds=30, eta=1.0, beta=0.0),
            local,
        )
        for wa, wb in zip(plain.weights, mom.weights):
            assert wa.values.tobytes() == wb.values.tobytes()

    def test_averaging_equivalence_each_round(self):
        # replay each round independently: with eta=1 the new server model
        # must equal the weighted average of local models, inactive clients
        # contributing the broadcast model
        ds = make_dataset(3, 6, seed=7)
        model = Model.least_squares(2)
        seed = 11
        local = LocalRunConfig(gamma=0.05, local_steps=3, batch_size=3)
        run = run_training(
            model, ds,
            ServerConfig("fedavg", clients=3, active=2, rounds=10, eta=1.0, seed=seed),
            local,
        )
        for t, rec in enumerate(run.records):
            w_t = run.weights[t]
            models = []
            for k in range(3):
                if k in rec.active_set:
                    models.append(
                        local_sgd(
                            w_t, model, ds.shards[k], local,
                            rngmod.substream(seed, rngmod.CLIENT, t, k),
                        )
                    )
                else:
                    models.append(w_t)
            avg = weighted_average(models, ds.weights)
            np.testing.assert_allclose(
                run.weights[t + 1].values, avg.values, rtol=1e-12
            )

    def test_schedule_drives_rate_and_steps(self):
        ds = make_dataset(2, 6, seed=8)
        run = run_training(
            Model.least_squares(2), ds,
            ServerConfig("fedavg", clients=2, active=1, rounds=6, eta=1.0),
            LocalRunConfig(gamma=1.0, local_steps=1, batch_size=3),
            schedule=lambda t: (0.1 / (t + 1), 2),
        )
        for t, rec in enumerate(run.records):
            assert rec.gamma == 0.1 / (t + 1)
            assert rec.local_steps == 2
        cums = [rec.cum_gamma for rec in run.records]
        assert cums == pytest.approx(np.cumsum([0.1 / (t + 1) for t in range(6)]))

    def test_records_carry_global_metrics(self):
        ds = make_dataset(3, 6, seed=9)
        model = Model.least_squares(2)
        run = run_training(
            model, ds,
            ServerConfig("fedavg", clients=3, active=2, rounds=5, eta=1.0),
            LocalRunConfig(gamma=0.05, local_steps=2, batch_size=3),
        )
        for t, rec in enumerate(run.records):
            w_t = run.weights[t]
            assert rec.loss == pytest.approx(loss(model, w_t, ds.pooled), rel=1e-12)
            fg = full_gradient(model, w_t, ds)
            assert rec.grad_sq_norm == pytest.approx(dot(fg, fg), rel=1e-10)
            g = run.updates[t]
            assert rec.g_norm == pytest.approx(
                float(np.linalg.norm(g.values)), rel=1e-12
            )
            assert rec.z_residual is None
            assert len(rec.active_set) == 2
            assert all(0 <= k < 3 for k in rec.active_set)

    def test_momentum_records_report_auxiliary_residual(self):
        ds = make_dataset(3, 6, seed=10)
        run = run_training(
            Model.least_squares(2), ds,
            ServerConfig("fedmom", clients=3, active=2, rounds=20, eta=1.0, beta=0.9),
            LocalRunConfig(gamma=0.02, local_steps=2, batch_size=3),
        )
        for rec in run.records:
            assert rec.z_residual is not None
            assert rec.z_residual <= 1e-12

    def test_inner_products_filled_when_reference_given(self):
        ds = make_dataset(3, 6, seed=12)
        model = Model.least_squares(2)
        star = ParamVector.of(1.0, 2.0)
        args = (
            model, ds,
            ServerConfig("fedavg", clients=3, active=2, rounds=5, eta=1.0),
            LocalRunConfig(gamma=0.05, local_steps=2, batch_size=3),
        )
        with_star = run_training(*args, w_star=star)
        without = run_training(*args)
        assert all(r.inner_product is None for r in without.records)
        without.fill_inner_products(star)
        for a, b in zip(with_star.records, without.records):
            assert a.inner_product == b.inner_product
            assert b.inner_product == pytest.approx(
                dot(
                    without.updates[b.t],
                    ParamVector(without.weights[b.t].values - star.values),
                ),
                rel=1e-12,
            )

    def test_divergence_reports_round_and_partial_run(self):
        # gamma far above 2/L turns each local step into a 999x blow-up
        shard = Batch(np.ones((1, 1)), np.zeros(1))
        ds = FederatedDataset((shard,))
        model = Model.quadratic([100.0])
        with np.errstate(over="ignore"), pytest.raises(DivergenceError) as exc:
            run_training(
                model, ds,
                ServerConfig("fedavg", clients=1, active=1, rounds=100, eta=1.0),
                LocalRunConfig(gamma=10.0, local_steps=5),
                w0=ParamVector.of(1.0),
            )
        err = exc.value
        assert err.round_index >= 1
        assert len(err.partial.records) == err.round_index
        assert len(err.partial.weights) == err.round_index + 1
