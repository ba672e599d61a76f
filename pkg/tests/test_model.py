import logging

import numpy as np
import pytest

from app.core import ops, relations
from app.core.exceptions import ContractError, DimensionError
from app.core.gradcheck import gradient_check
from app.core.model import SimMst, count_parameters
from app.core.tensor import Tensor
from app.schemas.base import ArchitectureConfig, SimMstConfig, TdlKind


def inputs_for(config, rng, batch=3):
    history = rng.standard_normal((batch, config.num_modes, config.num_nodes, config.history_len, config.channels))
    tod = rng.integers(0, 48, size=batch)
    dow = rng.integers(0, 7, size=batch)
    return history, tod, dow


class TestForward:
    def test_output_shape(self, tiny_model, rng):
        history, tod, dow = inputs_for(tiny_model.config, rng)
        assert tiny_model.forward(history, tod, dow).shape == (3, 2, 3, 2, 1)

    @pytest.mark.parametrize("kind", [TdlKind.MLP, TdlKind.SEASONAL])
    def test_deterministic(self, tiny, kind, rng):
        model = SimMst(tiny.model_copy(update={"tdl_kind": kind}), seed=5)
        history, tod, dow = inputs_for(model.config, rng)
        first = model(history, tod, dow).data
        second = model(history, tod, dow).data
        np.testing.assert_array_equal(first, second)

    def test_same_seed_same_parameters(self, tiny):
        a, b = SimMst(tiny, seed=3), SimMst(tiny, seed=3)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_modes_decoupled_without_csrl(self, tiny, rng):
        model = SimMst(tiny.model_copy(update={"enable_csrl": False}), seed=1)
        history, tod, dow = inputs_for(model.config, rng)
        before = model(history, tod, dow).data
        perturbed = history.copy()
        perturbed[:, 1] += rng.standard_normal(perturbed[:, 1].shape)
        after = model(perturbed, tod, dow).data
        np.testing.assert_array_equal(before[:, 0], after[:, 0])
        assert not np.array_equal(before[:, 1], after[:, 1])

    def test_modes_coupled_with_cross_mode_relations(self, tiny, rng):
        model = SimMst(tiny, seed=1)
        model.params["relation.pair_weight"].data[:] = 0.5
        history, tod, dow = inputs_for(model.config, rng)
        before = model(history, tod, dow).data
        perturbed = history.copy()
        perturbed[:, 1] += 1.0
        assert not np.array_equal(before[:, 0], model(perturbed, tod, dow).data[:, 0])

    def test_matches_single_mode_model_when_cross_terms_vanish(self, tiny, rng, monkeypatch):
        original = relations.learn_relation_matrix

        def self_pairs_only(bank, m_i, m_j):
            if m_i == m_j:
                return original(bank, m_i, m_j)
            return Tensor(np.zeros((bank.e_in[0].shape[0],) * 2))

        monkeypatch.setattr(relations, "learn_relation_matrix", self_pairs_only)
        multi = SimMst(tiny, seed=2)
        history, tod, dow = inputs_for(tiny, rng)
        predictions = multi(history, tod, dow).data

        for mode in range(tiny.num_modes):
            single = SimMst(tiny.model_copy(update={"num_modes": 1}), seed=9)
            state = {}
            for name in single.params:
                if name.startswith("mode0."):
                    state[name] = multi.params[name.replace("mode0.", f"mode{mode}.", 1)].data
                elif name == "relation.pair_weight":
                    state[name] = np.zeros((1, 1))
                else:
                    state[name] = multi.params[name].data
            single.load_state_dict(state)
            alone = single(history[:, mode:mode + 1], tod, dow).data
            np.testing.assert_array_equal(predictions[:, mode], alone[:, 0])

    def test_relations_built_once_per_forward(self, small_config, rng, monkeypatch):
        calls = []
        original = relations.build_relation_set

        def counting(*args, **kwargs):
            calls.append(1)
            return original(*args, **kwargs)

        monkeypatch.setattr(relations, "build_relation_set", counting)
        model = SimMst(small_config)
        model(*inputs_for(small_config, rng))
        assert small_config.num_layers == 2
        assert len(calls) == 1

    def test_everything_disabled_still_forecasts(self, tiny, rng):
        config = tiny.model_copy(update={"enable_tdl": False, "enable_csrl": False, "enable_ccl": False})
        model = SimMst(config)
        assert not any(".tdl." in n or ".ccl." in n or "embedding" in n and "readout" not in n for n in model.params)
        out = model(*inputs_for(config, rng))
        assert out.shape == (3, 2, 3, 2, 1)
        assert np.all(np.isfinite(out.data))

    def test_missing_time_features(self, tiny_model, rng):
        history, _, _ = inputs_for(tiny_model.config, rng)
        with pytest.raises(ContractError):
            tiny_model.forward(history)

    def test_time_index_range_checked(self, tiny_model, rng):
        history, tod, dow = inputs_for(tiny_model.config, rng)
        with pytest.raises(ContractError):
            tiny_model.forward(history, np.full(3, 48), dow)

    def test_wrong_history_shape(self, tiny_model, rng):
        with pytest.raises(DimensionError):
            tiny_model.forward(rng.standard_normal((3, 2, 3, 5, 1)), np.zeros(3), np.zeros(3))

    def test_seasonal_forward_shape(self, tiny, rng):
        model = SimMst(tiny.model_copy(update={"tdl_kind": TdlKind.SEASONAL}))
        assert model(*inputs_for(tiny, rng)).shape == (3, 2, 3, 2, 1)

    def test_city_scale_output_shape(self, rng):
        config = SimMstConfig(num_modes=2, num_nodes=266, channels=2, num_layers=1)
        model = SimMst(config)
        history, tod, dow = inputs_for(config, rng, batch=1)
        assert model(history, tod, dow).shape == (1, 2, 266, 12, 2)


def twelve_step_config(kind=TdlKind.MLP):
    return SimMstConfig(
        num_modes=2,
        num_nodes=3,
        channels=1,
        history_len=12,
        horizon=2,
        hidden_dim=4,
        embed_dim=4,
        num_layers=1,
        topk=3,
        tdl_kind=kind,
    )


def zero_branch(model, prefix):
    for name, param in model.params.items():
        if name.startswith(prefix) and ".norm." not in name:
            param.data[:] = 0.0


class TestInitHidden:
    def test_zero_input_zero_bias(self, tiny_model):
        tiny_model.params["mode0.init.bias"].data[:] = 0.0
        hidden = tiny_model.init_hidden(np.zeros((3, 4, 1)), 0)
        np.testing.assert_array_equal(hidden.data, np.zeros((3, 4, 4)))

    def test_city_scale_shape(self, rng):
        model = SimMst(SimMstConfig(num_modes=2, num_nodes=266, channels=1, num_layers=1))
        assert model.init_hidden(rng.standard_normal((266, 12, 1)), 1).shape == (266, 12, 32)

    def test_modes_have_independent_parameters(self, tiny_model, rng):
        x = rng.standard_normal((3, 4, 1))
        assert not np.array_equal(tiny_model.init_hidden(x, 0).data, tiny_model.init_hidden(x, 1).data)

    def test_channel_mismatch(self, tiny_model, rng):
        with pytest.raises(DimensionError):
            tiny_model.init_hidden(rng.standard_normal((3, 4, 2)), 0)


class TestTemporalMixing:
    @pytest.mark.parametrize("kind", [TdlKind.MLP, TdlKind.SEASONAL])
    def test_zero_branch_gives_mean_pooled_input(self, kind, rng):
        model = SimMst(twelve_step_config(kind), seed=2)
        zero_branch(model, "mode0.layer1.tdl.")
        hidden = rng.standard_normal((2, 3, 12, 4))
        out = model.tdl_forward(Tensor(hidden), 0, 1)
        assert out.shape == (2, 3, 6, 4)
        np.testing.assert_allclose(out.data, 0.5 * (hidden[:, :, 0::2] + hidden[:, :, 1::2]), atol=1e-12)

    def test_halves_twelve_steps(self, rng):
        model = SimMst(twelve_step_config(), seed=2)
        assert model.tdl_forward(Tensor(rng.standard_normal((3, 12, 4))), 1, 1).shape == (3, 6, 4)

    def test_wrong_temporal_length(self, rng):
        model = SimMst(twelve_step_config(), seed=2)
        with pytest.raises(DimensionError):
            model.tdl_forward(Tensor(rng.standard_normal((3, 8, 4))), 0, 1)

    @pytest.mark.parametrize("kind", [TdlKind.MLP, TdlKind.SEASONAL])
    def test_gradients(self, tiny, kind, rng):
        model = SimMst(tiny.model_copy(update={"tdl_kind": kind}), seed=4)
        hidden = Tensor(rng.uniform(-1.0, 1.0, size=(2, 3, 4, 4)))
        weights = rng.uniform(-1.0, 1.0, size=(2, 3, 2, 4))
        leaves = {name: p for name, p in model.params.items() if name.startswith("mode0.layer1.tdl.")}
        leaves["hidden"] = hidden
        report = gradient_check(lambda: ops.total(ops.hadamard(model.tdl_forward(hidden, 0, 1), weights)), leaves)
        assert report.passed, report.errors


class TestChannelMixing:
    def test_zero_branch_is_identity(self, tiny_model, rng):
        zero_branch(tiny_model, "mode1.layer1.ccl.")
        hidden = rng.standard_normal((2, 3, 2, 4))
        np.testing.assert_array_equal(tiny_model.ccl_forward(Tensor(hidden), 1, 1).data, hidden)

    def test_keeps_shape(self, tiny_model, rng):
        hidden = Tensor(rng.standard_normal((2, 3, 2, 4)))
        assert tiny_model.ccl_forward(hidden, 0, 1).shape == hidden.shape

    def test_gradients(self, tiny_model, rng):
        hidden = Tensor(rng.uniform(-1.0, 1.0, size=(2, 3, 2, 4)))
        weights = rng.uniform(-1.0, 1.0, size=(2, 3, 2, 4))
        leaves = {name: p for name, p in tiny_model.params.items() if name.startswith("mode0.layer1.ccl.")}
        leaves["hidden"] = hidden
        report = gradient_check(lambda: ops.total(ops.hadamard(tiny_model.ccl_forward(hidden, 0, 1), weights)), leaves)
        assert report.passed, report.errors


class TestReadout:
    def test_initial_state_only(self, tiny_model, rng):
        h0 = tiny_model.init_hidden(rng.standard_normal((2, 3, 4, 1)), 0)
        out = tiny_model.readout([h0], np.array([0, 1]), np.array([2, 3]), 0)
        assert out.shape == (2, 3, 2, 1)

    def test_timestamps_matter_only_through_embeddings(self, tiny_model, rng):
        h0 = tiny_model.init_hidden(rng.standard_normal((1, 3, 4, 1)), 0)
        states = [h0, h0]
        morning = tiny_model.readout(states, np.array([16]), np.array([1]), 0).data
        evening = tiny_model.readout(states, np.array([36]), np.array([1]), 0).data
        assert not np.array_equal(morning, evening)

        table = tiny_model.params["readout.tod_embedding"].data
        table[36] = table[16]
        evening = tiny_model.readout(states, np.array([36]), np.array([1]), 0).data
        np.testing.assert_array_equal(morning, evening)


class TestParameters:
    def test_canonical_names(self, tiny_model):
        names = set(tiny_model.params)
        expected = {
            "mode0.init.weight", "mode1.init.bias", "mode0.embedding", "relation.in_proj.0.weight",
            "relation.out_proj.1.bias", "relation.pair_weight", "mode1.layer1.tdl.0.weight",
            "mode1.layer1.tdl.1.bias", "mode0.layer1.tdl.norm.gamma", "mode0.layer1.ccl.0.weight",
            "mode1.layer1.ccl.norm.beta", "readout.tod_embedding", "readout.dow_embedding",
            "mode0.out.0.weight", "mode1.out.1.bias",
        }
        assert expected <= names

    def test_initialization(self, tiny_model):
        p = tiny_model.params
        np.testing.assert_array_equal(p["relation.pair_weight"].data, 0.0)
        np.testing.assert_array_equal(p["mode0.layer1.ccl.norm.gamma"].data, 1.0)
        np.testing.assert_array_equal(p["mode0.init.bias"].data, 0.0)
        assert np.all(np.abs(p["mode0.out.0.weight"].data) <= 1 / np.sqrt(8))

    def test_per_mode_projections(self, tiny):
        model = SimMst(tiny.model_copy(update={"share_projections": False}))
        assert "mode1.in_proj.0.weight" in model.params
        assert "relation.in_proj.0.weight" not in model.params

    def test_seasonal_weights(self, tiny):
        model = SimMst(tiny.model_copy(update={"tdl_kind": TdlKind.SEASONAL}))
        assert model.params["mode0.layer1.tdl.weight_real"].shape == (3,)
        assert "mode0.layer1.tdl.0.weight" not in model.params

    def test_state_dict_round_trip(self, tiny, rng):
        source, target = SimMst(tiny, seed=1), SimMst(tiny, seed=2)
        target.load_state_dict(source.state_dict())
        history, tod, dow = inputs_for(tiny, rng)
        np.testing.assert_array_equal(source(history, tod, dow).data, target(history, tod, dow).data)

    def test_state_dict_mismatch(self, tiny_model):
        state = tiny_model.state_dict()
        state.pop("relation.pair_weight")
        with pytest.raises(ContractError, match="relation.pair_weight"):
            tiny_model.load_state_dict(state)

        state = tiny_model.state_dict()
        state["mode0.init.bias"] = np.zeros(5)
        with pytest.raises(DimensionError):
            tiny_model.load_state_dict(state)

    def test_count(self, tiny_model):
        assert count_parameters(tiny_model) == 600


class TestConfig:
    def test_default_temporal_lengths(self):
        assert ArchitectureConfig().resolved_temporal_lengths() == [12, 6, 3, 2]

    def test_explicit_lengths_validated(self):
        with pytest.raises(ValueError):
            ArchitectureConfig(num_layers=2, temporal_lengths=[12, 8, 9])

    def test_topk_above_nodes_rejected(self):
        with pytest.raises(ValueError):
            SimMstConfig(num_modes=2, num_nodes=5, channels=1, topk=6)

    def test_topk_clamped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="app"):
            config = SimMstConfig.from_architecture(ArchitectureConfig(), num_modes=2, num_nodes=8, channels=1)
        assert config.topk == 8
        assert "clamping" in caplog.text
