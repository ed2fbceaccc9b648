"""Tests for the backbone, context encoders, modulation variants and the parameter bundle."""

import dataclasses

import numpy as np
import pytest

from cmml_cli.engine import ops
from cmml_cli.engine.rng import rng_stream
from cmml_cli.engine.tensor import Tape, Tensor
from cmml_cli.models.backbone import (
    BackboneConfig,
    backbone_forward,
    embed,
    init_backbone,
    table_name,
)
from cmml_cli.models.context import EncoderConfig, encode_context, hybrid_dot, init_encoder
from cmml_cli.models.layers import gru_sequence, init_mlp, mlp
from cmml_cli.models.modulation import (
    ModulationConfig,
    RouteTensor,
    check_soft_parity,
    hyper_layout,
    layer_mod_film,
    route_probabilities,
)
from cmml_cli.models.network import ModelBundle, NetworkConfig, forward_episode, init_bundle
from cmml_cli.utils.exceptions import DataError, ModelConfigError, ShapeError
from tests.conftest import N_ITEMS, N_USERS, random_episode, small_network

VARIANTS = [
    ("film", "sequential", "dot"),
    ("sigmoid", "pooling-mean", "mlp"),
    ("weight", "pooling-max", "none"),
    ("soft", "sequential", "mlp"),
    ("soft", "pooling-mean", "dot"),
]
# seed 0 always runs; the rest are part of the slow suite
GRADIENT_SEEDS = [0] + [pytest.param(seed, marks=pytest.mark.slow) for seed in range(1, 20)]


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestLayers:
    def test_gru_matches_hand_computation(self):
        p = {"W_z": 0.5, "U_z": -0.3, "b_z": 0.1, "W_r": 0.8, "U_r": 0.2, "b_r": -0.2,
             "W_n": -0.6, "U_n": 0.9, "b_n": 0.05, "b_hn": 0.3}
        params = {f"g.{k}": Tensor(np.array(v).reshape((1, 1) if k[0] in "WU" else (1,)))
                  for k, v in p.items()}
        xs = [0.7, -1.2]
        h = 0.0
        for x in xs:
            z = sigmoid(x * p["W_z"] + h * p["U_z"] + p["b_z"])
            r = sigmoid(x * p["W_r"] + h * p["U_r"] + p["b_r"])
            n = np.tanh(x * p["W_n"] + p["b_n"] + r * (h * p["U_n"] + p["b_hn"]))
            h = (1 - z) * n + z * h
        out = gru_sequence(Tensor(np.array(xs).reshape(2, 1)), params, "g")
        assert out.shape == (1, 1)
        assert out.values[0, 0] == pytest.approx(h, abs=1e-12)

    def test_mlp_final_activation(self, rng):
        params = {k: Tensor(v) for k, v in init_mlp(rng, "m", [3, 4, 2]).items()}
        x = Tensor(rng.standard_normal((5, 3)))
        raw = mlp(x, params, "m", 2).values
        activated = mlp(x, params, "m", 2, final_activation=True).values
        np.testing.assert_allclose(activated, np.maximum(raw, 0))


class TestBackbone:
    def test_pretrained_tables_are_used(self, rng, tiny_schema, tiny_tables):
        params = init_backbone(rng, BackboneConfig(hidden_sizes=(4,)), tiny_schema, tiny_tables)
        np.testing.assert_array_equal(params[table_name("item_id")], tiny_tables["item_id"])
        assert params["backbone.hidden.0.weight"].shape == (6, 4)
        assert params["backbone.head.weight"].shape == (4, 1)

    def test_table_shape_mismatch(self, rng, tiny_schema):
        with pytest.raises(ShapeError):
            init_backbone(rng, BackboneConfig(), tiny_schema, {"user_id": np.zeros((3, 3))})

    def test_out_of_vocabulary_id(self, rng, tiny_schema):
        raw = init_backbone(rng, BackboneConfig(), tiny_schema)
        params = {k: Tensor(v) for k, v in raw.items()}
        with pytest.raises(DataError, match="Out-of-vocabulary"):
            embed({"user_id": np.array([N_USERS])}, {"item_id": np.array([0])}, params, tiny_schema)

    def test_identity_hook_and_headless_forward(self, rng, tiny_schema):
        config = BackboneConfig(hidden_sizes=(5, 4))
        params = {k: Tensor(v) for k, v in init_backbone(rng, config, tiny_schema).items()}
        e_u, e_i = embed(
            {"user_id": np.array([0, 3])},
            {"item_id": np.array([1, N_ITEMS - 1])},
            params,
            tiny_schema,
        )
        plain = backbone_forward(e_u, e_i, params, config)
        hooked = backbone_forward(e_u, e_i, params, config, layer_hook=lambda j, layer: layer)
        np.testing.assert_array_equal(plain.score.values, hooked.score.values)
        assert plain.score.shape == (2,)
        headless = backbone_forward(e_u, e_i, params, config, head=False)
        assert headless.score.shape == (2, 4)
        assert all((layer.values >= 0).all() for layer in plain.layers)

    def test_hidden_sizes_must_be_positive(self):
        with pytest.raises(ValueError):
            BackboneConfig(hidden_sizes=())

    def test_learned_tables_take_their_width_from_the_schema(self, rng, tiny_schema):
        config = BackboneConfig(embedding_mode="learned")
        params = init_backbone(rng, config, tiny_schema)
        assert params[table_name("user_id")].shape == (N_USERS, 3)
        assert params[table_name("item_id")].shape == (N_ITEMS, 3)
        with pytest.raises(ValueError):
            BackboneConfig(embedding_dim=32)


class TestContext:
    def _pairs(self, gen, n=6):
        e_u, e_i = gen.standard_normal((n, 3)), gen.standard_normal((n, 3))
        return Tensor(e_u), Tensor(e_i), gen.standard_normal(n)

    def _encoder_params(self, network_factory, encoder):
        bundle = init_bundle(network_factory(encoder=encoder), seed=2)
        return bundle.tensors(), bundle.config.encoder

    def test_pooling_is_permutation_invariant(self, rng, network_factory):
        for variant in ("pooling-mean", "pooling-max"):
            params, config = self._encoder_params(network_factory, variant)
            e_u, e_i, labels = self._pairs(rng)
            order = rng.permutation(6)
            first = encode_context(e_u, e_i, labels, params, config).values
            shuffled = encode_context(
                ops.take(e_u, order, axis=0),
                ops.take(e_i, order, axis=0),
                labels[order],
                params,
                config,
            ).values
            np.testing.assert_allclose(first, shuffled, atol=1e-12)
            assert first.shape == (6,)

    def test_sequential_sees_order(self, rng, network_factory):
        params, config = self._encoder_params(network_factory, "sequential")
        e_u, e_i, labels = self._pairs(rng)
        order = np.arange(6)[::-1]
        first = encode_context(e_u, e_i, labels, params, config).values
        reversed_ = encode_context(
            ops.take(e_u, order, axis=0),
            ops.take(e_i, order, axis=0),
            labels[order],
            params,
            config,
        ).values
        assert not np.allclose(first, reversed_)

    def test_labels_change_the_context(self, rng, network_factory):
        params, config = self._encoder_params(network_factory, "pooling-mean")
        e_u, e_i, labels = self._pairs(rng)
        a = encode_context(e_u, e_i, labels, params, config).values
        b = encode_context(e_u, e_i, -labels, params, config).values
        assert not np.allclose(a, b)

    def test_dot_hybrid_is_elementwise(self, rng):
        C = rng.standard_normal(6)
        e_u, e_i = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        out = hybrid_dot(Tensor(C), Tensor(e_u), Tensor(e_i)).values
        np.testing.assert_allclose(out, np.hstack([e_u, e_i]) * C)
        with pytest.raises(ShapeError):
            hybrid_dot(Tensor(C[:5]), Tensor(e_u), Tensor(e_i))

    def test_dot_needs_matching_context_width(self, network_factory):
        with pytest.raises(ModelConfigError):
            init_bundle(network_factory(generator="dot", context_dim=4))
        config = network_factory(generator="mlp", context_dim=4)
        assert init_bundle(config).params["meta.generator.mlp.0.weight"].shape[0] == 10

    def test_encoder_input_width_tracks_labels(self):
        with_labels = init_encoder(rng_stream(0), EncoderConfig(variant="pooling-mean"), 6)
        unlabelled = EncoderConfig(variant="pooling-mean", use_labels=False)
        without = init_encoder(rng_stream(0), unlabelled, 6)
        assert with_labels["meta.encoder.mlp.0.weight"].shape[0] == 7
        assert without["meta.encoder.mlp.0.weight"].shape[0] == 6


def scores_of(bundle, episode, **kwargs):
    return forward_episode(bundle.tensors(), bundle.config, episode, **kwargs)


class TestModulation:
    def test_hyper_layout_widths(self):
        backbone = BackboneConfig(hidden_sizes=(5, 4))
        assert hyper_layout(ModulationConfig(variant="film"), backbone)[-1].stop == 18
        assert hyper_layout(ModulationConfig(variant="sigmoid"), backbone)[-1].stop == 9
        assert hyper_layout(ModulationConfig(variant="weight"), backbone)[-1].stop == 5

    def _plain_backbone_scores(self, bundle, episode):
        params = bundle.tensors()
        q_u, q_i = embed(*episode.query_fields(), params, bundle.config.schema)
        return backbone_forward(q_u, q_i, params, bundle.config.backbone).score.values

    def _identity_film(self, bundle):
        """Hypernetwork forced to emit scale 1 and shift 0 for every layer."""
        config = bundle.config
        last = f"meta.hyper.mlp.{len(config.modulation.hyper_hidden)}"
        bias = np.concatenate([
            np.full(block.stop - block.start, 1.0 if block.name.startswith("scale") else 0.0)
            for block in hyper_layout(config.modulation, config.backbone)
        ])
        return bundle.replace(
            {f"{last}.weight": np.zeros_like(bundle.params[f"{last}.weight"]), f"{last}.bias": bias}
        )

    def test_identity_film_reproduces_backbone(self, network_factory, tiny_tables, episode):
        bundle = init_bundle(network_factory("film"), seed=5, tables=tiny_tables)
        bundle = self._identity_film(bundle)
        np.testing.assert_array_equal(
            scores_of(bundle, episode).scores.values,
            self._plain_backbone_scores(bundle, episode),
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_identity_film_is_bitwise_on_random_inputs(self, network_factory, seed):
        bundle = self._identity_film(init_bundle(network_factory("film"), seed=seed))
        params = bundle.tensors()
        config = bundle.config
        gen = rng_stream(seed, 11)
        n = 1000
        e_u = Tensor(gen.standard_normal((n, 3)) * 2.0)
        e_i = Tensor(gen.standard_normal((n, 3)) * 2.0)
        C_h = Tensor(gen.standard_normal((n, params["meta.hyper.mlp.0.weight"].shape[0])))

        modulated = layer_mod_film(C_h, e_u, e_i, params, config.modulation, config.backbone)
        plain = backbone_forward(e_u, e_i, params, config.backbone)
        np.testing.assert_array_equal(modulated.values, plain.score.values)

    def test_generated_head_reproduces_backbone_head(self, network_factory, tiny_tables, episode):
        bundle = init_bundle(network_factory("weight"), seed=5, tables=tiny_tables)
        last = "meta.hyper.mlp.1"
        head = np.concatenate(
            [bundle.params["backbone.head.weight"][:, 0], bundle.params["backbone.head.bias"]]
        )
        bundle = bundle.replace(
            {f"{last}.weight": np.zeros_like(bundle.params[f"{last}.weight"]), f"{last}.bias": head}
        )
        np.testing.assert_allclose(
            scores_of(bundle, episode).scores.values,
            self._plain_backbone_scores(bundle, episode),
            atol=1e-12,
        )

    def test_routes_are_column_stochastic(self, network_factory, tiny_tables, episode):
        bundle = init_bundle(network_factory("soft"), seed=1, tables=tiny_tables)
        routes = scores_of(bundle, episode).routes
        assert isinstance(routes, RouteTensor)
        assert routes.probabilities.shape == (episode.n_query, 2, 4, 4)
        np.testing.assert_allclose(routes.probabilities.sum(axis=-2), 1.0, atol=1e-12)
        task_route = routes.task_route()
        assert task_route.shape == (2, 4, 4)
        np.testing.assert_allclose(task_route.sum(axis=-2), 1.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_routes_are_valid_on_random_contexts(self, tiny_schema, seed):
        """Full-size route network (k=3, m=4): open-interval entries, unit columns."""
        config = NetworkConfig(schema=tiny_schema, modulation=ModulationConfig(variant="soft"))
        params = init_bundle(config, seed=seed).tensors()
        width = params["meta.route.logits.0.weight"].shape[0]
        C_h = Tensor(rng_stream(seed, 12).standard_normal((1000, width)))

        routes = route_probabilities(C_h, params, config.modulation)
        assert len(routes) == 3
        for p in routes:
            assert p.shape == (1000, 4, 4)
            np.testing.assert_allclose(p.values.sum(axis=-2), 1.0, atol=1e-6)
            assert ((p.values > 0.0) & (p.values < 1.0)).all()

    def test_soft_forward_transforms_each_module_before_routing(
        self, network_factory, tiny_tables, episode
    ):
        bundle = init_bundle(network_factory("soft"), seed=4, tables=tiny_tables)
        result = scores_of(bundle, episode)
        params = bundle.tensors()
        q_u, q_i = embed(*episode.query_fields(), params, bundle.config.schema)
        x = np.hstack([q_u.values, q_i.values])
        raw = bundle.params
        config = bundle.config.modulation

        def dense(values, prefix):
            return values @ raw[f"{prefix}.weight"] + raw[f"{prefix}.bias"]

        modules = np.repeat(dense(x, "backbone.soft.input")[:, None, :], config.n_modules, axis=1)
        for layer in range(config.k_layers):
            transformed = np.stack(
                [
                    np.maximum(dense(modules[:, j], f"backbone.soft.layer{layer}.module{j}"), 0.0)
                    for j in range(config.n_modules)
                ],
                axis=1,
            )
            # p[n, to, from]
            modules = np.einsum("nij,njd->nid", result.routes.probabilities[:, layer], transformed)
        expected = dense(modules.mean(axis=1), "backbone.soft.head")[:, 0]

        np.testing.assert_allclose(result.scores.values, expected, atol=1e-12)

    def test_only_soft_returns_routes(self, network_factory, episode):
        assert scores_of(init_bundle(network_factory("sigmoid")), episode).routes is None

    def test_soft_parity(self, network_factory):
        bundle = init_bundle(network_factory("soft"))
        config = bundle.config
        # four 2x2 modules against a 4-wide backbone layer
        assert check_soft_parity(bundle.params, config.modulation, config.backbone) == 16
        assert "backbone.hidden.0.weight" not in bundle.params
        broken = dict(bundle.params)
        broken["backbone.soft.layer1.module0.weight"] = np.zeros((2, 1))
        with pytest.raises(ModelConfigError):
            check_soft_parity(broken, config.modulation, config.backbone)

    def test_soft_parity_at_default_sizes(self, tiny_schema):
        config = NetworkConfig(schema=tiny_schema, modulation=ModulationConfig(variant="soft"))
        bundle = init_bundle(config)
        assert check_soft_parity(bundle.params, config.modulation, config.backbone) == 4 * 32 * 32
        assert bundle.params["backbone.soft.layer2.module3.weight"].shape == (32, 32)

    def test_soft_parity_rejects_mismatched_backbone(self, tiny_schema):
        config = NetworkConfig(
            schema=tiny_schema,
            backbone=BackboneConfig(hidden_sizes=(32,)),
            modulation=ModulationConfig(variant="soft"),
        )
        with pytest.raises(ModelConfigError, match="32-wide"):
            init_bundle(config)


class TestBundle:
    def test_names_and_frozen_tables(self, network_factory, tiny_tables):
        bundle = init_bundle(network_factory(), tables=tiny_tables)
        assert bundle.names == sorted(bundle.names)
        assert set(bundle.backbone_names) | set(bundle.meta_names) == set(bundle.names)
        assert bundle.frozen == {table_name("user_id"), table_name("item_id")}
        assert table_name("user_id") not in bundle.trainable_names
        assert bundle.parameter_count() == sum(v.size for v in bundle.params.values())

    def test_learned_embeddings_are_trainable(self, tiny_schema):
        config = small_network(tiny_schema)
        config = dataclasses.replace(
            config, backbone=config.backbone.model_copy(update={"embedding_mode": "learned"})
        )
        bundle = init_bundle(config)
        assert not bundle.frozen
        assert table_name("item_id") in bundle.trainable_names

    def test_arrays_are_read_only(self, network_factory):
        bundle = init_bundle(network_factory())
        with pytest.raises(ValueError):
            bundle.params["backbone.head.bias"][0] = 1.0

    def test_replace_and_checksum(self, network_factory):
        a = init_bundle(network_factory(), seed=3)
        assert a.checksum() == init_bundle(network_factory(), seed=3).checksum()
        assert a.checksum() != init_bundle(network_factory(), seed=4).checksum()
        b = a.replace({"backbone.head.bias": np.array([0.5])})
        assert b.checksum() != a.checksum()
        assert a.params["backbone.head.bias"][0] == 0.0
        with pytest.raises(ModelConfigError):
            a.replace({"meta.unknown": np.zeros(1)})
        with pytest.raises(ShapeError):
            a.replace({"backbone.head.bias": np.zeros(2)})

    def test_rejects_unprefixed_names(self, network_factory):
        with pytest.raises(ModelConfigError):
            ModelBundle({"weights": np.zeros(2)}, network_factory())

    def test_tensors_watch_trainable_only(self, network_factory, tiny_tables):
        bundle = init_bundle(network_factory(), tables=tiny_tables)
        tape = Tape()
        bundle.tensors(tape)
        assert set(tape.leaf_names) == set(bundle.trainable_names)


class TestForward:
    def test_scores_per_query_row(self, network_factory, episode):
        for modulation, encoder, generator in VARIANTS:
            bundle = init_bundle(network_factory(modulation, encoder, generator), seed=0)
            result = scores_of(bundle, episode)
            assert result.scores.shape == (episode.n_query,)
            assert np.isfinite(result.scores.values).all()

    def test_zero_context(self, network_factory, episode):
        bundle = init_bundle(network_factory("film"), seed=0)
        zero = scores_of(bundle, episode, zero_context=True)
        assert not zero.context.values.any()
        assert not np.allclose(zero.scores.values, scores_of(bundle, episode).scores.values)

    def test_positive_only_encoder_ignores_negatives(self, network_factory, rng):
        config = network_factory(encoder="pooling-mean", support_negatives=False)
        bundle = init_bundle(config, seed=0)
        episode = random_episode(rng, n_support=6, signed=True)
        negatives = episode.support_labels < 0
        items = episode.support_items.copy()
        items[negatives] = (items[negatives] + 7) % N_ITEMS
        other = dataclasses.replace(episode, support_items=items)
        np.testing.assert_allclose(
            scores_of(bundle, episode).context.values, scores_of(bundle, other).context.values
        )
        only_negative = dataclasses.replace(episode, support_labels=-np.ones(6))
        with pytest.raises(ShapeError):
            scores_of(bundle, only_negative)

    def test_pooled_scores_ignore_support_order(self, network_factory, episode):
        order = np.arange(episode.n_support)[::-1]
        permuted = dataclasses.replace(
            episode,
            support_users=episode.support_users[order],
            support_items=episode.support_items[order],
            support_labels=episode.support_labels[order],
        )
        pooled = init_bundle(network_factory(encoder="pooling-mean"), seed=0)
        np.testing.assert_allclose(
            scores_of(pooled, episode).scores.values,
            scores_of(pooled, permuted).scores.values,
            atol=1e-12,
        )

    @pytest.mark.parametrize("seed", GRADIENT_SEEDS)
    @pytest.mark.parametrize("modulation,encoder,generator", VARIANTS)
    def test_gradients_match_finite_differences(
        self, network_factory, tiny_tables, modulation, encoder, generator, seed
    ):
        config = network_factory(modulation, encoder, generator)
        bundle = init_bundle(config, seed=seed, tables=tiny_tables)
        gen = rng_stream(seed, 13)
        episode = random_episode(gen)
        weights = gen.standard_normal(episode.n_query)

        tape = Tape()
        result = forward_episode(bundle.tensors(tape), bundle.config, episode)
        grads = tape.backward(ops.sum(ops.mul(result.scores, Tensor(weights))))
        assert table_name("user_id") not in grads

        picker = rng_stream(3, 0)
        eps = 1e-6
        for name in bundle.trainable_names:
            base = bundle.params[name]
            for flat in picker.choice(base.size, size=min(2, base.size), replace=False):
                index = np.unravel_index(flat, base.shape)

                def value(delta):
                    moved = base.copy()
                    moved[index] += delta
                    moved_scores = scores_of(bundle.replace({name: moved}), episode).scores.values
                    return float(moved_scores @ weights)

                numeric = (value(eps) - value(-eps)) / (2 * eps)
                assert grads[name].values[index] == pytest.approx(numeric, abs=1e-5, rel=1e-4), name
