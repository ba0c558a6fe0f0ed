import json
from datetime import date

import numpy as np
import pytest

from tapcast import data, nn, pool
from tapcast.core import DayIndex, InsufficientHistoryError, Normalizer, SplitSpec
from tapcast.core import DataError

from .conftest import last_weeks_split


class StubModel:
    """Emits ``fn(window)`` on an identity normalizer."""

    def __init__(self, fn, width):
        self.fn = fn
        self.normalizer = Normalizer(np.zeros(width), np.ones(width))

    def predict(self, window):
        return np.asarray(self.fn(window), dtype=float)


def stub(group, m, n, fn, n_topics=1):
    spec = pool.ModelSpec("p", group, pool.WindowCombo(m, n), n_topics, 0)
    width = 1 + len(data.group_entries(group)) + n_topics
    return pool.PoolMember(spec, StubModel(fn, width))


def const(value, n):
    return lambda w: np.full(n, float(value))


class FakeData:
    """Minimal data view: target series per topic plus constant exogenous series."""

    def __init__(self, target, topics=("a",), days=60):
        self.topics = tuple(topics)
        self.target = {t: np.asarray(target, float) for t in self.topics}
        self.days = days

    def target_key(self, topic):
        return ("platform", "shares", topic)

    def window(self, key, first, last):
        if key[:2] == ("platform", "shares"):
            return self.target[key[2]][first.ordinal : last.ordinal + 1]
        return np.ones(last - first + 1)


class TestBuild:
    def test_default_twelve(self):
        specs = pool.build_pool("p", ["a", "b"])
        assert len(specs) == 12
        assert sum(s.exogenous for s in specs) == 9
        assert sum(not s.exogenous for s in specs) == 3
        assert {(s.combo.m, s.combo.n) for s in specs} == {(14, 7), (7, 3), (3, 1)}
        assert len({s.name for s in specs}) == 12

    def test_endogenous_only(self):
        specs = pool.build_pool("p", ["a"], groups=[data.ENDOGENOUS])
        assert len(specs) == 3 and all(s.group == data.ENDOGENOUS for s in specs)

    def test_seed_determinism(self):
        a = pool.build_pool("p", ["a"], base_seed=7)
        b = pool.build_pool("p", ["a"], base_seed=7)
        c = pool.build_pool("p", ["a"], base_seed=8)
        assert [s.seed for s in a] == [s.seed for s in b]
        assert [s.seed for s in a] != [s.seed for s in c]
        assert len({s.seed for s in a}) == 12

    def test_full_grid(self):
        assert len(pool.build_pool("p", ["a"], combos=pool.FULL_GRID)) == 36

    def test_no_topics(self):
        with pytest.raises(ValueError):
            pool.build_pool("p", [])

    def test_spec_dict_roundtrip(self):
        for s in pool.build_pool("p", ["a"]):
            assert pool.ModelSpec.from_dict(s.to_dict()) == s


class TestFeatures:
    @pytest.mark.parametrize("group,T,width", [(data.NEWS_GDELT, 18, 40), (data.ENDOGENOUS, 12, 15)])
    def test_width(self, group, T, width):
        topics = [f"t{k}" for k in range(T)]
        view = FakeData(np.zeros(60), topics)
        spec = pool.ModelSpec("p", group, pool.WindowCombo(7, 3), T, 0)
        X = pool.assemble_features(spec, view, "t3", DayIndex(0), DayIndex(9))
        assert X.shape == (10, width)
        assert len(pool.feature_names(spec, view, "t3")) == width
        block = X[:, width - T :]
        assert np.all(block.sum(axis=1) == 1)
        assert np.all(block[:, 3] == 1)

    def test_own_history_first(self, small_dataset):
        spec = pool.build_pool(small_dataset.platform, small_dataset.topics)[3]
        t = small_dataset.topics[1]
        X = pool.assemble_features(spec, small_dataset, t, small_dataset.start, small_dataset.start + 9)
        assert np.array_equal(X[:, 0], small_dataset.window(small_dataset.target_key(t), small_dataset.start, small_dataset.start + 9))

    def test_missing_series_listed(self, small_dataset):
        series = {k: v for k, v in small_dataset.series.items() if k[:2] != ("reddit", "comments")}
        ds = data.Dataset(series, small_dataset.topics, small_dataset.start, small_dataset.end, platform="x")
        spec = [s for s in pool.build_pool("x", ds.topics) if s.group == data.REDDIT][0]
        with pytest.raises(DataError, match="'reddit', 'comments', 'topic_00'"):
            pool.assemble_features(spec, ds, "topic_00", ds.start, ds.start + 3)


class TestRecursive:
    def test_block_iteration_truncates(self):
        member = stub(data.ENDOGENOUS, 7, 3, lambda w: [1, 2, 3])
        out = pool.recursive_forecast(member, "a", DayIndex(30), FakeData(np.zeros(60)))
        assert list(out) == [1, 2, 3, 1, 2, 3, 1]

    def test_clamped_at_zero(self):
        member = stub(data.ENDOGENOUS, 3, 1, const(-5, 1))
        assert list(pool.recursive_forecast(member, "a", DayIndex(30), FakeData(np.zeros(60)))) == [0.0] * 7

    def test_n7_persistence_stub(self):
        y = np.arange(60, dtype=float) % 11
        member = stub(data.ENDOGENOUS, 14, 7, lambda w: w[-7:, 0])
        out = pool.recursive_forecast(member, "a", DayIndex(40), FakeData(y))
        assert np.array_equal(out, y[33:40])

    def test_predictions_fed_back(self):
        seen = []

        def fn(w):
            seen.append(w.copy())
            return [w[-1, 0] + 1]

        y = np.zeros(60)
        y[29] = 10
        member = stub(data.ENDOGENOUS, 3, 1, fn)
        out = pool.recursive_forecast(member, "a", DayIndex(30), FakeData(y))
        assert list(out) == [11, 12, 13, 14, 15, 16, 17]
        # the endogenous shares covariate mirrors the target, so it is fed back too
        assert list(seen[3][:, 0]) == list(seen[3][:, 2]) == [11, 12, 13]
        assert list(seen[3][:, 1]) == [1, 1, 1]

    def test_wrong_horizon(self):
        member = stub(data.ENDOGENOUS, 3, 1, const(1, 2))
        with pytest.raises(ValueError):
            pool.recursive_forecast(member, "a", DayIndex(30), FakeData(np.zeros(60)))

    def test_no_target_leakage(self, small_dataset, small_pool):
        members, split = small_pool
        for member in members:
            for week_start in split.week_starts:
                for topic in small_dataset.topics:
                    view = pool.AuditedView(small_dataset)
                    out = pool.recursive_forecast(member, topic, week_start, view)
                    assert out.shape == (7,)
                    assert view.last_day_read(small_dataset.target_key(topic)) == week_start - 1
                    for key, first, last in view.reads:
                        assert last <= week_start + 5

    def test_selection_reads_before_week(self, small_dataset, small_pool):
        members, split = small_pool
        for k, week_start in enumerate(split.week_starts):
            view = pool.AuditedView(small_dataset)
            pool.tap_forecasts(members, "topic_01", week_start, view, k)
            assert view.last_day_read(small_dataset.target_key("topic_01")) < week_start


class TestSelection:
    def setup_method(self):
        self.view = FakeData(np.full(60, 5.0))

    def test_argmin(self):
        cands = [stub(g, 3, 1, const(5 + e, 1)) for g, e in zip(data.EXOGENOUS_GROUPS, (3.0, 1.0, 2.0))]
        cands = [pool.PoolMember(pool.ModelSpec("p", g, c.spec.combo, 1, 0), c.model) for g, c in zip(data.EXOGENOUS_GROUPS, cands)]
        winner, prov = pool.select_best(cands, "a", DayIndex(20), self.view)
        assert winner is cands[1]
        assert prov.validation_rmse == {c.name: e for c, e in zip(cands, (3.0, 1.0, 2.0))}
        assert prov.validation_rmse[prov.chosen[0]] == min(prov.validation_rmse.values())

    def test_tie_prefers_smaller_window(self):
        a = stub(data.REDDIT, 14, 7, const(6, 7))
        b = stub(data.REDDIT, 7, 3, const(4, 3))
        winner, _ = pool.select_best([a, b], "a", DayIndex(20), self.view)
        assert winner is b

    def test_tie_group_order(self):
        a = stub(data.ACLED, 3, 1, const(6, 1))
        b = stub(data.REDDIT, 3, 1, const(4, 1))
        assert pool.select_best([a, b], "a", DayIndex(20), self.view)[0] is b

    def test_scale_invariant(self):
        cands = [stub(g, 3, 1, const(5 + e, 1)) for g, e in zip(data.EXOGENOUS_GROUPS, (2.5, 0.5, 1.5))]
        base = {c.name: s for c, s in zip(cands, (2.5, 0.5, 1.5))}
        for scale in (1e-3, 1.0, 7.0):
            assert pool.pick(cands, {k: v * scale for k, v in base.items()}) is cands[1]
        assert pool.pick(cands, {k: np.log1p(v) for k, v in base.items()}) is cands[1]

    def test_empty(self):
        with pytest.raises(ValueError):
            pool.select_best([], "a", DayIndex(20), self.view)

    def test_ensemble_mean(self):
        members = [stub(data.REDDIT, 3, 1, const(1, 1)), stub(data.ACLED, 3, 1, const(3, 1))]
        out, prov = pool.tap_ens(members, "a", DayIndex(30), self.view)
        assert list(out) == [2.0] * 7
        assert len(prov.chosen) == 2

    def test_ensemble_per_source_best(self):
        members = [
            stub(data.REDDIT, 3, 1, const(1, 1)),
            stub(data.REDDIT, 7, 3, const(5, 3)),
            stub(data.ACLED, 3, 1, const(3, 1)),
        ]
        out, prov = pool.tap_ens(members, "a", DayIndex(30), self.view, mode="per-source-best")
        assert list(out) == [4.0] * 7
        assert prov.chosen == ["reddit_m7_n3", "acled_m3_n1"]

    def test_variants_agree_with_tap_forecasts(self, small_dataset, small_pool):
        members, split = small_pool
        ws = split.week_starts[1]
        combined = pool.tap_forecasts(members, "topic_00", ws, small_dataset, 1)
        exo, pexo = pool.tap_exo(members, "topic_00", ws, small_dataset, 1)
        endo, pendo = pool.tap_endo(members, "topic_00", ws, small_dataset, 1)
        ens, _ = pool.tap_ens(members, "topic_00", ws, small_dataset, 1)
        assert np.array_equal(combined[pool.TAP_EXO][0], exo)
        assert np.array_equal(combined[pool.TAP_ENDO][0], endo)
        assert np.allclose(combined[pool.TAP_ENS][0], ens, rtol=0, atol=1e-12)
        assert combined[pool.TAP_EXO][1].chosen == pexo.chosen
        assert len(pendo.validation_rmse) == 3
        assert len(combined[pool.TAP_ENS][1].chosen) == 9


class TestTraining:
    def test_twelve_members(self, small_pool):
        members, _ = small_pool
        assert len(members) == 12
        assert all(m.model.normalizer is not None for m in members)

    def test_order_independent(self, small_dataset):
        split = last_weeks_split(small_dataset)
        specs = pool.build_pool(small_dataset.platform, small_dataset.topics, base_seed=1)[:3]
        cfg = nn.TrainConfig(epochs=2, hidden_candidates=(3,))
        fwd, _ = pool.train_pool(specs, small_dataset, split, cfg)
        rev, _ = pool.train_pool(specs[::-1], small_dataset, split, cfg)
        by_name = {m.name: m for m in rev}
        for m in fwd:
            assert m.model.lstm.W.tobytes() == by_name[m.name].model.lstm.W.tobytes()

    def test_short_training_range(self, small_dataset):
        # 20 training days with the last 7 reserved for validation
        start = small_dataset.start
        split = SplitSpec(start, start + 19, start + 20)
        specs = pool.build_pool(small_dataset.platform, small_dataset.topics)
        cfg = nn.TrainConfig(epochs=1, hidden_candidates=(2,))
        members, failures = pool.train_pool(specs, small_dataset, split, cfg)
        assert set(failures) == {"news_gdelt_m14_n7", "reddit_m14_n7", "acled_m14_n7", "endogenous_m14_n7"}
        assert all(isinstance(e, InsufficientHistoryError) for e in failures.values())
        assert "insufficient history" in str(failures["reddit_m14_n7"])
        assert len(members) == 8

    def test_vz_training_range(self):
        days = (date(2019, 2, 14) - date(2018, 12, 24)).days + 1
        assert days == 53
        ds, _ = data.synth_generate(data.ScenarioSpec(n_topics=2, n_days=90, start="2018-12-24"))
        start = ds.day("2018-12-24")
        split = SplitSpec(start, ds.day("2019-02-14"), ds.day("2019-02-15"))
        for spec in pool.build_pool(ds.platform, ds.topics):
            train, valid, _ = pool._sample_sets(spec, ds, split)
            assert train and valid
            assert all(s.end + spec.combo.n < split.validation_week(0)[0] for s in train)

    def test_manifest_roundtrip(self, small_pool, tmp_path):
        members, _ = small_pool
        cfg = nn.TrainConfig(epochs=3, hidden_candidates=(4,))
        path = pool.save_pool(members, tmp_path, platform="synthetic", base_seed=1, config=cfg)
        manifest = json.loads(path.read_text())
        assert len(manifest["models"]) == 12
        assert all(e["loss"]["epochs"] == 3 for e in manifest["models"])
        back, _ = pool.load_pool(path)
        for a, b in zip(members, back):
            assert a.spec == b.spec
            assert nn.dumps(a.model) == nn.dumps(b.model)

    def test_missing_model_file(self, small_pool, tmp_path):
        members, _ = small_pool
        path = pool.save_pool(members[:1], tmp_path, platform="s", base_seed=1, config=nn.TrainConfig())
        (tmp_path / "models" / f"{members[0].name}.npz").unlink()
        with pytest.raises(FileNotFoundError):
            pool.load_pool(path)
