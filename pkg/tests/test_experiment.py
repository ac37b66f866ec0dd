import copy
import json

import numpy as np
import pytest

from cabin_surrogate import nn
from cabin_surrogate.dataset import sample_first_k
from cabin_surrogate.errors import ConfigurationError, NumericError
from cabin_surrogate.experiment import (
    SweepReport,
    TrainConfig,
    grid_search,
    load_config,
    mlp_param_count,
    parse_config_text,
    select_architecture,
    sweep,
    timing_report,
    train,
)
from cabin_surrogate.metrics import evaluate_model

TINY = dict(depth=3, width=16, max_epochs=6, eval_every=2, k=40)


class TestConfig:
    def test_defaults_are_paper_values(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_size) == (0.001, 32)
        assert TrainConfig.paper().max_epochs == 2000
        assert TrainConfig.paper().eval_every == 1

    def test_parse(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\nlearning_rate = 0.01\nk = 50\nmodel = linear\n\n")
        c = load_config(p, seed=7, k=None)
        assert (c.learning_rate, c.k, c.model, c.seed) == (0.01, 50, "linear", 7)

    def test_every_field_round_trips(self):
        c = TrainConfig(k=77, seed=3, dtype="float32")
        assert TrainConfig(**parse_config_text(c.to_text())) == c

    @pytest.mark.parametrize("text", ["bogus = 1", "k = lots", "just words", "model = cnn", "max_epochs = 0"])
    def test_rejects(self, text):
        with pytest.raises(ConfigurationError):
            TrainConfig(**parse_config_text(text))


class TestTrain:
    def test_single_epoch(self, small_dataset, small_split):
        r = train(TrainConfig(**{**TINY, "max_epochs": 1}), small_dataset, small_split)
        assert r.best_epoch == 1
        assert len(r.history) == 1 and "val_mse" in r.history[0]

    def test_best_epoch_rule_and_reload(self, small_dataset, small_split, tmp_path):
        cfg = TrainConfig(**TINY)
        r = train(cfg, small_dataset, small_split)
        evals = [(h["epoch"], h["val_mse"]) for h in r.history if "val_mse" in h]
        assert [e for e, _ in evals] == [2, 4, 6]
        best = min(v for _, v in evals)
        assert r.best_val_mse == best
        assert r.best_epoch == next(e for e, v in evals if v == best)
        nn.save_checkpoint(tmp_path / "b.ckpt", r.model)
        model, _ = nn.load_checkpoint(tmp_path / "b.ckpt")
        x = small_dataset.inputs[small_split.val_ids]
        y = small_dataset.targets[small_split.val_ids]
        assert nn.mse_loss(nn.model_forward(model, x).prediction, y) == pytest.approx(best, abs=1e-10)

    def test_deterministic(self, small_dataset, small_split, tmp_path):
        cfg = TrainConfig(**TINY)
        a = train(cfg, small_dataset, small_split, log_path=tmp_path / "a.jsonl")
        b = train(cfg, small_dataset, small_split, log_path=tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert a.best_epoch == b.best_epoch
        assert nn.checkpoint_bytes(a.model) == nn.checkpoint_bytes(b.model)
        lines = (tmp_path / "a.jsonl").read_text().splitlines()
        assert set(json.loads(lines[1])) == {"epoch", "train_mse", "val_mse"}

    def test_touches_only_the_subset(self, small_dataset, small_split):
        seen = []
        cfg = TrainConfig(**TINY)
        train(cfg, small_dataset, small_split, batch_hook=lambda ids: seen.append(ids.copy()))
        touched = np.concatenate(seen)
        assert set(touched.tolist()) == set(sample_first_k(small_split, cfg.seed, cfg.k))
        # 40 cases in batches of 32: one full and one partial batch per epoch
        assert [len(s) for s in seen[:2]] == [32, 8]
        assert len(touched) == cfg.k * cfg.max_epochs

    @pytest.mark.parametrize("kind", ["mlp", "linear"])
    def test_learns(self, small_dataset, small_split, kind):
        r = train(TrainConfig(**{**TINY, "model": kind, "max_epochs": 5}), small_dataset, small_split)
        losses = [h["train_mse"] for h in r.history]
        assert any(b < a for a, b in zip(losses, losses[1:]))
        assert r.history[r.best_epoch - 1]["train_mse"] <= losses[0]

    def test_trained_beats_zero_output(self, small_dataset, small_split):
        r = train(TrainConfig(depth=3, width=32, max_epochs=30, eval_every=5, k=200),
                  small_dataset, small_split)
        zero = nn.LinearModel(np.zeros((small_dataset.output_dim, 6)), np.zeros(small_dataset.output_dim))
        z = evaluate_model(zero, small_split.test_ids, small_dataset)
        assert r.test.ssim_mean > z.ssim_mean

    def test_k_too_large(self, small_dataset, small_split):
        with pytest.raises(ConfigurationError):
            train(TrainConfig(**{**TINY, "k": 5000}), small_dataset, small_split)

    def test_non_finite_loss_aborts(self, small_dataset, small_split):
        bad = copy.copy(small_dataset)
        bad.targets = small_dataset.targets.copy()
        bad.targets[small_split.train_ids] = np.inf
        with pytest.raises(NumericError, match="epoch 1, batch 0"):
            train(TrainConfig(**TINY), bad, small_split)

    def test_float32_option(self, small_dataset, small_split):
        r = train(TrainConfig(**{**TINY, "dtype": "float32"}), small_dataset, small_split)
        assert r.model.dtype == np.float32


class TestSelection:
    def test_counts_wins(self):
        # mirrors "4 best among the 8": (10,128) wins 4 of 8, others split the rest
        ks = [50, 100, 150, 200, 500, 1000, 1500, 2000]
        table = {c: {k: 0.9 for k in ks} for c in [(5, 64), (5, 128), (5, 256), (10, 64), (10, 128), (10, 256)]}
        for k in ks[:4]:
            table[(10, 128)][k] = 0.99
        for k in ks[4:6]:
            table[(5, 256)][k] = 0.995
        for k in ks[6:]:
            table[(10, 256)][k] = 0.999
        assert select_architecture(table) == (10, 128)

    def test_clean_sweep_wins_regardless(self):
        table = {(5, 64): {1: 0.95, 2: 0.95}, (10, 256): {1: 0.5, 2: 0.5}}
        counts = {(5, 64): 10**9, (10, 256): 1}
        assert select_architecture(table, counts) == (5, 64)

    def test_tie_breaks(self):
        table = {(5, 64): {1: 0.9, 2: 0.8}, (10, 64): {1: 0.7, 2: 0.95}}
        assert select_architecture(table) == (5, 64)  # one win each, higher mean
        table = {(5, 64): {1: 0.9, 2: 0.9}, (10, 64): {1: 0.9, 2: 0.9}}
        counts = {(5, 64): mlp_param_count(5, 64, 6, 10), (10, 64): mlp_param_count(10, 64, 6, 10)}
        assert select_architecture(table, counts) == (5, 64)

    def test_param_count(self):
        m = nn.init_model(5, 64, 6, 10, 0)
        assert mlp_param_count(5, 64, 6, 10) == nn.parameter_count(m)

    def test_grid_search_runs_every_combination(self, small_dataset, small_split):
        base = TrainConfig(max_epochs=1, eval_every=1)
        best, table = grid_search(small_dataset, small_split, [30, 60], base)
        assert len(table) == 6 and all(len(row) == 2 for row in table.values())
        assert best in table


class TestSweep:
    def test_grid_complete_with_failures_marked(self, small_dataset, small_split, tmp_path):
        base = TrainConfig(**{**TINY, "max_epochs": 2})
        rep = sweep(small_dataset, small_split, [40, 5000], [1, 2], base=base, out=tmp_path)
        assert len(rep.results) == 2 * 2 * 2
        assert {(r.kind, r.k, r.seed) for r in rep.results} == {
            (kind, k, s) for kind in ("mlp", "linear") for k in (40, 5000) for s in (1, 2)}
        assert all(r.failed for r in rep.results if r.k == 5000)
        assert not any(r.failed for r in rep.results if r.k == 40)
        header = (tmp_path / "runs_mlp.csv").read_text().splitlines()[0]
        assert header == "k,seed,split,ssim_mean,ssim_std,mse_mean,best_epoch"
        assert "failed" in (tmp_path / "runs_linear.csv").read_text()
        table1 = (tmp_path / "table1.csv").read_text().splitlines()
        assert table1[0] == "model,split,stat,40,5000"
        assert len(table1) == 1 + 2 * 2 * 2
        assert (tmp_path / "checkpoints" / "mlp_k40_s1.ckpt").exists()
        assert (tmp_path / "logs" / "linear_k40_s2.jsonl").exists()

    def test_report_rebuilds_from_summaries(self, small_dataset, small_split, tmp_path):
        base = TrainConfig(**{**TINY, "max_epochs": 2})
        rep = sweep(small_dataset, small_split, [40], [1], base=base, out=tmp_path / "a")
        lines = (tmp_path / "a" / "runs.jsonl").read_text().splitlines()
        again = SweepReport.from_summaries(json.loads(l) for l in lines)
        again.write(tmp_path / "b")
        assert (tmp_path / "a" / "table1.csv").read_text() == (tmp_path / "b" / "table1.csv").read_text()
        assert again.training_hours() == rep.training_hours()

    def test_parallel_matches_serial(self, small_dataset, small_split):
        base = TrainConfig(**{**TINY, "max_epochs": 2})
        a = sweep(small_dataset, small_split, [40], [1, 2], kinds=["mlp"], base=base, jobs=1)
        b = sweep(small_dataset, small_split, [40], [1, 2], kinds=["mlp"], base=base, jobs=2)
        for ra, rb in zip(a.results, b.results):
            assert (ra.k, ra.seed) == (rb.k, rb.seed)
            assert [h["train_mse"] for h in ra.history] == [h["train_mse"] for h in rb.history]


PAPER_TABLE2 = [
    # k, simulation, training, total, reduction
    (50, 37.5, 0.40, 37.90, 97.66),
    (100, 75, 0.54, 75.54, 95.34),
    (150, 112.5, 0.60, 113.10, 93.02),
    (200, 150, 0.66, 150.66, 90.70),
    (500, 375, 0.99, 375.99, 76.79),
    (1000, 750, 1.58, 751.58, 53.61),
    (1500, 1125, 2.18, 1127.18, 30.42),
    (2000, 1500, 2.91, 1502.91, 7.23),
]


class TestTiming:
    def test_paper_rows(self):
        rows = timing_report({k: t for k, _, t, _, _ in PAPER_TABLE2}, 0.75, 2160)
        for row, (k, sim, t, total, red) in zip(rows, PAPER_TABLE2):
            assert row["k"] == k and row["simulation_hours"] == sim
            assert row["total_hours"] == pytest.approx(total, abs=1e-9)
            assert row["reduction_pct"] == pytest.approx(red, abs=0.01)

    def test_limit(self):
        assert timing_report({2160: 0.0})[0]["reduction_pct"] == 0.0

    def test_recomputes_from_inputs(self):
        for r in timing_report({10: 1.5, 20: 0.2}, 2.0, 100):
            assert r["total_hours"] == r["simulation_hours"] + r["training_hours"]
            assert r["reduction_pct"] == 100 * (1 - r["total_hours"] / 200.0)

    def test_bad_cost(self):
        with pytest.raises(ConfigurationError):
            timing_report({1: 0.0}, 0.0)
