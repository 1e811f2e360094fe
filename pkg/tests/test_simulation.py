import json

import numpy as np
import pytest

from resfed.aggregation import AggregatorSpec, residual_reweight_aggregate
from resfed.cli import main
from resfed.config import config_from_dict
from resfed.simulation import (
    BOUND_HEADER,
    METRICS_HEADER,
    FederatedSimulation,
    MetricsRow,
    aggregate_file,
    bound_experiment,
    metrics_csv_lines,
    resolve_attackers,
    run_experiment,
    sweep,
    write_metrics_csv,
)
from resfed.updatefile import read_update_file, write_update_file

FROZEN_TIMER = lambda: 0.0  # noqa: E731


def tiny(**over) -> dict:
    raw = {
        "participants": 4,
        "rounds": 2,
        "seed": 5,
        "dataset": {"source": "blobs", "classes": 4, "dim": 16,
                    "per_class": 32, "test_per_class": 12},
        "partition": {"kind": "shards", "classes_per_participant": 2},
        "model": {"hidden": [8]},
        "train": {"epochs": 1, "lr": 0.1, "batch_size": 16},
    }
    raw.update(over)
    return raw


class TestMetricsRow:
    def test_csv_line(self):
        row = MetricsRow(3, "fedavg", "none", 0, 0.5, None, 7, 12)
        assert row.csv() == "3,fedavg,none,0,0.5,,7,12"

    def test_csv_line_with_asr(self):
        row = MetricsRow(1, "residual_reweight", "backdoor_naive", 1, 0.925, 0.125, 0, 3)
        assert row.csv() == "1,residual_reweight,backdoor_naive,1,0.925,0.125,0,3"

    def test_header_contract(self):
        assert METRICS_HEADER == "round,aggregator,attack,num_attackers,accuracy,asr,seed,wall_ms"


class TestDeterminism:
    def test_same_config_same_rows(self):
        cfg = config_from_dict(tiny())
        a = run_experiment(cfg, timer=FROZEN_TIMER)
        b = run_experiment(cfg, timer=FROZEN_TIMER)
        assert a == b

    def test_csv_rerun_is_byte_identical(self, tmp_path):
        cfg = config_from_dict(tiny())
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(cfg, out_path=str(p1), timer=FROZEN_TIMER)
        run_experiment(cfg, out_path=str(p2), timer=FROZEN_TIMER)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_text().splitlines()[0] == METRICS_HEADER

    def test_different_seed_different_rows(self):
        a = run_experiment(config_from_dict(tiny(seed=1)), timer=FROZEN_TIMER)
        b = run_experiment(config_from_dict(tiny(seed=2)), timer=FROZEN_TIMER)
        assert [r.accuracy for r in a] != [r.accuracy for r in b]

    def test_repeat_emits_rounds_per_instance_with_distinct_seeds(self):
        cfg = config_from_dict(tiny())
        rows = run_experiment(cfg, repeat=3, timer=FROZEN_TIMER)
        assert len(rows) == 3 * cfg.rounds
        assert [r.round for r in rows] == [1, 2] * 3
        assert len({r.seed for r in rows}) == 3

    def test_wall_ms_is_non_negative_int(self):
        rows = run_experiment(config_from_dict(tiny(rounds=1)))
        assert isinstance(rows[0].wall_ms, int)
        assert rows[0].wall_ms >= 0

    def test_output_path_from_config(self, tmp_path):
        out = tmp_path / "from_cfg.csv"
        cfg = config_from_dict(tiny(output=str(out)))
        run_experiment(cfg, timer=FROZEN_TIMER)
        assert out.exists()


class TestAttackerResolution:
    def test_explicit_ids_pass_through(self):
        cfg = config_from_dict(tiny(attackers=[3, 1]))
        sim = FederatedSimulation(cfg)
        assert resolve_attackers(cfg, sim.partition, sim.train_ds.labels) == (1, 3)

    def test_count_prefers_source_label_holders(self):
        cfg = config_from_dict(tiny(
            attack={"kind": "label_flip", "src_label": 1, "dst_label": 3},
            attackers=2,
        ))
        sim = FederatedSimulation(cfg)
        holders = {
            k for k, idx in enumerate(sim.partition.assignments)
            if np.any(sim.train_ds.labels[idx] == 1)
        }
        chosen = resolve_attackers(cfg, sim.partition, sim.train_ds.labels)
        assert len(chosen) == 2
        assert set(chosen) & holders == set(chosen) if len(holders) >= 2 else holders <= set(chosen)

    def test_count_without_source_takes_lowest_ids(self):
        cfg = config_from_dict(tiny(
            attack={"kind": "gaussian_noise", "noise_std": 1.0}, attackers=2
        ))
        sim = FederatedSimulation(cfg)
        assert resolve_attackers(cfg, sim.partition, sim.train_ds.labels) == (0, 1)

    def test_zero_count_is_empty(self):
        cfg = config_from_dict(tiny())
        sim = FederatedSimulation(cfg)
        assert resolve_attackers(cfg, sim.partition, sim.train_ds.labels) == ()


class TestParticipantIsolation:
    def test_honest_models_unaffected_by_attackers(self):
        flip = {"kind": "label_flip", "src_label": 1, "dst_label": 3,
                "extra_epochs": 2, "attacker_lr": 0.5}
        clean = FederatedSimulation(config_from_dict(tiny(attack=flip, attackers=0)))
        attacked = FederatedSimulation(config_from_dict(tiny(attack=flip, attackers=[0])))
        g = clean.initial_model()
        m_clean = clean.local_models(g, round_index=2)
        m_attacked = attacked.local_models(g, round_index=2)
        assert not np.array_equal(m_clean[0], m_attacked[0])
        for k in range(1, 4):
            assert np.array_equal(m_clean[k], m_attacked[k])

    def test_noise_attacker_changes_only_its_row(self):
        noise = {"kind": "gaussian_noise", "noise_std": 2.0}
        clean = FederatedSimulation(config_from_dict(tiny(attack=noise, attackers=0)))
        attacked = FederatedSimulation(config_from_dict(tiny(attack=noise, attackers=[2])))
        g = clean.initial_model()
        m_clean = clean.local_models(g, 1)
        m_attacked = attacked.local_models(g, 1)
        for k in range(4):
            same = np.array_equal(m_clean[k], m_attacked[k])
            assert same == (k != 2)


class TestRoundSemantics:
    def test_single_participant_fedavg_equals_local_training(self):
        cfg = config_from_dict({
            "participants": 1, "rounds": 1, "seed": 3,
            "dataset": {"source": "blobs", "classes": 3, "dim": 8,
                        "per_class": 20, "test_per_class": 8},
            "partition": {"kind": "dirichlet", "alpha": 1.0},
            "model": {"hidden": []},
            "train": {"epochs": 2, "lr": 0.1, "batch_size": 10},
            "aggregator": {"method": "fedavg"},
        })
        sim = FederatedSimulation(cfg)
        g = sim.initial_model()
        local = sim.local_models(g, 1)[0]
        new_global, _ = sim.run_round(g, 1, timer=FROZEN_TIMER)
        assert np.array_equal(new_global.params, local)

    def test_asr_only_with_pattern(self):
        plain = run_experiment(config_from_dict(tiny(rounds=1)), timer=FROZEN_TIMER)
        assert plain[0].attack_success_rate is None
        with_pattern = run_experiment(config_from_dict(tiny(
            rounds=1,
            attack={"kind": "none", "target_label": 2,
                    "pattern": {"target_label": 2, "image_side": 4, "block": 2, "value": 2.0}},
        )), timer=FROZEN_TIMER)
        assert 0.0 <= with_pattern[0].attack_success_rate <= 1.0

    def test_replacement_attacker_honest_off_round(self):
        repl = {"kind": "backdoor_replacement", "target_label": 2, "scale": 50.0,
                "attack_round": 2, "poison_per_batch": 4,
                "pattern": {"target_label": 2, "image_side": 4, "block": 2, "value": 2.0}}
        clean = FederatedSimulation(config_from_dict(tiny(attack=repl, attackers=0)))
        attacked = FederatedSimulation(config_from_dict(tiny(attack=repl, attackers=[1])))
        g = clean.initial_model()
        assert np.array_equal(clean.local_models(g, 1)[1], attacked.local_models(g, 1)[1])
        off = clean.local_models(g, 2)[1]
        scaled = attacked.local_models(g, 2)[1]
        assert not np.array_equal(off, scaled)
        # scaled update dwarfs an honest one
        assert np.linalg.norm(scaled - g.params) > 10 * np.linalg.norm(off - g.params)

    def test_accuracy_improves_over_initial(self):
        cfg = config_from_dict(tiny(rounds=4, train={"epochs": 3, "lr": 0.1, "batch_size": 16}))
        rows = run_experiment(cfg, timer=FROZEN_TIMER)
        assert rows[-1].accuracy > 0.5


class TestSweep:
    def test_grid_row_count_and_tags(self, tmp_path):
        cfg = config_from_dict(tiny(
            rounds=1,
            attack={"kind": "label_flip", "src_label": 1, "dst_label": 3},
        ))
        out = tmp_path / "sweep.csv"
        tagged = sweep(cfg, lambdas=[1.0, 2.0], deltas=[0.01, 0.1],
                       attacker_counts=[0, 2], out_path=str(out), timer=FROZEN_TIMER)
        assert len(tagged) == 2 * 2 * 2 * cfg.rounds
        lams = {lam for lam, _, _ in tagged}
        assert lams == {1.0, 2.0}
        lines = out.read_text().splitlines()
        assert lines[0] == "lambda,delta," + METRICS_HEADER
        assert len(lines) == 1 + len(tagged)
        assert lines[1].startswith("1.0,0.01,")

    def test_paper_scale_grid_shape(self):
        cfg = config_from_dict(tiny(
            rounds=1,
            attack={"kind": "label_flip", "src_label": 1, "dst_label": 3},
        ))
        tagged = sweep(cfg, lambdas=[0.5, 1, 2, 3, 5],
                       deltas=[0.01, 0.05, 0.1, 0.2],
                       attacker_counts=[0, 1, 2], timer=FROZEN_TIMER)
        assert len(tagged) == 5 * 4 * 3

    def test_empty_grid_runs_base_config(self):
        cfg = config_from_dict(tiny(rounds=2))
        tagged = sweep(cfg, timer=FROZEN_TIMER)
        assert len(tagged) == 2
        assert tagged[0][0] == cfg.aggregator.lam
        assert tagged[0][1] == cfg.aggregator.delta


class TestAggregateFile:
    def test_identical_rows_round_trip(self, tmp_path):
        src, dst = tmp_path / "in.bin", tmp_path / "out.bin"
        row = np.array([1.0, -2.0, 0.5])
        write_update_file(src, np.tile(row, (4, 1)))
        combined, report = aggregate_file(str(src), AggregatorSpec(), str(dst))
        assert np.allclose(combined, row)
        stored = read_update_file(dst)
        assert stored.shape == (1, 3)
        assert np.array_equal(stored[0], combined)
        assert report is not None

    def test_matches_in_process_aggregation(self, tmp_path):
        rng = np.random.default_rng(8)
        matrix = rng.standard_normal((5, 11))
        matrix[3, 0] = 50.0  # single wild coordinate
        src, dst = tmp_path / "in.bin", tmp_path / "out.bin"
        write_update_file(src, matrix)
        combined, _ = aggregate_file(str(src), AggregatorSpec(), str(dst))
        direct, _ = residual_reweight_aggregate(matrix)
        assert np.array_equal(combined, direct)
        assert np.array_equal(read_update_file(dst)[0], direct)


class TestBoundExperiment:
    def test_error_shrinks_with_sample_count_no_adversaries(self):
        rows = bound_experiment([4, 4096], [10], alpha=0.0, trials=30, seed=1)
        assert rows[0].median_abs_error > rows[1].median_abs_error

    def test_adversaries_capped_inside_honest_range(self):
        rows = bound_experiment([100], [10, 20], alpha=0.2, trials=40, seed=1)
        assert all(r.outside_honest_range == 0 for r in rows)

    def test_validation(self):
        with pytest.raises(ValueError, match="alpha"):
            bound_experiment([10], [10], alpha=0.5, trials=10)
        with pytest.raises(ValueError, match="trials"):
            bound_experiment([10], [10], alpha=0.1, trials=0)
        with pytest.raises(ValueError, match="K"):
            bound_experiment([10], [1], alpha=0.1, trials=10)


class TestCli:
    def write_cfg(self, tmp_path, **over):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny(**over)))
        return str(path)

    def test_run_to_stdout(self, tmp_path, capsys):
        code = main(["run", self.write_cfg(tmp_path)])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 3

    def test_run_to_file(self, tmp_path, capsys):
        out = tmp_path / "rows.csv"
        code = main(["run", self.write_cfg(tmp_path), "--out", str(out), "--repeat", "2"])
        assert code == 0
        assert len(out.read_text().splitlines()) == 1 + 2 * 2
        assert "final accuracy" in capsys.readouterr().out

    def test_run_seed_override(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path)
        main(["run", cfg])
        first = capsys.readouterr().out
        main(["run", cfg, "--seed", "99"])
        second = capsys.readouterr().out
        assert first != second

    def test_missing_config_fails(self, tmp_path, capsys):
        code = main(["run", str(tmp_path / "absent.json")])
        assert code != 0
        assert "error:" in capsys.readouterr().err

    def test_bad_config_fails(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"participants": 4}))
        assert main(["run", str(path)]) != 0
        assert "error:" in capsys.readouterr().err

    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = main(["sweep", self.write_cfg(tmp_path, rounds=1),
                     "--lambda", "1", "2", "--delta", "0.05", "--attackers", "0",
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2
        assert lines[0].startswith("lambda,delta,")

    def test_aggregate(self, tmp_path, capsys):
        src, dst = tmp_path / "in.bin", tmp_path / "out.bin"
        rng = np.random.default_rng(0)
        write_update_file(src, rng.standard_normal((5, 6)))
        code = main(["aggregate", "--in", str(src), "--out", str(dst),
                     "--method", "residual_reweight", "--lambda", "2", "--delta", "0.01"])
        assert code == 0
        weights = capsys.readouterr().out.splitlines()
        assert len(weights) == 5
        assert all(line.startswith("model ") for line in weights)
        assert read_update_file(dst).shape == (1, 6)

    def test_aggregate_plain_mean_prints_no_weights(self, tmp_path, capsys):
        src, dst = tmp_path / "in.bin", tmp_path / "out.bin"
        write_update_file(src, np.ones((3, 2)))
        assert main(["aggregate", "--in", str(src), "--out", str(dst),
                     "--method", "fedavg"]) == 0
        assert capsys.readouterr().out == ""

    def test_aggregate_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        assert main(["aggregate", "--in", str(bad), "--out", str(tmp_path / "o.bin")]) != 0
        assert "error:" in capsys.readouterr().err

    def test_bound_stdout_and_file(self, tmp_path, capsys):
        code = main(["bound", "--S", "10", "--K", "5", "--trials", "5"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == BOUND_HEADER
        assert len(lines) == 2
        out = tmp_path / "bound.csv"
        assert main(["bound", "--S", "10", "--K", "5", "--trials", "5",
                     "--out", str(out)]) == 0
        assert out.read_text().splitlines()[0] == BOUND_HEADER


def test_metrics_csv_lines_and_writer_agree(tmp_path):
    rows = run_experiment(config_from_dict(tiny(rounds=1)), timer=FROZEN_TIMER)
    path = tmp_path / "m.csv"
    write_metrics_csv(str(path), rows)
    assert path.read_text() == "\n".join(metrics_csv_lines(rows)) + "\n"
