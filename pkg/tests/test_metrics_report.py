import csv
import math
import re

import numpy as np
import pytest

from an2n.config import ConfigError, RunConfig, dump_config, load_config, parse_config_text
from an2n.metrics import HEADER, MetricsRecord, format_metrics, read_metrics, write_metrics
from an2n.report import ReportError, learning_curve, report

SEEDS = (0, 5, 10, 15, 20)


def rec(env="pendulum", algo="ddpg", an2n=False, seed=0, epoch=0, ret=-100.0, step=None):
    return MetricsRecord(
        run_id=f"{env}-{algo}-{'an2n' if an2n else 'base'}-s{seed}",
        seed=seed, env=env, algo=algo, an2n=an2n, epoch=epoch,
        step=2000 * (epoch + 1) if step is None else step,
        eval_return_mean=ret, eval_return_std=1.5, key_fraction=0.25 if an2n else 0.0,
        sim_threshold=0.9, fifo_len=12 if an2n else 0, critic_loss=0.1 + epoch, wall_ms=0.0,
    )


def run(tmp, env, algo, an2n, seed, returns):
    recs = [rec(env, algo, an2n, seed, e, r) for e, r in enumerate(returns)]
    write_metrics(recs, tmp / f"{recs[0].run_id}.csv")
    return recs


# metrics


def test_header_is_exact():
    assert HEADER == (
        "run_id,seed,env,algo,an2n,epoch,step,eval_return_mean,eval_return_std,"
        "key_fraction,sim_threshold,fifo_len,critic_loss,wall_ms"
    )


def test_empty_records_write_header_only(tmp_path):
    write_metrics([], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == HEADER + "\n"


def test_round_trip_is_exact(tmp_path):
    recs = [rec(an2n=True, epoch=e, ret=-1 / 3 - e * 1e-17) for e in range(3)]
    recs[0].critic_loss = math.nan
    write_metrics(recs, tmp_path / "m.csv")
    back = read_metrics(tmp_path / "m.csv")
    assert back[1:] == recs[1:]
    assert math.isnan(back[0].critic_loss)
    assert back[0].eval_return_mean == recs[0].eval_return_mean


def test_rows_are_plain_decimal_and_booleans_on_off():
    text = format_metrics([rec(an2n=True, ret=-1234.5)])
    row = text.splitlines()[1].split(",")
    assert row[4] == "on" and row[7] == "-1234.5"
    assert re.fullmatch(r"[-0-9.e+a-z_]+", "".join(row))


def test_write_error_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        write_metrics([], blocker / "m.csv")


def test_read_rejects_foreign_csv(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_metrics(tmp_path / "x.csv")


# config


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.cfg").write_text("# desk run\nenv = mcc\nalgo = sac   # learner\nan2n = off\ntotal_steps = 8e3\n")
    cfg = load_config(tmp_path / "c.cfg", {"seed": "5", "epoch_steps": "4000"})
    assert (cfg.env, cfg.algo, cfg.an2n, cfg.total_steps, cfg.seed, cfg.epoch_steps) == ("mcc", "sac", False, 8000, 5, 4000)
    assert cfg.run_id == "mcc-sac-base-s5"


def test_config_rejects_unknown_and_malformed(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys: colour"):
        load_config(None, {"colour": "red"})
    with pytest.raises(ConfigError, match=":2: expected key = value"):
        parse_config_text("env = mcc\nnonsense\n", "f")
    with pytest.raises(ConfigError, match="an2n"):
        load_config(None, {"an2n": "maybe"})


def test_dump_config_round_trips(tmp_path):
    cfg = RunConfig(env="cliff", an2n=False, metric="manhattan", pct_add_start=0.35)
    (tmp_path / "c.cfg").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.cfg") == cfg


def test_defaults_match_protocol():
    cfg = RunConfig()
    assert (cfg.total_steps, cfg.epoch_steps, cfg.eval_episodes, cfg.warmup_steps) == (50_000, 2_000, 10, 1_000)
    assert (cfg.noise_small, cfg.noise_big, cfg.sac_scale_up, cfg.sac_scale_down) == (0.05, 0.4, 1.5, 0.5)
    assert (cfg.pct_add_start, cfg.pct_add_end, cfg.k_lower, cfg.k_upper) == (0.4, 0.2, 5, 20)
    assert cfg.noise_tier().big == pytest.approx(0.4)


# report


def test_one_seed_has_zero_band(tmp_path):
    run(tmp_path, "pendulum", "ddpg", False, 0, [-900.0, -300.0])
    rows = report([tmp_path], tmp_path / "out")
    assert len(rows) == 1 and rows[0].std == 0.0 and rows[0].mean == -300.0
    curve = learning_curve({0: read_metrics(tmp_path / "pendulum-ddpg-base-s0.csv")})
    assert curve.std.tolist() == [0.0, 0.0] and curve.mean.tolist() == [-900.0, -300.0]


def test_summary_mean_is_hand_mean(tmp_path):
    finals = {0: -150.0, 5: -170.0, 10: -130.0, 15: -200.0, 20: -160.0}
    for s, f in finals.items():
        run(tmp_path, "pendulum", "sac", True, s, [-1000.0 + s, f])
    (row,) = report([tmp_path], tmp_path / "out")
    assert row.arm == "sac+an2n" and row.seeds == SEEDS
    assert row.mean == pytest.approx(sum(finals.values()) / 5, abs=1e-12)
    assert row.std == pytest.approx(float(np.std(list(finals.values()))), abs=1e-12)


def test_five_seeds_four_arms_two_envs(tmp_path):
    rng = np.random.default_rng(0)
    for env in ("pendulum", "mcc"):
        for algo in ("ddpg", "sac"):
            for an2n in (False, True):
                for s in SEEDS:
                    run(tmp_path, env, algo, an2n, s, list(rng.normal(size=3) * 100))
    out = tmp_path / "out"
    rows = report([tmp_path], out)
    assert len(rows) == 8

    with open(out / "summary.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["env", "ddpg_mean", "ddpg_std", "ddpg+an2n_mean", "ddpg+an2n_std",
                        "sac_mean", "sac_std", "sac+an2n_mean", "sac+an2n_std", "seeds"]
    assert [r[0] for r in table[1:]] == ["mcc", "pendulum"]
    assert table[1][-1] == "0 5 10 15 20"

    for env in ("pendulum", "mcc"):
        svg = (out / f"curves_{env}.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "</svg>" in svg
        for arm in ("ddpg", "ddpg+an2n", "sac", "sac+an2n"):
            assert svg.count(f'id="curve-{arm}"') == 1
            assert svg.count(f'id="band-{arm}"') == 1
        # self-contained: no external references, no images, no fonts to fetch
        assert "xlink:href=\"http" not in svg and "<image" not in svg and "@import" not in svg


def test_report_is_reproducible(tmp_path):
    for s in SEEDS[:2]:
        run(tmp_path, "pendulum", "ddpg", False, s, [-500.0, -200.0 - s])
    report([tmp_path], tmp_path / "a")
    report([tmp_path], tmp_path / "b")
    for name in ("summary.csv", "curves_pendulum.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_mismatched_arms_rejected_with_listing(tmp_path):
    run(tmp_path, "pendulum", "ddpg", False, 0, [-1.0])
    run(tmp_path, "pendulum", "sac", False, 0, [-1.0])
    run(tmp_path, "mcc", "ddpg", False, 0, [-1.0])
    with pytest.raises(ReportError, match=r"env mcc has arms \['ddpg'\]"):
        report([tmp_path], tmp_path / "out")


def test_mismatched_seed_sets_rejected(tmp_path):
    run(tmp_path, "pendulum", "ddpg", False, 0, [-1.0])
    run(tmp_path, "pendulum", "ddpg", False, 5, [-1.0])
    run(tmp_path, "pendulum", "sac", False, 0, [-1.0])
    with pytest.raises(ReportError, match="seed sets differ"):
        report([tmp_path], tmp_path / "out")


def test_mismatched_step_grids_rejected(tmp_path):
    run(tmp_path, "pendulum", "ddpg", False, 0, [-1.0, -2.0])
    run(tmp_path, "pendulum", "ddpg", False, 5, [-1.0])
    with pytest.raises(ReportError, match="evaluation steps"):
        report([tmp_path], tmp_path / "out")


def test_no_metrics_files(tmp_path):
    (tmp_path / "other.csv").write_text("a,b\n")
    with pytest.raises(ReportError, match="no metrics files"):
        report([tmp_path], tmp_path / "out")


def test_numpy_scalars_format_like_python_numbers(tmp_path):
    r = rec(ret=np.float64(-132.04309700132936))
    r.fifo_len, r.an2n = np.int64(7), np.bool_(True)
    write_metrics([r], tmp_path / "m.csv")
    back = read_metrics(tmp_path / "m.csv")[0]
    assert back.eval_return_mean == -132.04309700132936 and back.fifo_len == 7 and back.an2n is True
