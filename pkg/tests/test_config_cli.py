"""Config parsing and the command line surface."""

import os

import numpy as np
import pytest

from rfsearch.cli import main
from rfsearch.config import build_run_config, default_config_text, parse_kv_text
from rfsearch.errors import ConfigError
from rfsearch.genotype import Genotype
from rfsearch.ops import OpKind

TINY_CFG = """
seed = 0
dataset.n_samples = 48
dataset.test_samples = 32
backbone.stages = 4x1,8x1
attn.n_nodes = 3
search.epochs = 1
search.batch_size = 8
train.epochs = 1
train.batch_size = 8
sweep.sigmas = 0.0
sweep.seeds = 0
analyze.n_average = 2
"""


class TestKvParser:
    def test_basic_pairs(self):
        assert parse_kv_text("a = 1\nb=two\n") == {"a": "1", "b": "two"}

    def test_comments_and_blanks(self):
        assert parse_kv_text("# full comment\n\na = 1  # trailing\n") == {"a": "1"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_kv_text("just a line\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_kv_text("a = 1\na = 2\n")


class TestRunConfig:
    def test_defaults_parse(self):
        cfg = build_run_config(default_config_text())
        assert cfg.backbone.stages == ((4, 1), (8, 1), (8, 1))
        assert cfg.attention.n_candidates == 9
        assert cfg.search.noise.sigma == 2.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            build_run_config("serch.epochs = 10\n")

    def test_bad_int(self):
        with pytest.raises(ConfigError):
            build_run_config("search.epochs = many\n")

    def test_bad_bool(self):
        with pytest.raises(ConfigError):
            build_run_config("search.noise_enabled = maybe\n")

    def test_bad_stage_syntax(self):
        with pytest.raises(ConfigError):
            build_run_config("backbone.stages = 8,16\n")

    def test_unknown_candidate(self):
        with pytest.raises(ConfigError):
            build_run_config("attn.candidates = max3,median5\n")

    def test_candidate_subset(self):
        cfg = build_run_config("attn.candidates = max3,zero\n")
        assert cfg.attention.candidate_set == (OpKind.MaxPool3, OpKind.Zero)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            build_run_config("search.noise_sigma = -1\n")

    def test_test_split_uses_distinct_seed(self):
        cfg = build_run_config("seed = 5\n")
        assert cfg.test_dataset.seed != cfg.dataset.seed

    def test_raw_text_preserved(self):
        text = "seed = 9\n"
        assert build_run_config(text).raw_text == text


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


class TestCli:
    def test_usage_error_exit_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["search"])  # missing --config/--out
        assert exc.value.code == 1

    def test_runtime_error_exit_2(self, tmp_path):
        rc = main(["search", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_search_outputs(self, tiny_config, tmp_path):
        out = str(tmp_path / "run")
        assert main(["search", "--config", tiny_config, "--out", out, "--quiet"]) == 0
        for fname in ("config.cfg", "run.txt", "genotype.txt", "telemetry.csv"):
            assert os.path.exists(os.path.join(out, fname)), fname
        Genotype.from_text(open(os.path.join(out, "genotype.txt")).read())

    def test_retrain_eval_roundtrip(self, tiny_config, tmp_path):
        run = str(tmp_path / "run")
        main(["search", "--config", tiny_config, "--out", run, "--quiet"])
        rt = str(tmp_path / "rt")
        geno = os.path.join(run, "genotype.txt")
        assert main(["retrain", "--config", tiny_config, "--genotype", geno, "--out", rt, "--quiet"]) == 0
        assert os.path.exists(os.path.join(rt, "weights.npz"))
        ev = str(tmp_path / "ev")
        rc = main([
            "eval", "--config", tiny_config, "--genotype", geno,
            "--weights", os.path.join(rt, "weights.npz"), "--out", ev, "--quiet",
        ])
        assert rc == 0
        rt_acc = open(os.path.join(rt, "result.txt")).readline()
        ev_acc = open(os.path.join(ev, "result.txt")).readline()
        assert rt_acc == ev_acc

    def test_retrain_requires_genotype_or_baseline(self, tiny_config, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["retrain", "--config", tiny_config, "--out", str(tmp_path / "x")])
        assert exc.value.code == 1

    def test_baseline_retrain(self, tiny_config, tmp_path):
        out = str(tmp_path / "base")
        assert main(["retrain", "--config", tiny_config, "--baseline", "--out", out, "--quiet"]) == 0
        assert not os.path.exists(os.path.join(out, "genotype.txt"))

    def test_analyze_outputs(self, tiny_config, tmp_path):
        run = str(tmp_path / "run")
        main(["search", "--config", tiny_config, "--out", run, "--quiet"])
        an = str(tmp_path / "an")
        rc = main([
            "analyze", "--config", tiny_config,
            "--genotype", os.path.join(run, "genotype.txt"), "--out", an, "--quiet",
        ])
        assert rc == 0
        pgm = open(os.path.join(an, "erf.pgm")).read()
        assert pgm.startswith("P2\n16 16\n65535\n")
        profile = open(os.path.join(an, "rf_profile.txt")).read()
        assert profile.startswith("format = rfsearch-rf-profile")

    def test_config_copied_verbatim(self, tiny_config, tmp_path):
        out = str(tmp_path / "run")
        main(["search", "--config", tiny_config, "--out", out, "--quiet"])
        assert open(os.path.join(out, "config.cfg")).read() == TINY_CFG

    def test_seed_override(self, tiny_config, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        main(["search", "--config", tiny_config, "--out", a, "--quiet"])
        main(["search", "--config", tiny_config, "--seed", "1", "--out", b, "--quiet"])
        ta = open(os.path.join(a, "telemetry.csv")).read()
        tb = open(os.path.join(b, "telemetry.csv")).read()
        assert ta != tb

    def test_init_config_parses(self, tmp_path):
        out = str(tmp_path / "default.cfg")
        assert main(["init-config", "--out", out, "--quiet"]) == 0
        build_run_config(open(out).read())
