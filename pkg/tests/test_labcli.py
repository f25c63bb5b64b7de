"""Config strictness, checkpoint container, CLI contracts, pipeline stages."""

import json
import os
import shutil

import numpy as np
import pytest

from csplab import codeclm as clm
from csplab.labcli import (
    ConfigError, cli_dispatch, config_from_dict, load_config,
    load_arrays, save_arrays, load_checkpoint, save_checkpoint,
    CheckpointError,
)
from csplab.labcli import pipeline as pl
from csplab.lmtrain import train_lm, optimizer_state
from conftest import tiny_model_config


MINI = {
    "seed": 11,
    "float_mode": "float64",
    "domain": {"v_t": 12, "v_s": 24, "segment_len": 4, "content_scale": 3.0,
               "alpha": 1.4, "tau_lo": 0.5, "tau_hi": 0.85},
    "layout": {"source_speakers": 6, "source_emotions": 2, "target_speakers": 2,
               "target_emotions": 2, "n_source": 200, "target_train": 40,
               "target_test": 8, "text_len_min": 2, "text_len_max": 4,
               "target_text_vocab": 6},
    "model": {"n_layers": 2, "model_dim": 16, "inner_dim": 32, "n_heads": 2,
              "max_seq_len": 64},
    "pretrain": {"epochs": 2, "batch_size": 16, "peak_lr": 2e-3},
    "probe": {"utterances": 60, "epochs": 2, "channels": 8, "attn_dim": 8},
    "evaluator": {"source_utterances": 80, "epochs": 2, "channels": 8,
                  "emb_dim": 8, "accuracy_floor": 0.0},
    "finetune": {"epochs": 2, "batch_size": 8},
    "eval": {"source_ter_utterances": 6},
    "strategies": ["origin", "full", "csp"],
    "seeds": [5],
    "bench": {"n_steps": 4, "warmup": 1, "batch_size": 4, "plans": ["full", "csp"]},
    "transfer": {"enabled": False, "strategies": ["csp"]},
}


def mini_config(tmp_path, **tweaks):
    doc = json.loads(json.dumps(MINI))
    doc["out_dir"] = str(tmp_path / "run")
    for key, val in tweaks.items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = val
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path), config_from_dict(doc)


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path, _ = mini_config(tmp_path)
        doc = json.loads(open(path).read())
        doc["mystery"] = 1
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path, _ = mini_config(tmp_path)
        doc = json.loads(open(path).read())
        doc["pretrain"]["banana"] = 2
        open(path, "w").write(json.dumps(doc))
        with pytest.raises(ConfigError):
            load_config(path)

    def test_dotted_overrides(self, tmp_path):
        path, _ = mini_config(tmp_path)
        cfg = load_config(path, overrides=["pretrain.epochs=5", "seed=99"])
        assert cfg.pretrain.epochs == 5
        assert cfg.seed == 99

    def test_hash_changes_with_content(self, tmp_path):
        path, cfg = mini_config(tmp_path)
        other = load_config(path, overrides=["seed=1234"])
        assert cfg.config_hash() != other.config_hash()

    def test_bad_float_mode(self, tmp_path):
        path, _ = mini_config(tmp_path)
        with pytest.raises(ConfigError):
            load_config(path, overrides=["float_mode=float16"])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = clm.CodecLM(tiny_model_config(), seed=7)
        p = str(tmp_path / "m.ckpt")
        save_checkpoint(m, {"config_hash": "x", "seed": 7}, p)
        loaded, meta, opt = load_checkpoint(p)
        assert meta["seed"] == 7 and opt is None
        assert loaded.param_hash(list(loaded.params)) == m.param_hash(list(m.params))

    def test_lora_round_trip(self, tmp_path):
        m = clm.CodecLM(tiny_model_config(), seed=7)
        clm.inject_lora(m, rank=2, seed=3)
        m.adapters["transformer.layer.0.attn.wq"][1].tensor.data[:] = 0.25
        p = str(tmp_path / "m.ckpt")
        save_checkpoint(m, {"config_hash": "x"}, p)
        loaded, _, _ = load_checkpoint(p)
        got = loaded.adapters["transformer.layer.0.attn.wq"][1].tensor.data
        assert np.all(got == 0.25)

    def test_corrupted_byte_detected(self, tmp_path):
        m = clm.CodecLM(tiny_model_config(), seed=7)
        p = str(tmp_path / "m.ckpt")
        save_checkpoint(m, {}, p)
        blob = bytearray(open(p, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(p, "wb").write(bytes(blob))
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(str(p))

    def test_truncated_file(self, tmp_path):
        m = clm.CodecLM(tiny_model_config(), seed=7)
        p = str(tmp_path / "m.ckpt")
        save_checkpoint(m, {}, p)
        blob = open(p, "rb").read()
        open(p, "wb").write(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_generic_arrays_little_endian(self, tmp_path):
        p = str(tmp_path / "a.ckpt")
        arr = np.arange(6, dtype=np.float64).reshape(2, 3)
        save_arrays(p, [("x", arr)], {"k": 1})
        arrays, meta = load_arrays(p)
        assert meta == {"k": 1}
        np.testing.assert_array_equal(arrays["x"], arr)
        # payload contains the raw little-endian bytes
        assert arr.astype("<f8").tobytes() in open(p, "rb").read()


class TestCli:
    def test_unknown_subcommand_is_usage(self, capsys):
        assert cli_dispatch(["explode"]) == 1

    def test_unknown_flag_is_usage(self, tmp_path):
        path, _ = mini_config(tmp_path)
        assert cli_dispatch(["gen-data", "--config", path, "--bogus"]) == 1

    def test_missing_config_file(self):
        assert cli_dispatch(["gen-data", "--config", "/nope/none.json"]) == 2

    def test_gen_data_and_select_pipeline(self, tmp_path):
        path, cfg = mini_config(tmp_path)
        assert cli_dispatch(["gen-data", "--config", path]) == 0
        assert os.path.exists(pl.RunPaths(cfg.out_dir).domain)
        # select before probe: weights file missing -> config error exit
        assert cli_dispatch(["select", "--config", path]) == 2

    def test_stale_weights_hash_refused(self, tmp_path):
        path, cfg = mini_config(tmp_path)
        assert cli_dispatch(["gen-data", "--config", path]) == 0
        paths = pl.RunPaths(cfg.out_dir)
        with open(paths.weights, "w") as f:
            json.dump({"backbone_config_hash": "stale", "w_emotion": [0.5, 0.5],
                       "w_speaker": [0.5, 0.5], "probe_seed": 0}, f)
        assert cli_dispatch(["select", "--config", path]) == 2

    def test_kernel_bench_smoke(self, capsys):
        import csplab.labcli.kernelbench as kb
        orig = kb._workloads
        kb._workloads = lambda dtype=np.float64: orig(dtype)[:2]
        try:
            assert cli_dispatch(["bench", "--kernels"]) == 0
        finally:
            kb._workloads = orig
        out = capsys.readouterr().out
        assert "numpy" in out and "numba" in out


class TestPretrainResume:
    def test_resume_is_bit_exact(self, tmp_path):
        path, cfg = mini_config(tmp_path, **{"pretrain.epochs": 3,
                                             "keep_checkpoints": True})
        log = pl.StageLog(echo=False)
        pl.RunPaths(cfg.out_dir).ensure()
        pl.stage_gen_data(cfg, log)
        pl.stage_pretrain(cfg, log)
        final, _, _ = load_checkpoint(pl.RunPaths(cfg.out_dir).pretrained)
        full_hash = final.param_hash(list(final.params))
        # resume from the epoch-1 checkpoint and re-run the last epoch
        resume_path = os.path.join(cfg.out_dir, "pretrain-epoch-1.ckpt")
        assert os.path.exists(resume_path)
        pl.stage_pretrain(cfg, log, resume_from=resume_path)
        resumed, _, _ = load_checkpoint(pl.RunPaths(cfg.out_dir).pretrained)
        assert resumed.param_hash(list(resumed.params)) == full_hash


class TestReportShape:
    def test_grid_columns_and_regeneration(self, tmp_path):
        # synthesize rows files directly; report must be byte-stable
        path, cfg = mini_config(tmp_path)
        paths = pl.RunPaths(cfg.out_dir)
        paths.ensure()
        h = cfg.config_hash()
        rows = {"config_hash": h, "strategy": "origin", "seed": 0,
                "trainable": 0, "total": 100,
                "rows": [{"epoch": 0, "ss": 0.5, "ers": 0.25,
                          "ter_target": 0.75, "ter_source": 0.125}]}
        with open(paths.rows("origin", 0), "w") as f:
            json.dump(rows, f)
        for strat, ss in (("full", 0.625), ("csp", 0.6875)):
            doc = {"config_hash": h, "strategy": strat, "seed": 5,
                   "trainable": 10, "total": 100,
                   "rows": [{"epoch": 1, "ss": ss, "ers": 0.5,
                             "ter_target": 0.5, "ter_source": 0.25},
                            {"epoch": 2, "ss": ss + 0.0625, "ers": 0.75,
                             "ter_target": 0.25, "ter_source": 0.375}]}
            with open(paths.rows(strat, 5), "w") as f:
                json.dump(doc, f)
        from csplab.labcli.report import write_reports, GRID_COLUMNS
        log = pl.StageLog(echo=False)
        summary = write_reports(cfg, log)
        assert summary["missing"] == []
        first = open(paths.report_csv, "rb").read()
        header = first.decode().splitlines()[0].split(",")
        assert header == GRID_COLUMNS
        assert any(line.startswith("origin,") for line in first.decode().splitlines())
        write_reports(cfg, log)
        assert open(paths.report_csv, "rb").read() == first
        curves = json.load(open(paths.curves_json))
        np.testing.assert_allclose(curves["full"]["ers"]["normalized"], [0, 1])

    def test_missing_strategy_reported(self, tmp_path):
        path, cfg = mini_config(tmp_path)
        paths = pl.RunPaths(cfg.out_dir)
        paths.ensure()
        with open(paths.rows("origin", 0), "w") as f:
            json.dump({"config_hash": cfg.config_hash(), "strategy": "origin",
                       "seed": 0, "trainable": 0, "total": 1,
                       "rows": [{"epoch": 0, "ss": 0.5, "ers": 0.5,
                                 "ter_target": 0.5, "ter_source": 0.5}]}, f)
        from csplab.labcli.report import write_reports
        summary = write_reports(cfg, pl.StageLog(echo=False))
        assert set(summary["missing"]) == {"full", "csp"}
