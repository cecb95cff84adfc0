import numpy as np
import pytest

from mirid.cli import load_checkpoint, main
from mirid.config import SCHEMA, load_config, parse_config, render_config
from mirid.container import read_container

TINY_CONFIG = """
# tiny smoke configuration
ny = 24
nx = 24
ncoils = 3
nshots = 2
accel = 2
partial_fourier = 0.75
noise_sigma = 0.003
n_directions = 6
phantom = fibers
unroll_count = 3
cg_steps = 5
net_layers = 2
net_hidden = 4
max_epochs = 1
patience = 5
n_g1 = 1
seed = 11
"""


@pytest.fixture()
def tiny_run(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text(TINY_CONFIG)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(conf), "--out", str(out)]) == 0
    return conf, out


class TestConfig:
    def test_defaults_and_round_trip(self):
        cfg = parse_config("")
        for key, (_, default) in SCHEMA.items():
            assert cfg.values[key] == default
        text = render_config(cfg)
        again = parse_config(text)
        assert again.values == cfg.values

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ValueError, match="no_such_key"):
            parse_config("no_such_key = 3")

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# comment\n\nny = 32  # trailing\n")
        assert cfg.ny == 32

    def test_custom_ellipses(self):
        cfg = parse_config(
            "ellipse.0 = 0 0 0.5 0.5 0 1.0 1e-3 1e-3 1e-3 0 0 0\n"
        )
        scene = cfg.scene()
        assert len(scene.ellipses) == 1
        assert scene.ellipses[0].s0 == 1.0

    def test_bad_value_type(self):
        with pytest.raises(ValueError, match="ny"):
            parse_config("ny = not_a_number")


class TestSimulate:
    def test_manifest_and_determinism(self, tmp_path):
        conf = tmp_path / "c.conf"
        conf.write_text(TINY_CONFIG)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["simulate", "--config", str(conf), "--out", str(out1)]) == 0
        assert main(["simulate", "--config", str(conf), "--out", str(out2)]) == 0
        arrays = read_container(out1 / "dataset.mirid")
        n_entries = 7  # 6 directions + b0
        assert len(arrays) == 5 + 3 * n_entries
        assert (out1 / "dataset.mirid").read_bytes() == (out2 / "dataset.mirid").read_bytes()
        assert (out1 / "resolved_config.txt").exists()

    def test_invalid_config_key_fails_nonzero(self, tmp_path, capsys):
        conf = tmp_path / "bad.conf"
        conf.write_text("bogus_key = 1\n")
        rc = main(["simulate", "--config", str(conf), "--out", str(tmp_path / "o")])
        assert rc != 0
        assert "bogus_key" in capsys.readouterr().err

    def test_coverage_printed_matches_pf_over_r(self, tiny_run, capsys):
        conf, out = tiny_run
        main(["simulate", "--config", str(conf), "--out", str(out)])
        text = capsys.readouterr().out
        # pf/R = 0.75/2 -> 37.5% within 1/ny
        assert "coverage 37.5%" in text


class TestTrainCommand:
    def test_train_writes_checkpoint_and_history(self, tiny_run, tmp_path):
        conf, out = tiny_run
        rc = main(["train", str(out / "dataset.mirid"), "--config", str(conf),
                   "--out", str(out)])
        assert rc == 0
        assert (out / "checkpoint_mirid.mirid").exists()
        history = (out / "history_mirid.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_loss,seconds"
        assert len(history) == 2  # one epoch
        pairs = load_checkpoint(out / "checkpoint_mirid.mirid")
        assert len(pairs) == 1
        assert len(pairs[0][0].layers) == 2

    def test_train_rerun_reproduces_losses(self, tiny_run, tmp_path):
        conf, out = tiny_run
        outa, outb = tmp_path / "ta", tmp_path / "tb"
        for o in (outa, outb):
            assert main(["train", str(out / "dataset.mirid"), "--config", str(conf),
                         "--out", str(o)]) == 0
        rows_a = (outa / "history_mirid.csv").read_text().splitlines()
        rows_b = (outb / "history_mirid.csv").read_text().splitlines()
        strip = lambda rows: [",".join(r.split(",")[:3]) for r in rows]
        assert strip(rows_a) == strip(rows_b)
        assert (outa / "checkpoint_mirid.mirid").read_bytes() == (
            outb / "checkpoint_mirid.mirid").read_bytes()

    def test_sirid_training_per_shot_files(self, tiny_run):
        conf, out = tiny_run
        rc = main(["train", str(out / "dataset.mirid"), "--config", str(conf),
                   "--method", "sirid", "--out", str(out)])
        assert rc == 0
        assert (out / "checkpoint_sirid.mirid").exists()
        assert (out / "history_sirid_shot00.csv").exists()
        assert (out / "history_sirid_shot01.csv").exists()
        pairs = load_checkpoint(out / "checkpoint_sirid.mirid")
        assert len(pairs) == 2
        rc = main(["recon", str(out / "dataset.mirid"), "--method", "sirid",
                   "--checkpoint", str(out / "checkpoint_sirid.mirid"),
                   "--config", str(conf), "--out", str(out)])
        assert rc == 0
        rec = read_container(out / "recon_sirid.mirid")
        assert sum(1 for n in rec if n.startswith("recon_")) == 7


class TestReconCommand:
    def test_sense_on_noiseless_full_sampling_recovers_truth(self, tmp_path):
        conf = tmp_path / "c.conf"
        conf.write_text(
            "ny = 16\nnx = 16\nncoils = 4\nnshots = 1\naccel = 1\n"
            "partial_fourier = 1.0\nnoise_sigma = 0\nn_directions = 2\n"
            "phantom = disc\ncg_steps = 30\nseed = 4\n"
        )
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(conf), "--out", str(out)]) == 0
        assert main(["recon", str(out / "dataset.mirid"), "--method", "sense",
                     "--config", str(conf), "--out", str(out)]) == 0
        rec = read_container(out / "recon_sense.mirid")
        data = read_container(out / "dataset.mirid")
        for d in range(3):
            assert np.allclose(rec[f"recon_{d:03d}"], data[f"truth_{d:03d}"], atol=1e-8)
        assert (out / "recon_sense_000.pgm").exists()
        assert (out / "recon_sense_000.pgm.scale.txt").exists()

    def test_untrained_mirid_equals_proximal(self, tiny_run):
        conf, out = tiny_run
        assert main(["recon", str(out / "dataset.mirid"), "--method", "mirid",
                     "--untrained", "--config", str(conf), "--out", str(out)]) == 0
        rec = read_container(out / "recon_mirid.mirid")
        assert sum(1 for n in rec if n.startswith("recon_")) == 7

        from mirid.operators import sense_adjoint
        from mirid.recon import combine_shots, dc_solve

        data = read_container(out / "dataset.mirid")
        cfg = load_config(conf)
        b = data["kspace_001"]
        coils, masks = data["coil_maps"], data["shot_masks"]
        adj = sense_adjoint(b, coils, masks)
        lam = cfg.lambda1 + cfg.lambda2
        x = adj
        for _ in range(cfg.unroll_count):
            x = dc_solve(adj + lam * x, coils, masks, lam, cfg.cg_steps)
        assert np.allclose(rec["recon_001"], combine_shots(x), atol=1e-8)

    def test_missing_checkpoint_fails(self, tiny_run, capsys):
        conf, out = tiny_run
        rc = main(["recon", str(out / "dataset.mirid"), "--method", "mirid",
                   "--config", str(conf), "--out", str(out)])
        assert rc != 0
        assert "checkpoint" in capsys.readouterr().err

    def test_threads_flag_matches_single_thread(self, tiny_run, tmp_path):
        conf, out = tiny_run
        o1, o2 = tmp_path / "r1", tmp_path / "r2"
        for o, threads in ((o1, "1"), (o2, "3")):
            assert main(["recon", str(out / "dataset.mirid"), "--method", "sense",
                         "--config", str(conf), "--threads", threads,
                         "--out", str(o)]) == 0
        assert (o1 / "recon_sense.mirid").read_bytes() == (
            o2 / "recon_sense.mirid").read_bytes()


class TestEvaluateCommand:
    def test_metrics_csv(self, tiny_run):
        conf, out = tiny_run
        assert main(["recon", str(out / "dataset.mirid"), "--method", "sense",
                     "--config", str(conf), "--out", str(out)]) == 0
        rc = main(["evaluate", str(out / "dataset.mirid"),
                   str(out / "recon_sense.mirid"), "--config", str(conf),
                   "--out", str(out)])
        assert rc == 0
        rows = (out / "metrics.csv").read_text().splitlines()
        assert rows[0] == "method,item,nrmse_percent,nmae_percent"
        assert any(r.startswith("sense,dir_001,") for r in rows)
        assert any(r.startswith("sense,mean,") for r in rows)
        assert any(r.startswith("sense,mean_dwi,") for r in rows)
        assert any(r.startswith("sense,fa_map,") for r in rows)

    def test_spot_value_matches_direct_recomputation(self, tiny_run):
        conf, out = tiny_run
        main(["recon", str(out / "dataset.mirid"), "--method", "sense",
              "--config", str(conf), "--out", str(out)])
        main(["evaluate", str(out / "dataset.mirid"), str(out / "recon_sense.mirid"),
              "--config", str(conf), "--out", str(out)])
        from mirid.metrics import nrmse

        data = read_container(out / "dataset.mirid")
        rec = read_container(out / "recon_sense.mirid")
        expected = nrmse(rec["recon_001"], data["truth_001"])
        for row in (out / "metrics.csv").read_text().splitlines():
            if row.startswith("sense,dir_001,"):
                assert float(row.split(",")[2]) == pytest.approx(expected, rel=1e-12)
                break
        else:
            pytest.fail("dir_001 row missing")

    def test_ground_truth_scores_zero(self, tiny_run, tmp_path):
        conf, out = tiny_run
        from mirid.container import write_container

        data = read_container(out / "dataset.mirid")
        truth_as_recon = {
            f"recon_{d:03d}": data[f"truth_{d:03d}"] for d in range(7)
        }
        path = tmp_path / "recon_truth.mirid"
        write_container(path, truth_as_recon)
        assert main(["evaluate", str(out / "dataset.mirid"), str(path),
                     "--config", str(conf), "--out", str(out)]) == 0
        for row in (out / "metrics.csv").read_text().splitlines()[1:]:
            cells = row.split(",")
            assert cells[0] == "truth"
            for cell in cells[2:]:
                if cell:
                    assert abs(float(cell)) < 1e-6

    def test_geometry_mismatch_fails(self, tiny_run, tmp_path, capsys):
        conf, out = tiny_run
        from mirid.container import write_container

        bad = tmp_path / "recon_bad.mirid"
        write_container(bad, {"recon_000": np.zeros((24, 24))})
        rc = main(["evaluate", str(out / "dataset.mirid"), str(bad),
                   "--config", str(conf), "--out", str(out)])
        assert rc != 0
        assert "directions" in capsys.readouterr().err
