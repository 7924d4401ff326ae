import numpy as np
import pytest

from gmsfv.cli import main
from gmsfv.field import PermeabilityField, read_values, save_field
from gmsfv.mesh import FineGrid
from gmsfv.sim import SimConfig, max_saturation_error, run_single_phase, run_two_phase, sweep_two_phase

SMALL = dict(nx=20, ny=20, NX=5, NY=5, levels="1,2,3")


def small(tmp_path, **kw):
    return SimConfig(**{**SMALL, "outdir": str(tmp_path / "out"), **kw})


def test_config_text_round_trip():
    cfg = SimConfig(nx=40, ny=20, NX=4, NY=2, contrast=1e3, mode="fine-fv")
    again = SimConfig.from_text(cfg.to_text())
    assert again == cfg


def test_config_comments_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment line\nnx = 40   # trailing\nNX = 4\ndt = 2e-4\n")
    cfg = SimConfig.load(path, dt="5e-4", L=None)
    assert (cfg.nx, cfg.NX, cfg.dt, cfg.L) == (40, 4, 5e-4, 4)


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1\n", "unknown key"),
    ("nx = ten\n", "bad value"),
    ("nx 10\n", "expected key = value"),
    ("mode = magic\n", "unknown mode"),
    ("nx = 25\n", "multiples"),
    ("levels = 0,2\n", "positive"),
    ("output_times = 2.0\n", r"\(0, T\]"),
])
def test_config_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        SimConfig.from_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        SimConfig.load(tmp_path / "nope.cfg")


def test_homogeneous_field_is_exact(tmp_path):
    fg = FineGrid(20, 20)
    fpath = tmp_path / "k.txt"
    save_field(fpath, PermeabilityField(fg, np.full(fg.n_cells, 2.5)))
    for mode in ("gmsfem-fv", "galerkin-unconstrained"):
        rec = run_single_phase(small(tmp_path, field=str(fpath), mode=mode))
        for _, rep in rec.reports:
            assert rep.l2k_pct < 1e-8 and rep.h1k_pct < 1e-8


def test_single_phase_outputs(tmp_path):
    cfg = small(tmp_path)
    rec = run_single_phase(cfg)
    out = tmp_path / "out"
    assert not rec.failed
    rows = (out / "errors.csv").read_text().splitlines()
    assert rows[0] == "N_c,dimV0,Mc,L2k_pct,H1k_pct"
    # 5x5 coarse cells: 36 nodes, 16 interior, 36 dual volumes
    assert [r.split(",")[:3] for r in rows[1:]] == [["72", "36", "36"], ["88", "52", "36"],
                                                      ["104", "68", "36"]]
    for L in (1, 2, 3):
        assert read_values(out / f"pressure_L{L}.txt").size == 441
        assert (out / f"flux_L{L}.txt").exists()
        assert rec.residuals[f"coarse_conservation_L{L}"] < 1e-9
        assert rec.residuals[f"fine_conservation_L{L}"] < 1e-9
    assert "[report L=2]" in (out / "record.txt").read_text()


def test_galerkin_mode_is_not_conservative(tmp_path):
    g = run_single_phase(small(tmp_path, mode="galerkin-unconstrained", levels="2"), write=False)
    c = run_single_phase(small(tmp_path, levels="2"), write=False)
    assert c.residuals["coarse_conservation_L2"] < 1e-9
    assert g.residuals["coarse_conservation_L2"] > 1e-6
    assert "fine_conservation_L2" not in g.residuals


def test_fine_fv_mode_notes_ignored_enrichment(tmp_path):
    rec = run_single_phase(small(tmp_path, mode="fine-fv"), write=False)
    assert any("ignored" in n for n in rec.notes)
    assert rec.reports[0][1].h1k_pct == 0.0


def test_two_phase_bookkeeping(tmp_path):
    cfg = small(tmp_path, T=0.0025, dt=1e-4, steps_per_solve=10, output_times="0.001,0.0025", L=2)
    rec = run_two_phase(cfg)
    assert rec.counters["transport_steps"] == 25
    assert rec.counters["pressure_solves"] == 3
    assert rec.counters["final_time"] == pytest.approx(0.0025, rel=1e-12)
    assert sorted(rec.snapshots) == [0.001, 0.0025]
    assert (tmp_path / "out" / "saturation_t0.0025.txt").exists()
    assert rec.residuals["water_balance_max"] < 1e-10
    assert 0.0 <= rec.residuals["S_min"] and rec.residuals["S_max"] <= 1.0
    assert not rec.failed


def test_step_count_rounds_up():
    assert SimConfig(T=0.25, dt=0.1).n_steps() == 3
    assert SimConfig(T=0.9, dt=1e-4).n_steps() == 9000


def test_two_phase_galerkin_rejected(tmp_path):
    with pytest.raises(ValueError, match="not conservative"):
        run_two_phase(small(tmp_path, mode="galerkin-unconstrained", T=1e-3))


def test_two_phase_deterministic(tmp_path):
    kw = dict(T=0.002, dt=1e-4, steps_per_solve=5, output_times="0.002", L=2)
    run_two_phase(small(tmp_path / "a", **kw))
    run_two_phase(small(tmp_path / "b", **kw))
    a = (tmp_path / "a" / "out" / "saturation_t0.002.txt").read_bytes()
    b = (tmp_path / "b" / "out" / "saturation_t0.002.txt").read_bytes()
    assert a == b


def test_sweep_reports_errors(tmp_path):
    cfg = small(tmp_path, T=0.003, dt=1e-4, steps_per_solve=10, output_times="0.003", levels="1,3")
    ref, runs = sweep_two_phase(cfg)
    assert set(runs) == {1, 3}
    for r in runs.values():
        assert np.isfinite(max_saturation_error(r))
    rows = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("L,N_c,dimV0,max_sat_pct") and len(rows) == 3


# -- command line -------------------------------------------------------------

def test_cli_genfield(tmp_path, capsys):
    out = tmp_path / "k.txt"
    assert main(["genfield", "--nx", "20", "--contrast", "100", "--out", str(out)]) == 0
    assert read_values(out).size == 400
    assert "contrast=100.0" in capsys.readouterr().out


def test_cli_pressure(tmp_path, capsys):
    rc = main(["pressure", "--nx", "20", "--ny", "20", "--NX", "5", "--NY", "5", "--levels", "2",
               "--outdir", str(tmp_path)])
    assert rc == 0
    assert "L=2,88,52,36," in capsys.readouterr().out
    assert (tmp_path / "errors.csv").exists()


def test_cli_twophase(tmp_path, capsys):
    rc = main(["twophase", "--nx", "20", "--ny", "20", "--NX", "5", "--NY", "5", "--L", "2",
               "--T", "0.001", "--steps_per_solve", "5", "--outdir", str(tmp_path)])
    assert rc == 0
    assert "pressure_solves = 2" in capsys.readouterr().out


def test_cli_sweep(tmp_path, capsys):
    rc = main(["sweep", "--nx", "20", "--ny", "20", "--NX", "5", "--NY", "5", "--levels", "1,2",
               "--T", "0.001", "--steps_per_solve", "5", "--outdir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "sweep.csv").exists()


def test_cli_errors(tmp_path, capsys):
    assert main(["pressure", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "config file not found" in capsys.readouterr().err
    assert main(["pressure", "--mode", "magic"]) == 2
    with pytest.raises(SystemExit):
        main(["pressure", "--no-such-flag", "1"])
