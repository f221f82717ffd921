import csv
import io
import json
from pathlib import Path

import pytest

from scratchshare import report as rep
from scratchshare.cli import main
from scratchshare.pipeline import (
    SEED_ENV,
    PipelineError,
    load_config,
    run_modes,
    run_pipeline,
    run_source,
)

ROOT = Path(__file__).resolve().parent.parent
KERNELS = ROOT / "kernels"
CONFIGS = ROOT / "configs"
TAIL = (KERNELS / "straight_tail.kir").read_text()


@pytest.fixture(scope="module")
def tail_config():
    return load_config(CONFIGS / "straight_tail.json", env={})


@pytest.fixture(scope="module")
def tail_reports(tail_config):
    return {m: run_source(TAIL, tail_config, m) for m in ("unshared-lrr", "shared-owf", "shared-owf-opt")}


def test_report_schema_and_csv_columns(tail_reports):
    r = tail_reports["shared-owf-opt"]
    assert r["schema"] == 1
    assert r["kernel"] == "straight_tail"
    assert r["plan"]["shared"] == ["tile"]
    assert r["instructions"]["total"] == sum(r["instructions"][k] for k in ("user", "relssp", "goto"))
    rows = list(csv.DictReader(io.StringIO(rep.reports_csv(tail_reports.values()))))
    assert tuple(rows[0]) == rep.CSV_COLUMNS
    assert rows[2]["mode"] == "shared-owf-opt" and int(rows[2]["cycles"]) == r["cycles"]


def test_repeated_run_is_byte_identical(tail_config, tail_reports):
    again = run_source(TAIL, tail_config, "shared-owf-opt")
    assert rep.dumps(again) == rep.dumps(tail_reports["shared-owf-opt"])


def test_sharing_without_relssp_keeps_instruction_count(tail_reports):
    assert tail_reports["shared-owf"]["instructions"] == tail_reports["unshared-lrr"]["instructions"]


def test_single_insertion_adds_one_relssp_per_thread(tail_config, tail_reports):
    base = tail_reports["unshared-lrr"]["instructions"]
    opt = tail_reports["shared-owf-opt"]["instructions"]
    assert opt["total"] - base["total"] == tail_config.blocks * tail_config.threads_per_block
    assert opt["relssp"] == tail_config.blocks * tail_config.threads_per_block
    assert opt["goto"] == 0


def test_compare_is_anchored_on_the_first_report(tail_reports):
    base, owf, opt = (tail_reports[m] for m in ("unshared-lrr", "shared-owf", "shared-owf-opt"))
    rows = rep.compare([base, owf, opt])
    assert [r["mode"] for r in rows] == ["unshared-lrr", "shared-owf", "shared-owf-opt"]
    assert rows[0]["speedup"] == rows[0]["blocks_ratio"] == rows[0]["ipc_ratio"] == 1.0
    assert rows[0]["instr_delta"] == rows[0]["lock_wait_delta"] == 0
    assert rows[1]["speedup"] == base["cycles"] / owf["cycles"]
    assert rows[2]["instr_delta"] == opt["instructions"]["total"] - base["instructions"]["total"]
    # blocks_ratio is the plan total over the default residency.
    assert rows[1]["blocks_ratio"] == owf["plan"]["total"] / base["plan"]["total"]
    assert owf["plan"]["total"] == owf["plan"]["default"] + owf["plan"]["pairs"]


def test_compare_rows_do_not_depend_on_order_of_the_rest(tail_reports):
    base, owf, opt = (tail_reports[m] for m in ("unshared-lrr", "shared-owf", "shared-owf-opt"))
    a = {r["mode"]: r for r in rep.compare([base, owf, opt])}
    b = {r["mode"]: r for r in rep.compare([base, opt, owf])}
    assert a == b


def test_self_compare_gives_unit_ratios(tail_reports):
    r = tail_reports["shared-owf"]
    rows = rep.compare([r, r])
    assert rows[1]["speedup"] == rows[1]["ipc_ratio"] == rows[1]["blocks_ratio"] == 1.0


def test_compare_rejects_mismatched_kernels(tail_reports):
    other = dict(tail_reports["shared-owf"], kernel_hash="0" * 64, kernel="other")
    with pytest.raises(rep.CompareError, match="different kernel"):
        rep.compare([tail_reports["unshared-lrr"], other])
    with pytest.raises(rep.CompareError):
        rep.compare([other])


def test_seed_env_overrides_config():
    cfg = load_config(CONFIGS / "directional.json", env={SEED_ENV: "42"})
    assert cfg.seed == 42
    assert load_config(CONFIGS / "directional.json", env={}).seed == 7


def test_toml_and_json_configs_load():
    toml = load_config(CONFIGS / "unlimited.toml", env={})
    assert (toml.threads_per_block, toml.hw.num_sms, toml.branches["loop"]["taken"]) == (512, 2, 4)
    js = load_config(CONFIGS / "directional.json", env={})
    assert str(js.t) == "1/10" and js.blocks == 24


def test_unknown_config_key_is_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"blockz": 3}))
    with pytest.raises(ValueError, match="blockz"):
        load_config(p, env={})
    with pytest.raises(PipelineError, match=r"^\[config\]"):
        run_pipeline(KERNELS / "straight_tail.kir", p, "shared-owf")


def test_run_modes_sorted_and_parallel_matches_serial(tail_config):
    modes = ["shared-owf-opt", "unshared-lrr", "shared-owf"]
    serial = run_modes(TAIL, tail_config, modes)
    parallel = run_modes(TAIL, tail_config, modes, jobs=3)
    assert [r["mode"] for r in serial] == sorted(modes)
    assert [rep.dumps(r) for r in serial] == [rep.dumps(r) for r in parallel]


def test_cli_analyze(capsys):
    assert main(["analyze", str(KERNELS / "access_ranges.kir"), "--sets", "A", "B,C"]) == 0
    out = capsys.readouterr().out
    assert "BB1" in out and "block plan" in out and "allocation" in out


def test_cli_transform_inserts_release(capsys):
    assert main(["transform", str(KERNELS / "scenario_b.kir"), "--shared", "S"]) == 0
    assert "relssp" in capsys.readouterr().out


def test_cli_sim_and_compare(tmp_path, capsys):
    kernel = str(KERNELS / "straight_tail.kir")
    config = str(CONFIGS / "straight_tail.json")
    paths = []
    for mode in ("unshared-lrr", "shared-owf-opt"):
        out = tmp_path / f"{mode}.json"
        assert main(["sim", kernel, "--config", config, "--mode", mode, "-o", str(out),
                     "--csv", str(tmp_path / f"{mode}.csv")]) == 0
        paths.append(str(out))
    assert json.loads(Path(paths[0]).read_text())["mode"] == "unshared-lrr"
    assert (tmp_path / "unshared-lrr.csv").read_text().startswith(",".join(rep.CSV_COLUMNS))
    capsys.readouterr()
    assert main(["compare", *paths, "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["speedup"] == 1.0 and rows[1]["instr_delta"] == 1024
    assert main(["compare", *paths]) == 0
    assert "speedup" in capsys.readouterr().out


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.kir"
    bad.write_text("b:\n  frob r1\n  exit\n")
    assert main(["sim", str(bad)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("scratchshare: error:") and "frob" in err
    assert main(["analyze", str(tmp_path / "missing.kir")]) == 1
