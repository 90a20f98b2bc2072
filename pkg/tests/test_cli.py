from __future__ import annotations

import argparse
from pathlib import Path

import pytest

from conftest import FIXTURES
from oracles import selector
from walletscope.cli import build_parser, main, resolve_settings
from walletscope.store import HEADER

import asm

GOLDEN = FIXTURES / "golden"


def run(capsys, *argv) -> tuple[int, str, str]:
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def home(tmp_path) -> str:
    return str(tmp_path / "home")


@pytest.fixture
def loaded(capsys, home) -> str:
    assert run(capsys, "ingest-code", str(GOLDEN / "codes.tsv"), "--home", home)[0] == 0
    assert run(capsys, "ingest-traces", str(GOLDEN / "traces.tsv"), "--home", home)[0] == 0
    return home


def test_skeleton_example(capsys, tmp_path):
    f = tmp_path / "in.hex"
    f.write_text("6001600101\n# skipped\n0x600100\nzz\n")
    code, out, err = run(capsys, "skeleton", str(f))
    lines = out.splitlines()
    assert code == 0 and len(lines) == 3
    assert lines[0].startswith("0x6000600001 0x")
    assert lines[1].startswith("0x60 0x")
    assert lines[2] == "- -" and "skipping" in err


def test_skeleton_creation_flag(capsys, tmp_path):
    runtime = "6001600101" + asm.BZZR0_TRAILER
    f = tmp_path / "in.hex"
    f.write_text(f"6080604052{runtime}{'00' * 31}07\n6080604052{runtime}{'00' * 31}09\n")
    _, out, _ = run(capsys, "skeleton", "--creation", str(f))
    a, b = out.splitlines()
    assert a == b


def test_interface_with_directory(capsys, tmp_path):
    f = tmp_path / "in.hex"
    f.write_text("0x" + asm.modern([selector("owner()"), "12345678"]).hex() + "\n\n0x00\n")
    d = tmp_path / "sigs.txt"
    d.write_text(f"{selector('owner()')} owner()\n")
    _, out, _ = run(capsys, "interface", str(f))
    assert out.splitlines() == ["12345678,8da5cb5b", "-"]
    _, out, _ = run(capsys, "interface", str(f), "--directory", str(d))
    assert out.splitlines()[0] == "12345678,8da5cb5b\t0.5000\t12345678=?,8da5cb5b=owner()"
    assert out.splitlines()[1] == "-\t1.0000\t-"


def test_usage_errors_exit_1(capsys):
    assert run(capsys, "--version")[0] == 0
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "skeleton")[0] == 1
    assert run(capsys, "skeleton", "x", "--bogus")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "report", "--jobs", "zero")[0] == 1


def test_missing_input_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "skeleton", str(tmp_path / "nope.hex"))
    assert code == 2 and "nope.hex" in err


def test_corrupt_store_exit_3(capsys, home):
    Path(home).mkdir()
    (Path(home) / "store.log").write_text("not a store\n")
    assert run(capsys, "report", "--home", home)[0] == 3


def test_bad_rules_exit_1(capsys, loaded, tmp_path):
    rules = tmp_path / "bad.rules"
    rules.write_text("X: nonsense\n")
    code, _, err = run(capsys, "classify", "--home", loaded, "--rules", str(rules))
    assert code == 1 and "line 1" in err


def test_report_variety_on_empty_store(capsys, home):
    code, out, _ = run(capsys, "report", "--variety", "--home", home)
    assert code == 0
    assert out.splitlines() == [
        "# variety",
        "scope\tname\tdeployments\tbytecodes\tskeletons\tcreators",
        "type\tsimple\t0\t0\t0\t0",
        "type\tmultisig\t0\t0\t0\t0",
        "type\tforwarder\t0\t0\t0\t0",
        "type\tcontrolled\t0\t0\t0\t0",
        "type\tupdate\t0\t0\t0\t0",
        "type\tsmart\t0\t0\t0\t0",
        "total\tall_wallets\t0\t0\t0\t0",
        "total\tall_contracts\t0\t0\t0\t0",
    ]
    assert (Path(home) / "store.log").read_text() == HEADER + "\n"


def test_classify_golden(capsys, loaded):
    code, out, _ = run(capsys, "classify", "--home", loaded)
    assert code == 0
    assert out == (GOLDEN / "classify.golden").read_text()


def test_classify_jobs_do_not_change_output(capsys, loaded):
    _, one, _ = run(capsys, "classify", "--home", loaded, "--dry-run")
    _, many, _ = run(capsys, "classify", "--home", loaded, "--dry-run", "--jobs", "3")
    assert one == many


def test_classify_writes_back(capsys, loaded):
    run(capsys, "classify", "--home", loaded)
    _, out, _ = run(capsys, "report", "--variety", "--home", loaded)
    rows = {tuple(line.split("\t")[:2]): line.split("\t")[2:] for line in out.splitlines()[2:]}
    assert rows[("blueprint", "Bittrex")] == ["3", "1", "1", "1"]
    assert rows[("type", "controlled")] == ["3", "1", "1", "1"]
    wallets = int(rows[("total", "all_wallets")][0])
    expected = sum(1 for ln in (GOLDEN / "expected.tsv").read_text().splitlines() if "\t-\t" not in ln)
    assert wallets == expected
    size = (Path(loaded) / "store.log").stat().st_size
    run(capsys, "classify", "--home", loaded)
    assert (Path(loaded) / "store.log").stat().st_size == size


def test_ingest_is_idempotent(capsys, loaded):
    traces = (Path(loaded) / "traces.tsv").read_text()
    code, out, _ = run(capsys, "ingest-traces", str(GOLDEN / "traces.tsv"), "--home", loaded)
    assert code == 0 and out.startswith("added\t0\n")
    assert (Path(loaded) / "traces.tsv").read_text() == traces


def test_ingest_code_counts(capsys, home, tmp_path):
    f = tmp_path / "codes.tsv"
    f.write_text("0x6001\n" + "0x" + "01" * 20 + "\t0x6002\t-\t5\nnot-an-address\t0x00\n")
    _, out, err = run(capsys, "ingest-code", str(f), "--home", home)
    assert out == "codes\t1\naddresses\t1\nrejected\t1\n" and "rejected" in err


def test_events_and_usage_report(capsys, loaded, tmp_path):
    wallets = [ln.split("\t")[0] for ln in (GOLDEN / "expected.tsv").read_text().splitlines()
               if "Bittrex" in ln]
    events = tmp_path / "events.tsv"
    events.write_text(f"5000100\t0x01\t{'0x' + '77' * 20}\t{wallets[0]}\t{'0x' + '66' * 20}\t10\n")
    calls = tmp_path / "calls.tsv"
    calls.write_text(f"5000100\t0x02\t{'0x' + '77' * 20}\t70a08231\t{wallets[1]}\n")
    assert run(capsys, "ingest-events", "--home", loaded)[0] == 1
    code, out, _ = run(capsys, "ingest-events", "--events", str(events), "--calls", str(calls), "--home", loaded)
    assert code == 0 and "events\t1" in out and "calls\t1" in out
    run(capsys, "classify", "--home", loaded)
    _, out, _ = run(capsys, "report", "--usage", "--home", loaded)
    lines = out.splitlines()
    assert lines[:2] == ["# usage", "bin_start\tscope\tboth\teth_only\ttokens_only\tunused"]
    controlled = [ln for ln in lines if "\tcontrolled\t" in ln]
    assert controlled == ["5000000\tcontrolled\t0\t0\t2\t1"]


def test_graph_command(capsys, loaded, tmp_path):
    calls = tmp_path / "t.tsv"
    a, b, c = ("0x" + f"{k:040x}" for k in (0x1001, 0x1002, 0x1003))
    calls.write_text(f"9\t0x09\t0\tcall\t{a}\t{b}\t0\t-\t1\n9\t0x09\t1\tcall\t{b}\t{c}\t0\t-\t1\n")
    run(capsys, "ingest-traces", str(calls), "--home", loaded)
    code, out, _ = run(capsys, "graph", "--home", loaded)
    assert code == 0
    assert out.splitlines()[2] == "full\t3\t2\t1\t3\t3"
    run(capsys, "classify", "--home", loaded)
    _, out, _ = run(capsys, "graph", "--home", loaded)
    assert out.splitlines()[3:] == [
        "without_wallets_unpruned\t0\t0\t0\t0\t-",
        "without_wallets\t0\t0\t0\t0\t-",
        "without_wallets_and_holders\t0\t0\t0\t0\t-",
    ]


def test_factories_command(capsys, loaded):
    _, out, _ = run(capsys, "factories", "--home", loaded, "--min-children", "3", "--max-skeletons", "1")
    # the Bittrex controller: sweeper and wallets differ only in PUSH4 constants
    assert out.splitlines() == [
        "creator\tchildren\tskeletons\tfactory",
        "0x0000000000000000000000000000000000001027\t4\t1\t1",
    ]
    _, every, _ = run(capsys, "factories", "--home", loaded, "--all")
    assert len(every.splitlines()) == 7


def test_fuzz_command(capsys, tmp_path):
    distinct = [selector("owner()"), selector("transfer(address,uint256)"), selector("sweepAll(address)")]
    seeds = tmp_path / "seeds.hex"
    seeds.write_text("\n".join("0x" + asm.modern(distinct[:k] + [selector("kill()")]).hex() for k in (2, 3)))
    corpus = tmp_path / "corpus.hex"
    corpus.write_text("\n".join("0x" + asm.modern([selector("kill()"), f"{k:08x}"]).hex() for k in range(20)))
    code, out, _ = run(capsys, "fuzz", str(seeds), "--corpus", str(corpus))
    assert code == 0
    assert out.splitlines() == [f"{s}\t?" for s in sorted(distinct[:2])]
    code, _, err = run(capsys, "fuzz", str(seeds), "--corpus", str(corpus), "--theta", "0")
    assert code == 0
    assert "more than 1.00%" in run(capsys, "fuzz", str(corpus), "--corpus", str(corpus))[2]
    disjoint = tmp_path / "disjoint.hex"
    disjoint.write_text("\n".join("0x" + asm.modern([s]).hex() for s in distinct[:2]))
    code, _, err = run(capsys, "fuzz", str(disjoint), "--corpus", str(corpus))
    assert code == 1 and "in common" in err


def test_verbose_goes_to_stderr(capsys, home):
    code, out, err = run(capsys, "report", "--variety", "--home", home, "--verbose")
    assert code == 0 and "command report" in err and "command" not in out


def test_settings_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = tmp_path / "walletscope.ini"
    cfg.write_text("[walletscope]\nhome = from-file\njobs = 4\nrules = file.rules\n")
    parser = build_parser()

    def settings(*argv, env=None):
        return resolve_settings(parser.parse_args(["report", *argv]), env or {})

    s = settings()
    assert (str(s.home), s.jobs, s.rules) == ("from-file", 4, "file.rules")
    s = settings(env={"WALLETSCOPE_HOME": "from-env", "WALLETSCOPE_RPC_URL": "http://x"})
    assert (str(s.home), s.rpc_url) == ("from-env", "http://x")
    s = settings("--home", "from-flag", "--jobs", "2", env={"WALLETSCOPE_HOME": "from-env"})
    assert (str(s.home), s.jobs) == ("from-flag", 2)
    cfg.unlink()
    s = settings()
    assert (str(s.home), s.jobs, s.rules) == ("walletscope-data", 1, None)
    other = tmp_path / "other.ini"
    other.write_text("[walletscope]\njobs = 3\n")
    assert settings("--config", str(other)).jobs == 3
