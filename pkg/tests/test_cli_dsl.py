import io
import json

import pytest

from fuzz import corpus, fuzz_inputs
from phgcalc import cli_dsl
from phgcalc.cli_dsl import (
    DslError,
    Options,
    Runner,
    build_arg_parser,
    format_script,
    main,
    options_from_args,
    parse,
    parse_grid,
    run,
)
from phgcalc.index_algebra import index_set


def run_text(text, **opts):
    return run(parse(text), Options(**opts))


def cli(tmp_path, text, *flags):
    path = tmp_path / "s.phg"
    path.write_text(text)
    out, err = io.StringIO(), io.StringIO()
    code = main([str(path), *flags], out, err)
    return code, out.getvalue(), err.getvalue()


def diag(text):
    with pytest.raises(DslError) as exc:
        run_text(text)
    return exc.value.diagnostic


# literals and printing ------------------------------------------------------------------

@pytest.mark.parametrize("src,value", [
    ("{(1/2,0)}", "{(1/2,0)}"),
    ("EU({(0,0)},{(0,0)})", "{(0,1)}"),
    ("INF + {(0,0)}", "INF"),
    ("shift({(1/2,1)}, -1/2)", "{(0,1)}"),
    ("conj({(1+1i,0)})", "{(1-1i,0)}"),
    ("trunc({(0,0)}, 1/2)", "{(1,0)}"),
    ("lead({(0,0),(2,3)})", "{(0,0)}"),
])
def test_print_literals(src, value):
    assert run_text(f"print {src}").strip().endswith(f"= {value}")


def test_print_family():
    out = run_text("let F = family P2(of={(0,0)}, ff={(1,0)}, if_eta=INF, if_x=INF)\nprint F")
    assert out.strip() == "F = of={(0,0)} ff={(1,0)} if_eta=INF if_x=INF"


def test_compose_verdict_lines():
    out = run_text("let P = ZeroInterior(lf={(1,0)}, rf={(0,0)}, ff0={(0,0)}, n=1)\ncompose P P")
    assert out.splitlines() == ["OK Thm compositions-involving-interior",
                                "  ZeroInterior lf={(1,0)} rf={(0,0)} ff0={(0,0)} n=1"]
    out = run_text("let T = trace(of={(0,0)}, ff={(0,0)})\nlet K = poisson(of={(-1,0)}, ff={(0,0)})\ncompose T K")
    assert out.startswith("FAIL ") and out.strip().endswith("Thm compositions-involving-boundary")


def test_adjoint_and_degree():
    out = run_text("let T = trace(of={(0,0)}, ff={(0,0)})\nadjoint T delta=-1/2")
    assert "ZeroPoisson of={(0,0)} ff={(-1,0)}" in out
    d = diag("let T = poisson(of={(0,0)}, ff={(0,1)})\ndegree T")
    assert "log-free" in d.message


def test_ledger_command():
    out = run_text(corpus()["ledger.phg"])
    assert "OK Thm main-theorem" in out
    for step in ("G1", "C1", "R'"):
        assert step in out


def test_no_rule_line():
    out = run_text("let B = Boundary(sym={(0,0)})\nlet K = poisson(of={(0,0)}, ff={(0,0)})\ncompose B K")
    assert out.startswith("NORULE")


# round trip ------------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(corpus()))
def test_round_trip_corpus(name):
    s = parse(corpus()[name])
    text = format_script(s)
    assert parse(text) == s
    assert format_script(parse(text)) == text


def test_round_trip_twists_and_ops():
    src = ("let s = twist[(1/2,2,-T), (0,1)]\nlet t = -s\n"
           "let N = op m=2 { (2,0):1, (0,0):-0.25, (0,(2,0)): -1 } eta=[1,0]\n"
           "let L = data m=2 n=2 roots=[(1/2,0),(-1/2,0)] delta=0 deltabar=1/2\n")
    s = parse(src)
    assert parse(format_script(s)) == s


def test_fuzz_no_crash():
    for text in fuzz_inputs(1000, seed=11):
        try:
            s = parse(text)
        except DslError as exc:
            assert exc.diagnostic.span.line >= 1 and exc.diagnostic.span.col >= 1
        else:
            assert parse(format_script(s)) == s


# diagnostics -------------------------------------------------------------------------------

def test_unbound_and_shadowed_names():
    d = diag("print A")
    assert "not bound" in d.message and (d.span.line, d.span.col) == (1, 7)
    assert "already bound" in diag("let A = {(0,0)}\nlet A = INF").message
    assert "reserved" in diag("let EU = {(0,0)}").message


def test_exactness_and_limits():
    assert "floats" in diag("print {(0.5,0)}").message
    assert "overflow" in diag("print {(" + "9" * 50 + ",0)}").message
    assert "nesting" in diag("print " + "conj(" * 100 + "{(0,0)}" + ")" * 100).message
    assert "zero denominator" in diag("print {(1/0,0)}").message
    assert "twist block size" in diag("let s = twist[(0,99)]").message


def test_diagnostic_format(tmp_path):
    code, out, err = cli(tmp_path, "print {(0,0)}\nprint {(0,0)\n")
    assert code == 1
    # a newline inside braces does not end the statement, so the error is at end of input
    assert err.strip().endswith("s.phg:3:1: error: expected '}', found end of input")


def test_class_arguments_checked():
    assert "needs" in diag("let T = trace(of={(0,0)})").message
    assert "no argument" in diag("let T = trace(of={(0,0)}, ff={(0,0)}, lf={(0,0)})").message
    assert "unknown operator kind" in diag("let T = trace(of={(0,0)}, ff={(0,0)})\ninclude T Nope").message


# flags, exit codes, output formats -------------------------------------------------------------

@pytest.mark.parametrize("argv,field,value", [
    (["s.phg", "--grid", "1e-12:1e3:2000"], "grid", (1e-12, 1e3, 2000)),
    (["s.phg", "--tol-asym", "1e-7", "--tol-solve", "1e-5"], "tol_asym", 1e-7),
    (["s.phg", "--json", "--seed", "4"], "seed", 4),
])
def test_flag_round_trips(argv, field, value):
    opts = options_from_args(build_arg_parser().parse_args(argv))
    assert getattr(opts, field) == value
    back = ["s.phg"]
    if opts.json:
        back.append("--json")
    back += ["--tol-asym", repr(opts.tol_asym), "--tol-solve", repr(opts.tol_solve), "--seed", str(opts.seed)]
    if opts.grid:
        back += ["--grid", ":".join(repr(v) for v in opts.grid)]
    assert options_from_args(build_arg_parser().parse_args(back)) == opts


def test_bad_grid_flag():
    with pytest.raises(Exception):
        parse_grid("1:2")


def test_exit_codes(tmp_path, monkeypatch):
    assert cli(tmp_path, "print {(0,0)}")[0] == 0
    assert cli(tmp_path, "print A")[0] == 1
    assert cli(tmp_path, "print {(0,0)}", "--bogus")[0] == 1
    out, err = io.StringIO(), io.StringIO()
    assert main([str(tmp_path / "missing.phg")], out, err) == 1

    def boom(self, script):
        raise RuntimeError("boom")

    monkeypatch.setattr(Runner, "run", boom)
    code, _, err = cli(tmp_path, "print {(0,0)}")
    assert code == 2 and "internal error" in err


def test_format_flag(tmp_path):
    code, out, _ = cli(tmp_path, "let   A={(0,0)}  ;print A", "--format")
    assert code == 0 and out == format_script(parse("let A = {(0,0)}\nprint A"))


def test_json_records(tmp_path):
    code, out, _ = cli(tmp_path, "print {(1/2,0)}\nlet P = ZeroInterior(lf={(1,0)}, rf={(0,0)}, ff0={(0,0)})\n"
                                 "compose P P", "--json")
    assert code == 0
    recs = [json.loads(line) for line in out.splitlines()]
    for r in recs:
        assert list(r) == ["command", "status", "kind", "family", "citations", "message", "data"]
    assert recs[0]["family"] == {"set": "{(1/2,0)}"}
    assert recs[1]["citations"] == ["compositions-involving-interior"]


def test_kernel_table_and_csv(tmp_path):
    text = "let N = op m=2 { (2,0):1, (0,0):-0.25, (0,(2)):1 } eta=[1]\nkernel N delta=-1\n"
    code, out, _ = cli(tmp_path, text, "--csv", str(tmp_path))
    assert code == 0 and out.startswith("kernel dim=1 delta=-1")
    files = list(tmp_path.glob("kernel_line*.csv"))
    assert len(files) == 1 and files[0].read_text().count("\n") > 100


def test_corpus_runs_cleanly(tmp_path):
    for name, text in corpus().items():
        if name == "bessel.phg":
            continue
        code, out, err = cli(tmp_path, text)
        assert code == 0, (name, err)


def test_index_set_printing_is_canonical():
    out = run_text("print {(3/2,1),(1/2,0),(1,0)}")
    assert out.strip().endswith("= " + str(index_set("{(1/2,0),(1,0),(3/2,1)}")))


def test_module_entry_point_exists():
    assert callable(cli_dsl.main)
