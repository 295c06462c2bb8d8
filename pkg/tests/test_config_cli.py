import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fenepoly.cli import (DIAG_HEADER, ParseError, ValidationError, load_config, main, parse_config,
                          read_diagnostics, read_field_dump, serialize_config, write_diagnostics)
from fenepoly.model_core import LTWarning
from fenepoly.runner import build_initial_state, build_problem, check_energy

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BASE = (CONFIGS / "equilibrium.yaml").read_text()


def _set(section, key, value):
    import yaml
    doc = yaml.safe_load(BASE)
    doc[section][key] = value
    return yaml.safe_dump(doc)


@pytest.mark.parametrize("section, key, value, field, rule", [
    ("model", "gamma", 1.4, "gamma", "requires γ > 3/2"),
    ("chain", "b", [2.0], "b", "requires b_i > 2"),
    ("model", "z", 0, "z", "𝔷 > 0 required"),
])
def test_validation_examples(section, key, value, field, rule):
    with pytest.raises(ValidationError) as exc:
        parse_config(_set(section, key, value))
    assert (field, rule) in exc.value.errors


def test_validation_reports_every_violation():
    import yaml
    doc = yaml.safe_load(BASE)
    doc["model"]["gamma"] = 1.2
    doc["model"]["mu_s"] = 0.0
    doc["regularization"]["L"] = 0.5
    doc["regularization"]["delta"] = 1.0
    with pytest.raises(ValidationError) as exc:
        parse_config(yaml.safe_dump(doc))
    fields = {f for f, _ in exc.value.errors}
    assert len(exc.value.errors) >= 4 and "gamma" in fields
    assert all(rule for _, rule in exc.value.errors)


def test_parse_error_line():
    text = "model: {gamma: 2.0}\nchain:\n  b: [4.0\n  K: 1\n"
    with pytest.raises(ParseError) as exc:
        parse_config(text)
    assert exc.value.line >= 3
    with pytest.raises(ParseError):
        parse_config("- just\n- a list\n")


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError):
        parse_config(BASE + "extra: {a: 1}\n")
    with pytest.raises(ValidationError):
        parse_config(_set("grid", "nxx", 4))


def test_lt_warning_at_parse():
    with pytest.warns(LTWarning):
        parse_config(_set("time", "N", 1).replace("T: 0.1", "T: 1.0"))


def test_rouse_linear_chain_expands():
    import yaml
    doc = yaml.safe_load(BASE)
    doc["chain"].update(K=3, b=[4.0])
    cfg = parse_config(yaml.safe_dump(doc), warn=False)
    A = np.asarray(cfg.chain_params().rouse)
    assert np.array_equal(A, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])
    assert cfg.model_params().Gamma == 8.0


@given(gamma=st.floats(1.51, 10), mu_s=st.floats(0.01, 10), z=st.floats(0.001, 5), L=st.floats(1.01, 100),
       delta=st.floats(0, 0.99), nx=st.integers(4, 64), N=st.integers(1, 10 ** 5), b=st.floats(2.01, 50),
       amp=st.floats(-0.04, 0.04), kind=st.sampled_from(["none", "const", "lid"]))
def test_round_trip(gamma, mu_s, z, L, delta, nx, N, b, amp, kind):
    import yaml
    doc = yaml.safe_load(BASE)
    doc["model"].update(gamma=gamma, mu_s=mu_s, z=z)
    doc["regularization"].update(L=L, delta=delta)
    doc["grid"]["nx"] = nx
    doc["time"]["N"] = N
    doc["chain"]["b"] = [b]
    doc["init"]["psi0"] = {"kind": "perturbation", "amplitude": amp, "kx": 1, "ky": 0, "q_mode": "xy"}
    doc["forcing"] = {"kind": kind, "value": [0.5, -0.25], "amplitude": 1.0, "width": 0.1}
    cfg = parse_config(yaml.safe_dump(doc), warn=False)
    assert parse_config(serialize_config(cfg), warn=False) == cfg


def test_diagnostics_header_and_empty_run(tmp_path):
    p = write_diagnostics([], tmp_path / "d.csv")
    assert p.read_text() == ",".join(DIAG_HEADER) + "\n"
    assert ",".join(DIAG_HEADER) == ("step,t,kinetic,internal,entropy,interaction,dissipation,work,total,residual,"
                                    "pass,mass_rho_err,mass_psi_err,min_rho,min_psi,picard_iters")


@pytest.fixture(scope="module")
def equilibrium_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("eq")
    assert main(["simulate", str(CONFIGS / "equilibrium.yaml"), "--out", str(out)]) == 0
    return out


def test_simulate_outputs(equilibrium_run):
    rows = read_diagnostics(equilibrium_run / "diagnostics.csv")
    assert [r["step"] for r in rows] == list(range(11))
    assert all(r["pass"] in (0, 1) for r in rows) and all(r["pass"] == 1 for r in rows[1:])
    summary = json.loads((equilibrium_run / "summary.json").read_text())
    assert summary["completed"] and summary["pass_fraction"] == 1.0
    psi, meta = read_field_dump(equilibrium_run / "dumps" / "step_000003", "psi")
    assert list(psi.shape) == [8, 8, 16, 16] and meta["byte_order"] == "LE" and meta["dtype"] == "f64"
    assert meta["t"] == rows[3]["t"] and meta["step"] == 3


def test_step0_total_cross_path(equilibrium_run):
    """Total energy at step 0 recomputed from the dumped fields with a hand-written formula."""
    cfg = load_config(equilibrium_run / "config.yaml")
    d = equilibrium_run / "dumps" / "step_000000"
    rho, _ = read_field_dump(d, "rho")
    ux, _ = read_field_dump(d, "ux")
    uy, _ = read_field_dump(d, "uy")
    psi, _ = read_field_dump(d, "psi")
    vr, _ = read_field_dump(d, "varrho")
    pb = build_problem(cfg)
    V = pb.omega.vol
    m, r = cfg.model, cfg.regularization
    G = max(m.gamma, 8.0)
    P = m.c_p * rho ** m.gamma / (m.gamma - 1) + r.kappa * (rho ** 4 / 3 + rho ** G / (G - 1))
    p = np.maximum(psi.reshape(rho.size, -1), 1e-300)
    F = np.where(psi.reshape(rho.size, -1) > 0, p * (np.log(p) - 1) + 1, 1.0)
    kinetic = 0.5 * V * (np.sum(rho * ux ** 2) + np.sum(rho * uy ** 2))
    total = kinetic + V * P.sum() + m.k * V * np.sum(F @ pb.cfg.W) + m.z * V * np.sum(vr ** 2)
    row0 = read_diagnostics(equilibrium_run / "diagnostics.csv")[0]
    assert abs(row0["total"] - total) <= 1e-12 * max(1.0, abs(total))


def test_dump_round_trip_bitwise(tmp_path):
    from fenepoly.output import write_field_dump
    cfg = parse_config(BASE)
    pb = build_problem(cfg)
    s = build_initial_state(cfg, pb)
    s.psi = s.psi + np.random.default_rng(7).standard_normal(s.psi.shape)
    write_field_dump(s, tmp_path, pb.omega, pb.cfg)
    psi, meta = read_field_dump(tmp_path, "psi")
    assert np.array_equal(psi.reshape(s.psi.shape), s.psi)
    assert meta["shape"] == [8, 8, 16, 16]
    raw = np.fromfile(tmp_path / "rho.f64", dtype="<f8")
    assert np.array_equal(raw, s.rho)


def test_check_energy_cli(equilibrium_run, capsys):
    assert main(["check-energy", str(equilibrium_run)]) == 0
    rep = check_energy(equilibrium_run)
    assert rep["steps_checked"] == 10 and not rep["mismatches"]


def test_check_energy_detects_tampering(equilibrium_run, tmp_path):
    import shutil
    run = tmp_path / "run"
    shutil.copytree(equilibrium_run, run)
    lines = (run / "diagnostics.csv").read_text().splitlines()
    cols = lines[5].split(",")
    cols[DIAG_HEADER.index("total")] = repr(float(cols[DIAG_HEADER.index("total")]) + 1e-3)
    lines[5] = ",".join(cols)
    (run / "diagnostics.csv").write_text("\n".join(lines) + "\n")
    assert main(["check-energy", str(run)]) == 1


def test_simulate_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(_set("model", "gamma", 1.4))
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_simulate_threshold(tmp_path):
    cfgp = tmp_path / "c.yaml"
    cfgp.write_text(_set("time", "N", 2).replace("T: 0.1", "T: 0.02"))
    assert main(["simulate", str(cfgp), "--out", str(tmp_path / "o"), "--threshold", "1.0"]) == 0


def test_selftest_quick(capsys):
    assert main(["selftest", "--quick", "--seed", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5 and all(line.startswith("PASS") for line in out)
