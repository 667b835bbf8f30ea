import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from oseledets import io as oio
from oseledets.cli import main, run
from oseledets.io import CONFIG_SCHEMA, ArrayCache, RunConfig, cache_key

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    d = tmp_path / "cache"
    monkeypatch.setenv("OSELEDETS_CACHE_DIR", str(d))
    return d


def outputs(path):
    # everything but the manifest, which carries timings
    return {p.name: p.read_bytes() for p in sorted(Path(path).iterdir()) if p.name != "manifest.json"}


def cfg(tmp_path, name, **kw):
    doc = {"system": {"name": "rotation_triangular"}, "command": "verify", "horizon": 400,
           "samples": 10, "output_dir": str(tmp_path / name), "threads": 1}
    doc.update(kw)
    return RunConfig.from_dict(doc)


def test_constant_spectrum(tmp_path, capsys):
    out = tmp_path / "spec"
    code = main(["run", "--system", "constant", "--A", "2,0;0,0.5", "--command", "spectrum",
                 "--horizon", "100", "--output-dir", str(out), "--no-cache"])
    assert code == 0
    doc = json.loads((out / "spectrum.json").read_text())
    exps = doc["spectrum"]["exponents"]
    assert exps == pytest.approx([-math.log(2), math.log(2)], abs=1e-9)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"] == ["spectrum.json"]
    assert json.loads(capsys.readouterr().out)["files"] == ["spectrum.json"]


def test_verify_fields(tmp_path):
    out = tmp_path / "verify"
    assert main(["run", "--system", "rotation_triangular", "--command", "verify", "--horizon", "400",
                 "--samples", "5", "--output-dir", str(out), "--no-cache"]) == 0
    doc = json.loads((out / "verify.json").read_text())
    assert doc["max_equivariance_residual"] <= 1e-6
    assert doc["max_duality_residual"] <= 1e-2


def test_manifest_lists_every_file(tmp_path):
    manifest = run(cfg(tmp_path, "reg", command="regularity", samples=5, horizon=200, cache=False))
    out = tmp_path / "reg"
    on_disk = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    assert manifest["files"] == on_disk
    for name in on_disk:
        text = (out / name).read_text()
        if name.endswith(".json"):
            json.loads(text)
        else:
            rows = text.strip().splitlines()
            assert len({len(r.split(",")) for r in rows}) == 1
    assert "epsilon" in json.dumps(manifest["resolved"])


def test_malformed_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    out = tmp_path / "never"
    assert main(["run", "--config", str(bad), "--output-dir", str(out)]) == 2
    assert not out.exists()
    assert "configuration error" in capsys.readouterr().err


@pytest.mark.parametrize("doc", [
    {"system": {"name": "rotation_triangular"}, "command": "spectrum", "horizon": 5},
    {"system": {"name": "rotation_triangular"}, "command": "spectrum", "delta": 1.5},
    {"system": {"name": "henon"}, "command": "spectrum"},
    {"system": {"name": "constant"}, "command": "fly"},
])
def test_invalid_configs_exit_2(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "never"
    assert main(["run", "--config", str(path), "--output-dir", str(out)]) == 2
    assert not out.exists()


def test_config_file_matches_flags(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"system": {"name": "constant", "params": {"A": "2,0;0,0.5"}},
                                "command": "spectrum", "horizon": 100, "cache": False}))
    assert main(["run", "--config", str(path), "--output-dir", str(tmp_path / "a")]) == 0
    assert main(["run", "--system", "constant", "--A", "2,0;0,0.5", "--command", "spectrum",
                 "--horizon", "100", "--no-cache", "--output-dir", str(tmp_path / "b")]) == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")


def test_stochastic_dichotomy_exits_1(tmp_path, capsys):
    out = tmp_path / "dich"
    code = main(["run", "--system", "rotation_stochastic", "--command", "dichotomy", "--horizon", "300",
                 "--samples", "3", "--window", "10", "--output-dir", str(out), "--no-cache"])
    assert code == 1
    assert "NotHyperbolic" in capsys.readouterr().err


# --- determinism and cache --------------------------------------------------------------


def test_determinism(tmp_path):
    run(cfg(tmp_path, "a", cache=False))
    run(cfg(tmp_path, "b", cache=False))
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")


def test_thread_count_does_not_change_numbers(tmp_path):
    run(cfg(tmp_path, "one", cache=False))
    run(cfg(tmp_path, "four", cache=False, threads=4))
    assert outputs(tmp_path / "one") == outputs(tmp_path / "four")


def test_cache_hit_is_faster_and_identical(tmp_path, cache_dir):
    heavy = dict(horizon=2000, samples=20)
    t0 = time.perf_counter()
    first = run(cfg(tmp_path, "cold", **heavy))
    cold = time.perf_counter() - t0
    t0 = time.perf_counter()
    second = run(cfg(tmp_path, "warm", **heavy))
    warm = time.perf_counter() - t0
    assert first["cache"]["hits"] == 0 and second["cache"]["misses"] == 0
    assert second["cache"]["hits"] > 0
    assert warm * 2 <= cold
    run(cfg(tmp_path, "off", cache=False, **heavy))
    assert outputs(tmp_path / "cold") == outputs(tmp_path / "warm") == outputs(tmp_path / "off")
    assert any(cache_dir.iterdir())


def test_corrupt_entry_is_recomputed(tmp_path, cache_dir):
    run(cfg(tmp_path, "a"))
    for p in cache_dir.glob("*.npz"):
        p.write_bytes(b"garbage")
    manifest = run(cfg(tmp_path, "b"))
    assert manifest["cache"]["hits"] == 0
    assert outputs(tmp_path / "a") == outputs(tmp_path / "b")
    # damaged entries were replaced by good ones
    assert run(cfg(tmp_path, "c"))["cache"]["misses"] == 0


def test_version_bump_invalidates(tmp_path, monkeypatch):
    run(cfg(tmp_path, "a"))
    monkeypatch.setattr(oio, "__version__", "999.0")
    manifest = run(cfg(tmp_path, "b"))
    assert manifest["cache"]["hits"] == 0


def test_cache_roundtrip_is_bitwise(tmp_path):
    c = ArrayCache(tmp_path / "c")
    arr = np.random.default_rng(0).standard_normal((3, 4))
    key = cache_key("x", arr)
    assert c.get(key) is None
    c.put(key, {"a": arr})
    assert np.array_equal(c.get(key)["a"], arr)
    nudged = arr.copy()
    nudged[0, 0] = np.nextafter(nudged[0, 0], np.inf)
    assert cache_key("x", arr) != cache_key("x", nudged)
    assert ArrayCache(tmp_path / "c", enabled=False).get(key) is None


# --- config plumbing ------------------------------------------------------------------------


def test_shipped_schema_matches():
    shipped = json.loads((ROOT / "docs" / "config.schema.json").read_text())
    assert shipped == CONFIG_SCHEMA


def test_config_roundtrip():
    c = RunConfig.from_dict({"system": {"name": "constant"}, "command": "spectrum", "x": [0]})
    assert c.system == {"name": "constant", "params": {}, "seed": 0}
    assert c.x == (0.0,)
    again = RunConfig.from_dict({k: v for k, v in c.to_dict().items() if v is not None})
    assert again == c
