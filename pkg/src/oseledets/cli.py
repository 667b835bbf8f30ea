"""
``oseledets run``: configure a system, run the pipeline stages implied by
the command and write JSON/CSV reports plus a manifest.

Exit codes: 0 success, 1 other numerical failure, 2 bad configuration,
3 spectrum clustering or splitting dimension failure (raise the horizon),
4 no Lambda_l level reaches the requested measure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys as _sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .cocycle import CocycleSystem, adjoint_cocycle, system_from_dict
from .errors import (
    BadParams,
    ClusterAmbiguity,
    DimensionCollapse,
    OseledetsError,
    PairTooFar,
    TooFewPairs,
    UnknownSystem,
    Unreachable,
)
from .holder import (
    HOLDER_COLUMNS,
    build_lambda_set,
    brin_consistency,
    choose_level,
    cocycle_holder_check,
    collect_pairs,
    _pair_indices,
    fit_power_law,
    holder_row,
    intersect_lambda_sets,
    pairs_csv,
)
from .io import ArrayCache, RunConfig, cache_key, dumps_json, write_bundle
from .met import (
    SpectrumReport,
    SplittingField,
    duality_residuals,
    lyapunov_spectrum,
    sample_with_residuals,
    splitting_field,
)
from .regularity import (
    default_epsilon,
    dichotomy_check,
    dichotomy_params,
    hyperbolic_split,
    profiles_to_csv,
    regularity_profiles,
)
from .subspace import Subspace

CHUNK = 64
BRIN_PAIRS = 100


def _fmt_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


class Pipeline:
    """Stage runner with caching of spectra and splitting fields."""

    def __init__(self, cfg: RunConfig, cache: ArrayCache):
        self.cfg = cfg
        self.cache = cache
        self.sys: CocycleSystem = system_from_dict(cfg.system)
        self.timings: dict = {}
        self.notes: dict = {}
        self._spectrum = None

    # -- helpers --

    def _timed(self, name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    def _map(self, fn, points):
        chunks = [points[i:i + CHUNK] for i in range(0, len(points), CHUNK)]
        if self.cfg.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.cfg.threads) as ex:
                return list(ex.map(fn, chunks))
        return [fn(c) for c in chunks]

    @property
    def x0(self) -> np.ndarray:
        if self.cfg.x is not None:
            x = np.array(self.cfg.x, dtype=float)
            if x.shape != (self.sys.k,):
                raise BadParams(f"x must have {self.sys.k} coordinates")
            return x
        return self.sys.sample(1, 0)[0]

    @property
    def points(self) -> np.ndarray:
        return self.sys.sample(self.cfg.samples, 1)

    def spectrum(self, adjoint: bool = False) -> SpectrumReport:
        if not adjoint and self._spectrum is not None:
            return self._spectrum
        sys = adjoint_cocycle(self.sys) if adjoint else self.sys
        key = cache_key("spectrum", sys.spec, self.x0, self.cfg.horizon)
        hit = self.cache.get(key)
        if hit is not None:
            rep = SpectrumReport.from_dict(json.loads(str(hit["report"])))
        else:
            rep = self._timed("spectrum", lyapunov_spectrum, sys, self.x0, self.cfg.horizon)
            self.cache.put(key, {"report": np.array(json.dumps(rep.to_dict()))})
        if not adjoint:
            self._spectrum = rep
        return rep

    def field(self, points, n_back=0, n_fwd=0) -> SplittingField:
        sp = self.spectrum()
        key = cache_key("field", self.sys.spec, points, self.cfg.horizon, n_back, n_fwd,
                        sp.to_dict())
        hit = self.cache.get(key)
        if hit is None:
            def job(chunk):
                return splitting_field(self.sys, chunk, sp, self.cfg.horizon, n_back, n_fwd)

            parts = self._timed("splitting", self._map, job, points)
            arrays = {
                "points": np.concatenate([p.points for p in parts], axis=1),
                "slow": np.concatenate([p.slow for p in parts], axis=1),
                "fast": np.concatenate([p.fast for p in parts], axis=1),
            }
            for j in range(sp.k):
                arrays[f"space{j}"] = np.concatenate([p.spaces[j] for p in parts], axis=1)
            self.cache.put(key, arrays)
            hit = arrays
        spaces = [hit[f"space{j}"] for j in range(sp.k)]
        return SplittingField(hit["points"], hit["slow"], hit["fast"], spaces, sp, n_back)

    def epsilon(self) -> float:
        if self.cfg.epsilon == "auto":
            eps = default_epsilon(self.spectrum())
            self.notes["epsilon"] = {"requested": "auto", "value": eps,
                                     "rule": "one fifth of the smallest exponent gap"}
            return eps
        return float(self.cfg.epsilon)

    def split_indices(self):
        k = self.spectrum().k
        if k < 2:
            raise BadParams("a single Lyapunov exponent has nothing to split")
        if self.cfg.split_index == "all":
            return list(range(1, k))
        i = int(self.cfg.split_index)
        if not 1 <= i < k:
            raise BadParams(f"split_index must lie in [1, {k - 1}]")
        return [i]

    def profiles(self, i, eps):
        pts = self.points
        fld = self.field(pts, 0, self.cfg.horizon)
        sp = self.spectrum()

        def job(sl):
            sub = SplittingField(fld.points[:, sl], fld.slow[:, sl], fld.fast[:, sl],
                                 [E[:, sl] for E in fld.spaces], sp, 0)
            return regularity_profiles(self.sys, pts[sl], i, eps, self.cfg.horizon, sp, field=sub)

        slices = [slice(a, a + CHUNK) for a in range(0, len(pts), CHUNK)]
        t0 = time.perf_counter()
        if self.cfg.threads > 1 and len(slices) > 1:
            with ThreadPoolExecutor(self.cfg.threads) as ex:
                parts = list(ex.map(job, slices))
        else:
            parts = [job(s) for s in slices]
        self.timings["regularity"] = self.timings.get("regularity", 0.0) + time.perf_counter() - t0
        return [p for part in parts for p in part]

    # -- stages --

    def stage_spectrum(self, files):
        sp = self.spectrum()
        files["spectrum.json"] = dumps_json({
            "system": self.sys.spec, "x": self.x0.tolist(), "spectrum": sp.to_dict(),
        })

    def stage_splitting(self, files):
        fld = self.field(self.points, 0, 1)
        samples = [sample_with_residuals(self.sys, fld, b) for b in range(fld.points.shape[1])]
        files["splitting.json"] = dumps_json({
            "system": self.sys.spec,
            "spectrum": self.spectrum().to_dict(),
            "samples": [s.to_dict() for s in samples],
        })
        return samples

    def stage_verify(self, files, samples):
        sp = self.spectrum()
        adj = self.spectrum(adjoint=True)
        eq = [v for s in samples for v in s.residuals["equivariance"]]
        rec = [s.residuals["reconstruction"] for s in samples]
        dual = self._timed("verify", duality_residuals, self.sys, self.points, sp, adj, self.cfg.horizon)
        fin = [(a, b) for a, b in zip(sp.exponents, adj.exponents) if np.isfinite(a) and np.isfinite(b)]
        files["verify.json"] = dumps_json({
            "max_equivariance_residual": float(max(eq)),
            "max_duality_residual": float(np.max(dual)),
            "max_reconstruction_residual": float(max(rec)),
            "adjoint_spectrum": adj.to_dict(),
            "max_exponent_mismatch": float(max((abs(a - b) for a, b in fin), default=0.0)),
            "points": len(samples),
        })

    def stage_regularity(self, files, eps):
        profiles = {}
        for i in self.split_indices():
            profiles[i] = self.profiles(i, eps)
        files["regularity.csv"] = profiles_to_csv([p for i in profiles for p in profiles[i]])
        return profiles

    def stage_holder(self, files, eps, profiles):
        sp = self.spectrum()
        k = sp.k
        levels, sets = {}, {}
        for s, profs in profiles.items():
            levels[s] = choose_level(profs, self.cfg.delta)
            sets[s] = build_lambda_set(profs, levels[s], self.cfg.delta)
        fld = self.field(self.points, 0, self.cfg.horizon)
        pts = self.points
        index = {tuple(float(v) for v in p): b for b, p in enumerate(pts)}
        rows, pair_text, estimates = [], [], {}
        wanted = range(1, k + 1) if self.cfg.split_index == "all" else sorted(
            {self.cfg.split_index, self.cfg.split_index + 1})
        for i in wanted:
            splits = [s for s in (i - 1, i) if s in sets]
            if not splits:
                continue
            lam = sets[splits[0]]
            for s in splits[1:]:
                lam = intersect_lambda_sets(lam, sets[s])
            idx = [index[p.point] for p in lam.members]
            samples = [(pts[b], Subspace(fld.spaces[i - 1][0, b])) for b in idx]
            level = max(levels[s] for s in splits)
            try:
                table = collect_pairs(samples, self.sys.rho, self.cfg.eps0)
                est = fit_power_law(table.rho, table.dist, self.cfg.eps0)
            except TooFewPairs as exc:
                estimates[i] = {"skipped": str(exc), "level": level}
                continue
            rows.append(holder_row(i, level, self.cfg.delta, est))
            pair_text.append(pairs_csv(table, i))
            estimates[i] = {"level": level, "measure": lam.empirical_measure, "beta": est.beta,
                            "L": est.L_const, "r2": est.r2, "pair_count": est.pair_count,
                            "zero_distances": est.zero_distances}
        brin = {s: self._brin(s, sets[s], levels[s], eps, fld) for s in sets}
        files["holder.csv"] = _fmt_csv(HOLDER_COLUMNS, rows)
        header, *rest = (pair_text[0].splitlines(keepends=True) if pair_text else ["x,y,rho,d_subspace,i\n"])
        body = "".join(rest) + "".join("".join(t.splitlines(keepends=True)[1:]) for t in pair_text[1:])
        files["pairs.csv"] = header + body
        files["holder.json"] = dumps_json({
            "levels": {str(s): levels[s] for s in levels},
            "measures": {str(s): sets[s].empirical_measure for s in sets},
            "estimates": {str(i): v for i, v in estimates.items()},
            "brin": {str(s): v for s, v in brin.items()},
            "brin_slack": "ok means observed <= 2 x bound; the factor 2 absorbs finite-horizon error",
        })

    def _brin(self, s, lam_set, level, eps, fld):
        pts = lam_set.points
        if len(pts) < 2:
            return {"skipped": "fewer than two members"}
        iu, ju, rho = _pair_indices(pts, self.sys.rho, min(self.cfg.eps0, 0.1), 10**9)
        if len(rho) == 0:
            return {"skipped": "no pairs within eps0"}
        pick = np.unique(np.linspace(0, len(rho) - 1, min(BRIN_PAIRS, len(rho))).round().astype(int))
        pairs = [(pts[iu[p]], pts[ju[p]]) for p in pick]
        C_hat, nu_hat = cocycle_holder_check(self.sys, pairs, min(20, self.cfg.horizon))
        ok, far = [], 0
        for x, y in pairs:
            try:
                r = brin_consistency(self.sys, x, y, s, self.cfg.horizon, level, self.spectrum(), eps, C_hat)
            except PairTooFar:
                far += 1
                continue
            ok.append(r["ok"])
        return {"pairs": len(pairs), "certified": len(ok), "too_far": far,
                "pass_rate": float(np.mean(ok)) if ok else None, "C_hat": C_hat, "nu_hat": nu_hat}

    def stage_dichotomy(self, files, eps):
        sp = self.spectrum()
        i = hyperbolic_split(sp)
        pts = self.points
        W = self.cfg.window
        profs = self.profiles(i, eps)
        fld = self.field(pts, W, W)
        out = []
        for b, prof in enumerate(profs):
            sub = SplittingField(fld.points[:, b:b + 1], fld.slow[:, b:b + 1], fld.fast[:, b:b + 1],
                                 [E[:, b:b + 1] for E in fld.spaces], sp, W)
            par = dichotomy_params(prof, sp, W)
            rep = dichotomy_check(self.sys, pts[b], sub, par, i, sp)
            out.append({"x": pts[b].tolist(), "D": par.D, "lambda_rate": par.lambda_rate,
                        "epsilon": par.epsilon, **rep})
        files["dichotomy.json"] = dumps_json({
            "split_index": i, "window": W,
            "pass_rate": float(np.mean([r["holds"] for r in out])),
            "points": out,
        })

    def run(self) -> dict:
        cmd = self.cfg.command
        files: dict = {}
        self.stage_spectrum(files)
        if cmd == "spectrum":
            return files
        if cmd in ("splitting", "verify"):
            samples = self.stage_splitting(files)
            if cmd == "verify":
                self.stage_verify(files, samples)
            return files
        eps = self.epsilon()
        if cmd == "dichotomy":
            self.stage_dichotomy(files, eps)
            return files
        profiles = self.stage_regularity(files, eps)
        if cmd == "holder":
            self.stage_holder(files, eps, profiles)
        return files


def run(cfg: RunConfig, cache: ArrayCache | None = None) -> dict:
    """Run the pipeline and write the bundle; returns the manifest."""
    cache = cache if cache is not None else ArrayCache(enabled=cfg.cache)
    pipe = Pipeline(cfg, cache)
    t0 = time.perf_counter()
    files = pipe.run()
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "resolved": pipe.notes,
        "stages": {k: round(v, 6) for k, v in sorted(pipe.timings.items())},
        "wall_clock": round(time.perf_counter() - t0, 6),
        "cache": {"enabled": cache.enabled, "hits": cache.hits, "misses": cache.misses},
    }
    write_bundle(cfg.output_dir, files, manifest)
    return dict(manifest, files=sorted(files))


# --- argument handling ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oseledets", description=__doc__.splitlines()[1])
    sub = ap.add_subparsers(dest="action", required=True)
    r = sub.add_parser("run", help="run a pipeline")
    r.add_argument("--config", help="JSON configuration file; flags override its fields")
    r.add_argument("--system", help="built-in system name")
    r.add_argument("--A", dest="A", help='matrix for the constant system, e.g. "2,0;0,0.5"')
    r.add_argument("--params", help="JSON object of system parameters")
    r.add_argument("--seed", type=int)
    r.add_argument("--command", choices=["spectrum", "splitting", "verify", "regularity", "holder", "dichotomy"])
    r.add_argument("--horizon", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--delta", type=float)
    r.add_argument("--epsilon", help='positive number or "auto"')
    r.add_argument("--split-index", dest="split_index", help='integer or "all"')
    r.add_argument("--eps0", type=float)
    r.add_argument("--window", type=int)
    r.add_argument("--x", help="comma-separated base point for the spectrum stage")
    r.add_argument("--output-dir", dest="output_dir")
    r.add_argument("--cache", dest="cache", action="store_true", default=None)
    r.add_argument("--no-cache", dest="cache", action="store_false")
    r.add_argument("--threads", type=int)
    return ap


def config_from_args(ns) -> RunConfig:
    doc: dict = {}
    if ns.config:
        with open(ns.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise BadParams("configuration must be a JSON object")
    system = dict(doc.get("system", {}))
    if ns.system:
        if system.get("name") not in (None, ns.system):
            system = {}
        system["name"] = ns.system
    if ns.params:
        system["params"] = {**system.get("params", {}), **json.loads(ns.params)}
    if ns.A:
        system.setdefault("params", {})["A"] = ns.A
    if ns.seed is not None:
        system["seed"] = ns.seed
    if system:
        doc["system"] = system
    for key in ("command", "horizon", "samples", "delta", "eps0", "window", "output_dir", "cache", "threads"):
        val = getattr(ns, key)
        if val is not None:
            doc[key] = val
    if ns.epsilon is not None:
        doc["epsilon"] = ns.epsilon if ns.epsilon == "auto" else float(ns.epsilon)
    if ns.split_index is not None:
        doc["split_index"] = ns.split_index if ns.split_index == "all" else int(ns.split_index)
    if ns.x is not None:
        doc["x"] = [float(v) for v in ns.x.split(",")]
    cfg = RunConfig.from_dict(doc)
    system_from_dict(cfg.system)  # surface unknown names and bad params now
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (OSError, json.JSONDecodeError, BadParams, UnknownSystem, ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    try:
        manifest = run(cfg)
    except (ClusterAmbiguity, DimensionCollapse) as exc:
        print(f"error: {exc}\nhint: increase horizon", file=_sys.stderr)
        return 3
    except Unreachable as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 4
    except BadParams as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    except OseledetsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 1
    print(json.dumps({"output_dir": cfg.output_dir, "files": manifest["files"],
                      "wall_clock": manifest["wall_clock"]}))
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
