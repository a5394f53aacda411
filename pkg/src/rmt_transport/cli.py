"""rmt-transport: configuration-driven runs of the toolkit.

    rmt-transport <task> --config cfg.yaml [--seed S] [--out DIR] [--workers W] [--force]

Tasks: equilibrium, sd-moments, transport, sample, stats, pipeline.  Each
task writes into DIR/<task>/ its numeric outputs plus manifest.json (config
hash, package versions, wall time).  Numeric outputs depend only on the
config and the seed.  RMT_TRANSPORT_CACHE, when set, names a directory where
sampled eigenvalues and series results are reused across runs.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import copy
import hashlib
import json
import os
import platform
import shutil
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from . import ensemble as en
from . import equilibrium as eq
from . import localstats as ls
from . import ncalg as nc
from . import transport as tr

TASKS = ("equilibrium", "sd-moments", "transport", "sample", "stats", "pipeline")
CACHE_ENV = "RMT_TRANSPORT_CACHE"

DEFAULTS = {
    "model": {"d": 1, "beta": 2},
    "numerics": {"N": 200, "n_grid": 64, "t_nodes": 8, "D_max": 6, "n_max": 8,
                 "reference_samples": 100, "target_samples": 100, "flow_order": 0},
    "stats": {"bulk_fraction": 0.2, "ks_bulk": 0.05, "ks_edge": 0.07, "ks_smallest": 0.08,
              "rigidity_theta": 0.4, "rigidity_min": 0.99, "smallest_interval": [-1.0, 1.0]},
    "seed": 0,
}


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- config


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _need(cond, field, msg):
    if not cond:
        raise ConfigError(f"config field '{field}': {msg}")


def load_config(path) -> tuple:
    text = Path(path).read_text()
    raw = yaml.safe_load(text) or {}
    _need(isinstance(raw, dict), "<root>", "must be a mapping")
    unknown = set(raw) - {"model", "numerics", "stats", "seed", "sample", "words"}
    _need(not unknown, sorted(unknown)[0] if unknown else "", "unknown section")
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    # hash the parsed content so comments and layout do not matter
    canon = json.dumps(raw, sort_keys=True, default=str)
    return cfg, hashlib.sha256(canon.encode()).hexdigest()


def validate(cfg):
    m = cfg["model"]
    _need(isinstance(m.get("d"), int) and m["d"] >= 1, "model.d", "positive integer required")
    _need(m.get("beta") in (1, 2), "model.beta", "must be 1 or 2")
    d = m["d"]
    if "W" in m:
        _need(isinstance(m["W"], list) and len(m["W"]) == d, "model.W", f"list of {d} coefficient lists")
    if "P" in m:
        _need(isinstance(m["P"], list) and len(m["P"]) == d, "model.P", f"list of {d} polynomials")
        _need("eps" in m, "model.eps", "required with model.P")
    if "V" in m:
        _need(isinstance(m["V"], dict), "model.V", "mapping monomial -> coefficient")
        _need("a" in m, "model.a", "required with model.V")
    if "interaction" in m:
        it = m["interaction"]
        _need(isinstance(it, dict) and isinstance(it.get("terms"), list), "model.interaction.terms",
              "list of {c, factors}")
    n = cfg["numerics"]
    _need(isinstance(n["N"], int) and n["N"] >= 2, "numerics.N", "integer >= 2")
    for key in ("reference_samples", "target_samples", "n_grid", "t_nodes", "D_max", "n_max"):
        _need(isinstance(n[key], int) and n[key] >= 1, f"numerics.{key}", "positive integer required")
    _need(n["flow_order"] in (0, 1), "numerics.flow_order", "must be 0 or 1")
    _need(isinstance(cfg["seed"], int), "seed", "explicit integer seed required")


def x_poly(spec: dict, d: int) -> nc.NCPoly:
    mono = {}
    for k, c in spec.items():
        toks = tuple(str(k).split())
        for tok in toks:
            _need(tok[0] in "xb" and tok[1:].isdigit() and 1 <= int(tok[1:]) <= (d if tok[0] == "x" else 99),
                  "model polynomial", f"bad monomial {k!r}")
        mono[toks] = mono.get(toks, 0.0) + float(c)
    return nc.poly_in_x(mono, d)


def potentials(cfg) -> list:
    m = cfg["model"]
    W = m.get("W") or [[0.0, 0.0, 0.25 * m["beta"]]] * m["d"]
    return [eq.polynomial_potential(w) for w in W]


def interaction(cfg):
    m = cfg["model"]
    it = m.get("interaction")
    if not it:
        return None
    terms = [(t["c"], [(f["k"], f["poly"]) for f in t["factors"]]) for t in it["terms"]]
    return tr.ProductInteraction(m["d"], terms, it.get("scale", 1.0))


# ----------------------------------------------------------------- output


def _fmt_csv(rows, header) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, default=float) + "\n")


class Run:
    def __init__(self, cfg, cfg_hash, seed, out, workers, force):
        self.cfg, self.cfg_hash, self.seed = cfg, cfg_hash, seed
        self.out, self.workers, self.force = Path(out), workers, force
        cache = os.environ.get(CACHE_ENV)
        self.cache = Path(cache) if cache else None
        if self.cache:
            self.cache.mkdir(parents=True, exist_ok=True)
        self.memo = {}

    def task_dir(self, name) -> Path:
        p = self.out / name
        if p.exists() and any(p.iterdir()):
            if not self.force:
                raise FileExistsError(f"{p} is not empty; use --force to overwrite it")
            shutil.rmtree(p)
        p.mkdir(parents=True, exist_ok=True)
        return p

    def manifest(self, p: Path, task, t0, files):
        _dump(p / "manifest.json", {
            "task": task, "config_sha256": self.cfg_hash, "seed": self.seed,
            "versions": {"rmt_transport": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "wall_time_s": round(time.time() - t0, 3), "files": sorted(files),
        })

    def cached(self, key: dict, compute):
        if self.cache is None:
            return compute()
        h = hashlib.sha256(json.dumps(key, sort_keys=True, default=str).encode()).hexdigest()[:24]
        f = self.cache / f"{h}.npz"
        if f.exists():
            with np.load(f) as z:
                return z["lam"]
        lam = compute()
        np.savez(f, lam=lam)
        return lam


# ----------------------------------------------------------------- tasks


def task_equilibrium(run: Run, p: Path) -> dict:
    cfg = run.cfg
    beta = cfg["model"]["beta"]
    Ws = potentials(cfg)
    F = interaction(cfg)
    if F is None:
        mus = [eq.solve_onecut(W, beta) for W in Ws]
    else:
        mus, _ = eq.self_consistent_system(Ws, F.correction(1.0), beta)
    rows = []
    for k, mu in enumerate(mus):
        rows.append((k + 1, mu.a_end, mu.b_end))
        (p / f"equilibrium_{k + 1}.json").write_text(mu.to_json() + "\n")
        (p / f"density_{k + 1}.csv").write_text(mu.to_csv())
    (p / "endpoints.csv").write_text(_fmt_csv(rows, ["k", "a", "b"]))
    run.memo["mus"] = mus
    return {"mus": mus}


def task_sd(run: Run, p: Path) -> dict:
    from . import sdengine as sd
    cfg = run.cfg
    m, n = cfg["model"], cfg["numerics"]
    _need("V" in m, "model.V", "required for sd-moments")
    d = m["d"]
    V = x_poly(m["V"], d)
    var = m.get("tau1_variance", [1.0] * d)
    tau1 = nc.ab_state_from_moments([lambda k, v=v: nc.semicircle_moment(k, v) for v in var])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prob = sd.SDProblem(V, m["beta"], m["a"], tau1, D_max=n["D_max"], n_max=n["n_max"])
        words = cfg.get("words") or ["x1 x1"] + (["x1 x2", "x1 x1 x2 x2", "x1 x2 x1 x2"] if d > 1 else
                                                 ["x1 x1 x1 x1"])
        ws = [nc.monomial_to_word(w.split()) for w in words]
        sol = sd.solve_tau10(prob, words=ws)
    (p / "sd.json").write_text(sol.to_json() + "\n")
    rows = [(w, float(np.real(sol.tau10.word(nc.cyclic_key(x))))) for w, x in zip(words, ws)]
    (p / "moments.csv").write_text(_fmt_csv(rows, ["word", "tau"]))
    _dump(p / "series.json", {"norms": sol.norms, "D_fit": sol.D_fit, "status": sol.status,
                              "delta": prob.delta, "delta_ok": prob.delta_ok})
    return {"sd": sol}


def _target_law(run: Run):
    """Per-matrix limiting law of the target model."""
    if "target_laws" in run.memo:
        return run.memo["target_laws"]
    cfg = run.cfg
    m = cfg["model"]
    if "P" in m:
        from .freepoly import polynomial_law
        laws = [polynomial_law(x_poly(m["P"][k], m["d"]), k, m["eps"], m["d"])[0] for k in range(m["d"])]
    elif "fields" in run.memo:
        laws = run.memo["fields"].target
    elif interaction(cfg) is not None:
        laws, _ = eq.self_consistent_system(potentials(cfg), interaction(cfg).correction(1.0), m["beta"])
    else:
        laws = [eq.solve_onecut(W, m["beta"]) for W in potentials(cfg)]
    run.memo["target_laws"] = laws
    return laws


def task_transport(run: Run, p: Path) -> dict:
    cfg = run.cfg
    m, n = cfg["model"], cfg["numerics"]
    F = interaction(cfg)
    out = {}
    if F is not None:
        prob = tr.TransportProblem(potentials(cfg), F, m["beta"])
        fields = tr.build_fields(prob, n["t_nodes"], n["n_grid"])
        (p / "fields.json").write_text(fields.to_json() + "\n")
        run.memo["fields"] = fields
        out["fields"] = fields
    sc = tr.semicircle_measure()
    laws = _target_law(run)
    scales = {}
    maps = []
    for k, mu in enumerate(laws):
        R = tr.monotone_map(sc, mu)
        maps.append(R)
        (p / f"map_R_{k + 1}.csv").write_text(R.to_csv())
        scales[str(k + 1)] = {"a": mu.a_end, "b": mu.b_end, "c_left": tr.edge_scale(R, "left"),
                              "c_right": tr.edge_scale(R, "right"), "L": R.L}
    _dump(p / "edge_scales.json", scales)
    run.memo["maps"] = maps
    out["maps"] = maps
    return out


def _sample(run: Run, kind: str, count: int, seed: int) -> np.ndarray:
    key = {"kind": kind, "model": run.cfg["model"], "N": run.cfg["numerics"]["N"],
           "count": count, "seed": seed}

    def compute():
        w = max(1, run.workers)
        if w == 1 or count < 2 * w:
            return _sample_chunk_range(kind, run.cfg, seed, count, 0, count)
        # chunks draw from the same spawned streams, so results do not
        # depend on the worker count
        bounds = np.linspace(0, count, w + 1).astype(int)
        with cf.ProcessPoolExecutor(w) as ex:
            futs = [ex.submit(_sample_chunk_range, kind, run.cfg, seed, count, int(a), int(b))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            return np.concatenate([f.result() for f in futs])
    return run.cached(key, compute)


def _sample_chunk_range(kind, cfg, seed, count, a, b):
    m, n = cfg["model"], cfg["numerics"]
    N, beta, d = n["N"], m["beta"], m["d"]
    streams = np.random.SeedSequence(seed).spawn(count)[a:b]
    out = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        X = [en.gve_matrix(N, beta, rng) for _ in range(d)]
        if kind == "reference":
            out.append([np.linalg.eigvalsh(x) for x in X])
        else:
            P = [x_poly(q, d) for q in m["P"]]
            lam = []
            for i in range(d):
                Y = X[i] + m["eps"] * en.evaluate_x_poly(P[i], X)
                lam.append(np.linalg.eigvalsh(0.5 * (Y + Y.conj().T)))
            out.append(lam)
    return np.array(out)


def _transport_samples(run: Run, ref: np.ndarray) -> np.ndarray:
    fields = run.memo.get("fields")
    if fields is None:
        raise ConfigError("config field 'model.interaction': transported target needs fields")
    order = run.cfg["numerics"]["flow_order"]
    beta = run.cfg["model"]["beta"]
    return np.array([tr.particle_flow(fields, en.EigenConfig(lam, beta), order).lambdas for lam in ref])


def task_sample(run: Run, p: Path) -> dict:
    cfg = run.cfg
    n, m = cfg["numerics"], cfg["model"]
    ref = _sample(run, "reference", n["reference_samples"], run.seed)
    kind = cfg.get("sample", {}).get("target", "polynomial" if "P" in m else
                                     ("transport" if "interaction" in m else "reference"))
    if kind == "transport":
        tgt_ref = _sample(run, "reference", n["target_samples"], run.seed + 1)
        if "fields" not in run.memo:
            task_transport(run, run.out / "_transport_scratch")
        tgt = _transport_samples(run, tgt_ref)
    else:
        tgt = _sample(run, kind, n["target_samples"], run.seed + 1)
    d = m["d"]
    np.savetxt(p / "reference.csv", ref.reshape(-1, n["N"]), delimiter=",", fmt="%.17g")
    np.savetxt(p / "target.csv", tgt.reshape(-1, n["N"]), delimiter=",", fmt="%.17g")
    _dump(p / "samples.json", {"d": d, "N": n["N"], "beta": m["beta"], "target_kind": kind,
                               "reference_count": len(ref), "target_count": len(tgt),
                               "reference_seed": run.seed, "target_seed": run.seed + 1})
    run.memo["ref"], run.memo["tgt"] = ref, tgt
    return {"ref": ref, "tgt": tgt}


def _configs(arr, beta):
    return [en.EigenConfig(a, beta) for a in arr]


def task_stats(run: Run, p: Path) -> dict:
    cfg = run.cfg
    m, n, s = cfg["model"], cfg["numerics"], cfg["stats"]
    beta, N, d = m["beta"], n["N"], m["d"]
    if "ref" not in run.memo:
        sp = run.out / "sample"
        if (sp / "reference.csv").exists():
            run.memo["ref"] = np.loadtxt(sp / "reference.csv", delimiter=",", ndmin=2).reshape(-1, d, N)
            run.memo["tgt"] = np.loadtxt(sp / "target.csv", delimiter=",", ndmin=2).reshape(-1, d, N)
        else:
            task_sample(run, run.task_dir("sample"))
    if "maps" not in run.memo:
        task_transport(run, run.task_dir("transport"))
    ref, tgt = _configs(run.memo["ref"], beta), _configs(run.memo["tgt"], beta)
    maps, laws = run.memo["maps"], _target_law(run)
    rows = []
    lo, hi = int(np.ceil(s["bulk_fraction"] * N)), int(np.floor((1 - s["bulk_fraction"]) * N))
    for k in range(d):
        R = maps[k]
        g_ref = ls.rescaled_bulk_gaps(ref, k, (lo, hi), None, s["bulk_fraction"] / 2).gaps
        g_tgt = ls.rescaled_bulk_gaps(tgt, k, (lo, hi), R.deriv, s["bulk_fraction"] / 2).gaps
        ks = ls.ks_distance(g_ref, g_tgt)
        rows.append(("bulk_gaps", k + 1, ks, s["ks_bulk"], int(ks < s["ks_bulk"]), len(g_tgt)))
        (p / f"bulk_gaps_hist_{k + 1}.csv").write_text(ls.histogram_csv(g_tgt))
        e_ref = np.concatenate([ls.edge_fluctuations(ref, k, "left", 1, -2.0, tr.edge_scale(R, "left")),
                                ls.edge_fluctuations(ref, k, "right", 1, 2.0, tr.edge_scale(R, "right"))])
        e_tgt = np.concatenate([ls.edge_fluctuations(tgt, k, "left", 1, laws[k].a_end, 1.0),
                                ls.edge_fluctuations(tgt, k, "right", 1, laws[k].b_end, 1.0)])
        ks = ls.ks_distance(e_ref.ravel(), e_tgt.ravel())
        rows.append(("edge", k + 1, ks, s["ks_edge"], int(ks < s["ks_edge"]), e_tgt.size))
        (p / f"edge_hist_{k + 1}.csv").write_text(ls.histogram_csv(e_tgt.ravel()))
        if beta == 2:
            I = tuple(float(v) for v in R(np.array(s["smallest_interval"])))
            rep = ls.smallest_gaps(tgt, k, I, 1, R, beta, s["ks_smallest"])
            rows.append(("smallest_gap", k + 1, rep.ks, s["ks_smallest"], int(rep.passed), rep.values.size))
        frac = ls.rigidity_fraction([en.EigenConfig(c.lambdas[k:k + 1], beta) for c in tgt],
                                    laws[k], s["rigidity_theta"])
        rows.append(("rigidity_fraction", k + 1, frac, s["rigidity_min"], int(frac > s["rigidity_min"]),
                     len(tgt)))
    (p / "verdict.csv").write_text(_fmt_csv(rows, ["statistic", "k", "value", "tolerance", "pass", "count"]))
    _dump(p / "stats.json", [dict(zip(["statistic", "k", "value", "tolerance", "pass", "count"], r))
                             for r in rows])
    return {"rows": rows}


def task_pipeline(run: Run, p: Path) -> dict:
    sub = Run(run.cfg, run.cfg_hash, run.seed, p, run.workers, True)
    sub.memo = run.memo
    t0 = time.time()
    results = {}
    if True:
        q = sub.task_dir("equilibrium")
        task_equilibrium(sub, q)
        sub.manifest(q, "equilibrium", t0, [f.name for f in q.iterdir()])
    if "V" in run.cfg["model"]:
        q = sub.task_dir("sd-moments")
        task_sd(sub, q)
        sub.manifest(q, "sd-moments", t0, [f.name for f in q.iterdir()])
    for name, fn in (("transport", task_transport), ("sample", task_sample), ("stats", task_stats)):
        q = sub.task_dir(name)
        results[name] = fn(sub, q)
        sub.manifest(q, name, t0, [f.name for f in q.iterdir()])
    shutil.copyfile(p / "stats" / "verdict.csv", p / "verdict.csv")
    return results


RUNNERS = {"equilibrium": task_equilibrium, "sd-moments": task_sd, "transport": task_transport,
           "sample": task_sample, "stats": task_stats, "pipeline": task_pipeline}


def run_task(task: str, config: str, seed: int | None = None, out: str | None = None,
             workers: int = 1, force: bool = False) -> Path:
    cfg, h = load_config(config)
    seed = cfg["seed"] if seed is None else seed
    out = out or cfg.get("out", "rmt_out")
    run = Run(cfg, h, seed, out, workers, force)
    t0 = time.time()
    p = run.task_dir(task)
    RUNNERS[task](run, p)
    scratch = run.out / "_transport_scratch"
    if scratch.exists():
        shutil.rmtree(scratch)
    files = [str(f.relative_to(p)) for f in p.rglob("*") if f.is_file()]
    run.manifest(p, task, t0, files)
    return p


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="rmt-transport", description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args(argv)
    try:
        p = run_task(args.task, args.config, args.seed, args.out, args.workers, args.force)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # module errors, with task context
        print(f"error in task '{args.task}': {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
