"""Declarative experiments: a YAML spec in, a directory of CSV/JSON artifacts and a manifest out.

Every unit of work (one box size and one replicate) gets a seed derived from
the master seed, so outputs do not depend on scheduling or thread count. The
manifest lists every artifact with its SHA-256; wall times live only in the
manifest, which is therefore the one file that differs between reruns.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import events as ev
from . import harmonic, inequality, verify
from . import walk as wk
from .cluster import cluster_graph, diameter, is_crossing, label_clusters, largest_cluster, largest_label
from .percolation import Box, derive_seed, sample_bond_config, sample_site_config, write_snapshot

log = logging.getLogger(__name__)

KINDS = ("sample", "geometry", "inequalities", "events", "kernel", "bounds", "harnack", "report")
VERTEX_CAP = {"sample": 4_000_000, "geometry": 1_000_000, "inequalities": 200_000, "kernel": 1_000_000,
              "bounds": 1_000_000, "harnack": 500_000, "events": 200_000}
TRIAL_CAP = 1_000_000
MISSING = "NA"


class SpecError(ValueError):
    """Invalid experiment spec; `fields` names the offending keys."""

    def __init__(self, problems):
        self.problems = dict(problems)
        self.fields = sorted(self.problems)
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items())))


@dataclass
class ExperimentSpec:
    kind: str
    name: str | None = None
    d: int = 2
    model: str = "bond"
    p: float = 0.6
    sizes: list = field(default_factory=lambda: [32])
    replicates: int = 1
    seed: int = 0
    times: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    radii: list = field(default_factory=lambda: [4, 8])
    trials: int = 100
    events: list = field(default_factory=lambda: ["K"])
    datasets: int = 50
    relax: float = 4.0
    reference: str = "p1"
    reference_replicates: int = 8
    dist_frac: float = 1.0
    ball_constants: dict = field(default_factory=dict)
    event_params: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    out: str | None = None
    threads: int = 1

    @property
    def label(self):
        return self.name or self.kind

    def echo(self):
        """The spec as plain data, without scheduling fields that cannot change outputs."""
        out = dataclasses.asdict(self)
        out.pop("threads")
        out.pop("out")
        return out

    def validate(self):
        bad = {}
        if self.kind not in KINDS:
            bad["kind"] = f"must be one of {', '.join(KINDS)}"
        if not 1 <= self.d <= 4:
            bad["d"] = "must be between 1 and 4"
        if self.model not in ("bond", "site"):
            bad["model"] = "must be bond or site"
        if not 0.0 <= self.p <= 1.0:
            bad["p"] = "must lie in [0, 1]"
        if not self.sizes or any(int(n) != n or n < 1 for n in self.sizes):
            bad["sizes"] = "must be a nonempty list of positive integers"
        elif self.kind in VERTEX_CAP and self.d in range(1, 5):
            cap = VERTEX_CAP[self.kind]
            if max(self.sizes) + 1 > cap ** (1.0 / self.d):
                bad["sizes"] = f"box exceeds the {cap} vertex cap"
        if self.replicates < 1:
            bad["replicates"] = "must be positive"
        if not 0 <= self.seed < 2 ** 64:
            bad["seed"] = "must be an unsigned 64-bit integer"
        if not self.times or any(t <= 0 for t in self.times) or list(self.times) != sorted(set(self.times)):
            bad["times"] = "must be strictly increasing positive numbers"
        if not self.radii or any(r < 1 for r in self.radii):
            bad["radii"] = "must be positive"
        if not 1 <= self.trials <= TRIAL_CAP:
            bad["trials"] = f"must lie in [1, {TRIAL_CAP}]"
        unknown_events = [k for k in self.events if k not in ev.EVENT_KINDS]
        if unknown_events:
            bad["events"] = f"unknown kinds {unknown_events}"
        if self.datasets < 1:
            bad["datasets"] = "must be positive"
        if self.relax < 1:
            bad["relax"] = "must be at least 1"
        if self.reference not in ("p1", "heldout"):
            bad["reference"] = "must be p1 or heldout"
        if self.reference_replicates < 1:
            bad["reference_replicates"] = "must be positive"
        if not 0 < self.dist_frac <= 1:
            bad["dist_frac"] = "must lie in (0, 1]"
        for key, cls in (("ball_constants", inequality.GoodBallConstants), ("event_params", ev.EventParams)):
            extra = set(getattr(self, key)) - {f.name for f in dataclasses.fields(cls)}
            if extra:
                bad[key] = f"unknown keys {sorted(extra)}"
        if self.kind == "report" and not self.inputs:
            bad["inputs"] = "report needs at least one input directory"
        if self.threads < 1:
            bad["threads"] = "must be positive"
        if bad:
            raise SpecError(bad)
        return self

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise SpecError({"spec": "top level must be a mapping"})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SpecError({k: "unknown key" for k in unknown})
        if "kind" not in data:
            raise SpecError({"kind": "missing"})
        try:
            spec = cls(**data)
        except TypeError as exc:
            raise SpecError({"spec": str(exc)}) from exc
        return spec.validate()

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise SpecError({"spec": f"not valid YAML: {exc}"}) from exc
        return cls.from_dict(data)


def code_version():
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Box):
        return {"lo": list(obj.lo), "hi": list(obj.hi)}
    return obj


def _sample(spec, size, seed, box=None):
    box = Box.centered(spec.d, size) if box is None else box
    if spec.model == "site":
        return sample_site_config(box, spec.p, seed)
    return sample_bond_config(box, spec.p, seed)


def _origin_vertex(graph):
    return int(np.argmin(np.abs(graph.coords).sum(axis=1)))


def _ball_consts(spec):
    return inequality.GoodBallConstants(**spec.ball_constants)


def _event_params(spec):
    return ev.EventParams(**spec.event_params)


# Each unit returns (summary row dict, {filename: text}).

def _unit_sample(spec, size, rep, seed, ctx):
    cfg = _sample(spec, size, seed)
    name = f"snapshot_n{size}_r{rep}.bin"
    lab = label_clusters(cfg)
    big = int(largest_cluster(lab).sum()) if lab.n_clusters else 0
    row = {"open_fraction": float(np.mean(cfg.bits)), "largest_cluster": big, "clusters": lab.n_clusters}
    return row, {name: cfg}


def _unit_geometry(spec, size, rep, seed, ctx):
    cfg = _sample(spec, size, seed)
    lab = label_clusters(cfg)
    C = largest_cluster(lab)
    row = {"clusters": lab.n_clusters, "largest_cluster": int(C.sum()),
           "crossing": bool(C.any() and is_crossing(cfg, C, cfg.box)),
           "diameter": float(diameter(C, cfg.box)) if C.any() else 0.0}
    fit = verify.fit_chemical_constant([cfg], sources=20, sep_band=(max(1, size // 8), max(2, size // 4)), seed=seed)
    row.update({"C_H": fit.C_H, "pairs": int(fit.ratios.size)})
    return row, {f"chemical_n{size}_r{rep}.json": json_text(fit.to_dict())}


def _unit_inequalities(spec, size, rep, seed, ctx):
    g = cluster_graph(_sample(spec, size, seed))
    x = _origin_vertex(g)
    consts = _ball_consts(spec)
    dist = g.distances(x)
    rows = []
    for r in spec.radii:
        rep_ = inequality.classify_good(g, x, r, consts, dist)
        ball = dist < r
        pc = inequality.poincare_constant(g.subgraph(ball)) if ball.sum() > 1 else 0.0
        rows.append((r, int(ball.sum()), float(g.mu[ball].sum()), pc, rep_.good))
    vg = inequality.classify_very_good(g, x, max(spec.radii), consts, seed=seed)
    row = {"very_good": vg.level == "very good" or vg.level == "exceedingly good",
           "N_B": vg.N_B if vg.N_B is not None else math.nan}
    files = {f"balls_n{size}_r{rep}.csv": csv_text(["radius", "vertices", "volume", "poincare", "good"], rows),
             f"very_good_n{size}_r{rep}.json": json_text(vg.to_dict())}
    return row, files


def _curves(g, x, kernel):
    deg = wk._walk_degree(g)
    nash = wk.nash_functionals(g, x, kernel.times, kernel=kernel)
    sq = ((g.coords - g.coords[x]) ** 2).sum(axis=1).astype(float)
    q = kernel.q[:, 0, :]
    msd = (q * deg[None, :] * sq[None, :]).sum(axis=1)
    return [(t, q[i, x], nash.M[i], nash.Q[i], msd[i]) for i, t in enumerate(kernel.times)]


def _unit_kernel(spec, size, rep, seed, ctx):
    g = cluster_graph(_sample(spec, size, seed))
    x = _origin_vertex(g)
    times = np.asarray(spec.times, dtype=float)
    ok = verify.admissible_times(g, x, times)
    k = wk.exact_heat_kernel(g, times[ok], sources=[x])
    rows = _curves(g, x, k)
    row = {"vertices": g.n, "admissible_times": int(ok.sum()), "truncation_error": k.truncation_error}
    return row, {f"curves_n{size}_r{rep}.csv": csv_text(["t", "q_xx", "M", "Q", "msd"], rows)}


def _bounds_kernel(spec, size, seed, p=None):
    box = Box.centered(spec.d, size)
    cfg = sample_bond_config(box, spec.p if p is None else p, seed)
    g = cluster_graph(cfg)
    x = _origin_vertex(g)
    times = np.asarray(spec.times, dtype=float)
    ok = verify.admissible_times(g, x, times)
    if not ok.any():
        raise ValueError(f"no admissible time for box size {size}")
    return g, x, wk.exact_heat_kernel(g, times[ok], sources=[x])


def _reference(spec):
    """Reference envelopes per size, either from p=1 or from held-out configurations at the spec's p."""
    out = {}
    for size in spec.sizes:
        if spec.reference == "p1":
            g, x, k = _bounds_kernel(spec, size, 0, p=1.0)
            fit = verify.fit_gaussian_envelope(k, x, dist_frac=spec.dist_frac)
        else:
            pairs = []
            for i in range(spec.reference_replicates):
                g, x, k = _bounds_kernel(spec, size, derive_seed(spec.seed, "reference", size, i))
                pairs.append((k, x))
            fit = verify.fit_reference_envelope(pairs, dist_frac=spec.dist_frac)
        out[size] = fit.constants
    return out


def _unit_bounds(spec, size, rep, seed, ctx):
    g, x, k = _bounds_kernel(spec, size, seed)
    files, row = {}, {}
    t = k.times
    try:
        od = verify.fit_ondiagonal(k, (t[0], t[-1]), x)
        row.update({"ondiag_slope": od.diagnostics["slope"], "ondiag_r2": od.diagnostics["r2"]})
        files[f"ondiagonal_n{size}_r{rep}.json"] = json_text(od.to_dict())
    except ValueError as exc:
        row.update({"ondiag_slope": math.nan, "ondiag_r2": math.nan})
        files[f"ondiagonal_n{size}_r{rep}.json"] = json_text({"error": str(exc)})
    env = verify.fit_gaussian_envelope(k, x, dist_frac=spec.dist_frac)
    row.update({"envelope_r2": env.diagnostics["r2"], "envelope_violations": len(env.violations)})
    files[f"envelope_n{size}_r{rep}.json"] = json_text(env.to_dict())
    files[f"envelope_points_n{size}_r{rep}.csv"] = csv_text(
        ["t", "y", "dist", "q"], [(tt, " ".join(map(str, g.coords[y])), D, q) for tt, y, D, q in env.region])
    onset = verify.estimate_onset_time(g, x, t, ctx["reference"][size], relax=spec.relax,
                                       dist_frac=spec.dist_frac, kernel=k)
    row["S_x"] = onset.S_x
    files[f"onset_n{size}_r{rep}.json"] = json_text(onset.to_dict())
    files[f"curves_n{size}_r{rep}.csv"] = csv_text(["t", "q_xx", "M", "Q", "msd"], _curves(g, x, k))
    return row, files


def _unit_harnack(spec, size, rep, seed, ctx):
    g = cluster_graph(_sample(spec, size, seed))
    x = _origin_vertex(g)
    rows = []
    for R in spec.radii:
        e = harmonic.harnack_ensemble(g, x, R, datasets=spec.datasets, seed=seed)
        rows.append((R, e.max_ratio, e.max_decay, e.max_principle, e.max_residual))
    row = {"max_ratio": max(r[1] for r in rows), "max_decay": max(r[2] for r in rows),
           "max_principle": all(r[3] for r in rows)}
    return row, {f"harnack_n{size}_r{rep}.csv": csv_text(["R", "max_ratio", "max_decay", "max_principle",
                                                          "max_residual"], rows)}


UNITS = {"sample": _unit_sample, "geometry": _unit_geometry, "inequalities": _unit_inequalities,
         "kernel": _unit_kernel, "bounds": _unit_bounds, "harnack": _unit_harnack}


def _run_unit(args):
    spec, size, rep, seed, ctx = args
    start = time.perf_counter()
    row, files = UNITS[spec.kind](spec, size, rep, seed, ctx)
    return row, files, time.perf_counter() - start


def _write(out, name, payload):
    path = out / name
    if isinstance(payload, str):
        path.write_text(payload)
    elif isinstance(payload, bytes):
        path.write_bytes(payload)
    else:
        write_snapshot(payload, path)


def _sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _summary_table(rows):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    return cols, [[r.get(c, MISSING) for c in cols] for r in rows]


def run_experiment(spec, out=None, threads=None):
    """Run a validated spec and return the artifact directory."""
    spec.validate()
    out = Path(out or spec.out or f"runs/{spec.label}")
    threads = spec.threads if threads is None else threads
    if spec.kind == "report":
        return report(spec.inputs, out)
    out.mkdir(parents=True, exist_ok=True)
    walls = {}
    files, rows = {}, []
    start = time.perf_counter()
    if spec.kind == "events":
        params = _event_params(spec)
        for kind in spec.events:
            t0 = time.perf_counter()
            prob = spec.p
            tail = ev.estimate_tail(kind, spec.d, list(spec.sizes), spec.trials, prob, seed=spec.seed,
                                    params=params, threads=threads)
            walls[f"tail_{kind}"] = time.perf_counter() - t0
            files[f"tail_{kind}.csv"] = csv_text(
                ["size", "trials", "failures", "frequency", "ci_lo", "ci_hi"],
                zip(tail.sizes, tail.trials, tail.failures, tail.frequencies, tail.ci_lo, tail.ci_hi))
            files[f"tail_{kind}.json"] = json_text(tail.to_dict())
            for n, f in zip(tail.sizes, tail.frequencies):
                rows.append({"experiment": spec.label, "size": n, "seed": spec.seed, "event": kind,
                             "failure_frequency": f})
    else:
        ctx = {}
        if spec.kind == "bounds":
            t0 = time.perf_counter()
            ctx["reference"] = _reference(spec)
            walls["reference"] = time.perf_counter() - t0
        jobs = [(spec, n, r, derive_seed(spec.seed, spec.kind, n, r), ctx)
                for n in spec.sizes for r in range(spec.replicates)]
        if threads > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(threads) as pool:
                results = list(pool.map(_run_unit, jobs))
        else:
            results = [_run_unit(j) for j in jobs]
        for (sp, n, r, seed, _), (row, unit_files, wall) in zip(jobs, results):
            rows.append({"experiment": spec.label, "size": n, "seed": seed, "replicate": r, **row})
            files.update(unit_files)
            walls[f"n{n}_r{r}"] = wall
        if spec.kind == "bounds":
            tails = {}
            for n in spec.sizes:
                onsets = [row["S_x"] for row in rows if row["size"] == n]
                tails[str(n)] = verify.onset_tail(onsets, spec.times, spec.d)
            files["onset_tail.json"] = json_text(tails)
            files["reference.json"] = json_text({str(k): v for k, v in ctx["reference"].items()})
    cols, table = _summary_table(rows)
    files["summary.csv"] = csv_text(cols, table)
    files["summary.json"] = json_text({"experiment": spec.label, "kind": spec.kind, "rows": rows})
    for name in sorted(files):
        _write(out, name, files[name])
    walls["total"] = time.perf_counter() - start
    manifest = {"spec": spec.echo(), "code_version": code_version(), "wall_times": walls,
                "artifacts": {name: _sha256(out / name) for name in sorted(files)}}
    (out / "manifest.json").write_text(json_text(manifest))
    log.info("wrote %d artifacts to %s", len(files), out)
    return out


def load_manifest(path):
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise FileNotFoundError(f"{path} has no manifest.json")
    return json.loads(mf.read_text())


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def report(inputs, out):
    """Merge artifact directories into combined tables and plot-ready curve files.

    merged.csv is keyed by (experiment, size, seed) with the union of columns;
    tails.csv puts every tail experiment on the union of size grids. Missing
    cells are written as NA.
    """
    inputs = [Path(p) for p in inputs]
    if not inputs:
        raise ValueError("report needs at least one input directory")
    manifests = [load_manifest(p) for p in inputs]
    versions = sorted({m["code_version"] for m in manifests})
    if len(versions) > 1:
        warnings.warn(f"inputs come from different code versions: {versions}", stacklevel=2)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    merged, keys = {}, []
    tails = {}
    labels = []
    for path, mf in zip(inputs, manifests):
        label = mf["spec"].get("name") or mf["spec"]["kind"]
        if label in labels:
            label = f"{label}#{labels.count(label)}"
        labels.append(label)
        header, rows = _read_csv(path / "summary.csv")
        for r in rows:
            rec = dict(zip(header, r))
            rec["experiment"] = label
            key = (label, rec.get("size", MISSING), rec.get("seed", MISSING), rec.get("event", ""))
            if key not in merged:
                keys.append(key)
                merged[key] = {}
            merged[key].update(rec)
        for name in sorted(mf["artifacts"]):
            if name.startswith("tail_") and name.endswith(".csv"):
                h, rows = _read_csv(path / name)
                col = f"{label}:{name[5:-4]}"
                tails[col] = {int(r[h.index("size")]): r[h.index("frequency")] for r in rows}
            if name.startswith("curves_") or name.startswith("envelope_points_"):
                files[f"{label}__{name}"] = (path / name).read_text()
    cols, table = _summary_table([merged[k] for k in sorted(keys, key=_merge_order)])
    lead = [c for c in ("experiment", "size", "seed") if c in cols]
    cols = lead + [c for c in cols if c not in lead]
    files["merged.csv"] = csv_text(cols, [[merged[k].get(c, MISSING) for c in cols]
                                          for k in sorted(keys, key=_merge_order)])
    if tails:
        sizes = sorted(set().union(*[set(v) for v in tails.values()]))
        tcols = sorted(tails)
        files["tails.csv"] = csv_text(["size"] + tcols,
                                      [[n] + [tails[c].get(n, MISSING) for c in tcols] for n in sizes])
    for name in sorted(files):
        _write(out, name, files[name])
    manifest = {"spec": {"kind": "report", "inputs": [str(p) for p in inputs]},
                "code_version": code_version(), "input_versions": versions,
                "artifacts": {name: _sha256(out / name) for name in sorted(files)}}
    (out / "manifest.json").write_text(json_text(manifest))
    return out


def _merge_order(key):
    label, size, seed, event = key
    num = lambda s: (0, int(s)) if str(s).lstrip("-").isdigit() else (1, str(s))
    return (label, num(size), num(seed), event)
