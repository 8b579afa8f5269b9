"""Command-line front end.

    python3 -m equidecomp <subcommand> [options]

Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from . import bounds as bnd
from .expansion import (AveragingOperator, dense_gap, estimate_gap, finite_gap, prime_torus_gap,
                        punctured_domain, sparse_gap, translation_gap_closed_form, verify_expansion,
                        walk_saturate)
from .geometry import (RHO, annulus_expander, construct_cube, diffuser_check, foliation_consistency,
                       random_interval_union)
from .graphing import from_edges
from .group import GeneratorSet, l_for_growth, sl2_generators, torus_translations, word_products
from .matching import (Matching, advance_stage, decay_bound, shortest_augmenting_length,
                       verify_no_short_augmenting_path)
from .pipeline import (PipelineError, cover_set, default_torus_instance, equidecompose, finite_gap_source,
                       planar_reduction_instance, random_test_family, reduce_to_open)
from .predicates import from_json as predicate_from_json
from .space import RationalTorus


# gaps at or below this are eigensolver noise
GAP_FLOOR = 1e-10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "usage", "message": message, "prog": self.prog}) + "\n")
        raise SystemExit(2)


def _threads(args) -> int:
    if args.threads:
        return args.threads
    env = os.environ.get("EQUIDECOMP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"EQUIDECOMP_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _emit(args, report: dict, text: str) -> None:
    out = json.dumps(report, indent=2, sort_keys=True, default=str) if args.json else text
    print(out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, default=str)


def _plot(args, header, rows) -> None:
    if not args.plot_data:
        return
    with open(args.plot_data, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _generators(name: str, q: int) -> GeneratorSet:
    if name == "sl2":
        return sl2_generators(q)
    if name == "translations":
        return torus_translations(q, q)
    raise UsageError(f"unknown generator family {name!r}")


# ------------------------------------------------------------------ commands


def cmd_gap(args) -> int:
    model = RationalTorus(args.q)
    Q = _generators(args.generators, args.q)
    dom = punctured_domain(model) if args.punctured else None
    op = AveragingOperator(Q, model, dom, orbitwise=args.orbitwise)
    method = args.method
    if method == "power":
        est = estimate_gap(op, seed=args.seed)
    elif method == "dense":
        est = dense_gap(op)
    elif method == "sparse":
        est = sparse_gap(op)
    elif method == "blocks":
        est = prime_torus_gap(Q, args.q)
    else:
        est = finite_gap(op)
    rep = {"q": args.q, "generators": args.generators, "punctured": args.punctured, "orbitwise": args.orbitwise,
           **est.to_json()}
    if args.generators == "translations":
        rep["closed_form"] = translation_gap_closed_form(args.q)
    text = f"q={args.q} generators={args.generators} c={est.c:.12g} (‖T‖={est.norm:.12g}, {est.method})"
    if "closed_form" in rep:
        text += f"\nclosed form c={rep['closed_form']:.12g}"
    _emit(args, rep, text)
    return 0 if est.c > GAP_FLOOR else 1


def _gap_value(args, model, Q) -> float:
    if args.c is not None:
        return args.c
    return finite_gap(AveragingOperator(Q, model, orbitwise=True)).c


def cmd_expander(args) -> int:
    if args.model == "annulus":
        r = annulus_expander(args.eta)
        rep = {"model": "annulus", "eta": args.eta, "params": r.params.to_json(), "l_beta": r.l_beta,
               "l_delta": r.l_delta, "size_beta": str(r.size_beta), "size_delta": str(r.size_delta),
               "symbolic_size": str(r.symbolic_size), "order": list(r.order)}
        text = (f"annulus recipe at eta={args.eta}: l_beta={r.l_beta}, l_delta={r.l_delta}, "
                f"|R| ≤ {r.symbolic_size}")
        _emit(args, rep, text)
        return 0
    model = RationalTorus(args.q)
    Q = _generators(args.generators, args.q)
    c = _gap_value(args, model, Q)
    l = l_for_growth(c, args.eta, len(Q))
    R = word_products(Q, l, cap=args.cap)
    rep = {"model": "rational-torus", "q": args.q, "eta": args.eta, "c": c, "l": l, "R_size": len(R)}
    _emit(args, rep, f"q={args.q} c={c:.6g} eta={args.eta}: l={l}, |Q^l|={len(R)}")
    return 0


def cmd_verify_expansion(args) -> int:
    model = RationalTorus(args.q)
    Q = _generators(args.generators, args.q)
    c = _gap_value(args, model, Q)
    l = l_for_growth(c, args.eta, len(Q))
    C = model.full() if not args.punctured else model.from_indices(punctured_domain(model))
    rng = np.random.default_rng(args.seed)
    family = random_test_family(model, C, args.tests, rng)
    rep = verify_expansion(model, C, None, args.eta, family,
                           saturator=lambda U: walk_saturate(model, Q, l, U, with_identity=True))
    out = rep.to_json()
    out.update({"q": args.q, "c": c, "l": l})
    _plot(args, ["mass_U", "mass_saturated"], rep.plot_rows())
    text = (f"q={args.q} eta={args.eta} l={l}: {sum(r.passed for r in rep.records)}/{len(rep.records)} "
            f"test sets expand; worst margin {rep.worst_margin:.6g}")
    _emit(args, out, text)
    return 0 if rep.passed else 1


def cmd_match(args) -> int:
    rng = np.random.default_rng(args.seed)
    n = args.n
    deg = args.degree
    edges = set()
    for u in range(n):
        for v in rng.choice(n, size=min(deg, n), replace=False):
            edges.add((u, int(v)))
    G = from_edges(n, n, sorted(edges))
    M = Matching.empty(G)
    cap = args.stages if args.stages is not None else 2 * n + 1
    reports, rows, ok = [], [], True
    while M.stage < cap:
        M, rep = advance_stage(G, M)
        reports.append(rep)
        good, _ = verify_no_short_augmenting_path(G, M, 2 * rep.stage - 1)
        ok &= good
        rows.append((rep.stage, float(rep.unmatched_left_mass + rep.unmatched_right_mass) / (2 * n),
                     rep.phases, rep.paths, good))
        if shortest_augmenting_length(G, M) is None:
            break
    out = {"n": n, "degree": deg, "matching_size": M.size, "valid": M.is_valid(),
           "stages": [r.to_json() for r in reports], "certificates_hold": ok}
    if args.c is not None:
        out["decay_bound"] = [decay_bound(args.c, r.stage) for r in reports]
    _plot(args, ["stage", "unmatched_fraction", "phases", "paths", "certificate"], rows)
    text = "\n".join(f"stage {s}: unmatched fraction {u:.6g} ({ph} phases, {p} paths, certificate {g})"
                     for s, u, ph, p, g in rows)
    text += f"\nmatching size {M.size} of {n}"
    _emit(args, out, text)
    return 0 if ok and M.is_valid() else 1


def cmd_equidecompose(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    q = int(cfg.get("model", {}).get("q", args.q))
    A, B, shifts = default_torus_instance()
    if "A" in cfg:
        A = predicate_from_json(cfg["A"])
    if "B" in cfg:
        B = predicate_from_json(cfg["B"])
    shifts = cfg.get("T", shifts)
    model = RationalTorus(q)
    Q = _generators(cfg.get("generators", args.generators), q)
    T = cover_set(q, shifts)
    try:
        cert = equidecompose(model, A, B, T, finite_gap_source(Q), eta=cfg.get("eta", args.eta),
                             stage_cap=cfg.get("stage_cap", args.stages),
                             threshold=Fraction(cfg.get("threshold", 0)), seed=cfg.get("seed", args.seed))
    except PipelineError as exc:
        _emit(args, {"error": type(exc).__name__, "message": str(exc)}, f"rejected: {exc}")
        return 1
    cert_path = cfg.get("output", args.certificate)
    if cert_path:
        with open(cert_path, "w", encoding="utf-8") as fh:
            fh.write(cert.dumps())
    rep = {"q": q, "piece_count": cert.piece_count, "residue_mass": str(cert.residue_mass),
           "validation": cert.validation.to_json(), "metadata": cert.metadata}
    text = (f"q={q}: {cert.piece_count} pieces, residue {cert.residue_mass}, "
            f"validation {'passed' if cert.validation.ok else 'FAILED'} "
            f"({cert.metadata.get('total_seconds')} s)")
    _emit(args, rep, text)
    return 0 if cert.validation.ok else 1


def cmd_diffuser(args) -> int:
    cube = construct_cube()
    seeds = np.random.SeedSequence(args.seed).spawn(args.sets)

    def one(ss):
        rng = np.random.default_rng(ss)
        R = random_interval_union(rng)
        return diffuser_check(cube, args.samples, R, bins=args.bins, rng=rng)

    with ThreadPoolExecutor(max_workers=_threads(args)) as ex:
        reports = list(ex.map(one, seeds))
    out = {"samples": args.samples, "bins": args.bins, "passed": all(r.passed for r in reports),
           "reports": [r.to_json() for r in reports]}
    fol = None
    if args.foliation:
        fol = foliation_consistency(args.samples, seed=args.seed, bins=args.bins)
        out["foliation"] = fol.to_json()
        out["passed"] = out["passed"] and fol.passed
    rows = []
    for k, r in enumerate(reports):
        for b, (e, req) in enumerate(zip(r.estimates, r.required)):
            rows.append((k, b, float(e), float(req)))
    _plot(args, ["set", "bin", "estimate", "required"], rows)
    lines = [f"set {k}: {'pass' if r.passed else 'FAIL'}  μ(K_R)={r.mass_K_R:.5f}  "
             f"min bin estimate {float(np.min(r.estimates)):.5f}" for k, r in enumerate(reports)]
    if fol is not None:
        lines.append(f"foliation: estimate {fol.estimate:.6f} vs exact {fol.exact:.6f}, z = {fol.z_score:.3f}")
    _emit(args, out, "\n".join(lines))
    return 0 if out["passed"] else 1


def cmd_cube(args) -> int:
    cube = construct_cube()
    res = cube.checks()
    angle = cube.max_sampled_angle(seed=args.seed)
    out = {"h": cube.h, "h_expected": math.sqrt(2) / 2, "rho": RHO, "max_angle": angle,
           "pi_over_4": math.pi / 4, "residuals": res,
           "passed": all(v <= 1e-12 for v in res.values()) and abs(angle - math.pi / 4) <= 1e-12}
    text = [f"h = {cube.h!r} (√2/2 = {math.sqrt(2) / 2!r})", f"max angle = {angle!r} (π/4 = {math.pi / 4!r})"]
    text += [f"  {k}: {v:.3e}" for k, v in res.items()]
    _emit(args, out, "\n".join(text))
    return 0 if out["passed"] else 1


def cmd_bounds(args) -> int:
    pick = {"expander": lambda: [bnd.expander_size_bound(args.eta)],
            "cube": lambda: [bnd.tarski_piece_bound()],
            "sphere": lambda: [bnd.sphere_remark_bound()],
            "all": lambda: bnd.all_ledgers(args.eta)}[args.ledger]
    ledgers = pick()
    out = {"eta": args.eta, "passed": all(lg.passed for lg in ledgers), "ledgers": [lg.to_json() for lg in ledgers]}
    text = "\n\n".join(lg.markdown() for lg in ledgers)
    _emit(args, out, text)
    return 0 if out["passed"] else 1


def cmd_reduce_open(args) -> int:
    q = args.q
    model, A, T, C_open = planar_reduction_instance(q)
    try:
        cert = reduce_to_open(A, T, C_open, model)
    except PipelineError as exc:
        _emit(args, {"error": type(exc).__name__, "message": str(exc)}, f"rejected: {exc}")
        return 1
    ok = cert.validation.ok and cert.metadata["pullback_equals_C"]
    out = {"q": q, "T_size": len(T), "pieces": cert.piece_count,
           "piece_sizes": [len(p.points) for p in cert.pieces], "validation": cert.validation.to_json(),
           "pullback_equals_C": cert.metadata["pullback_equals_C"], "passed": ok}
    text = (f"|T|={len(T)}: {cert.piece_count} pieces of sizes {out['piece_sizes']}; "
            f"partition check {'passed' if cert.validation.ok else 'FAILED'}; "
            f"pullback equals C: {cert.metadata['pullback_equals_C']}")
    _emit(args, out, text)
    return 0 if ok else 1


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("--out", help="also write the JSON report to this file")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: EQUIDECOMP_THREADS or all cores)")
    common.add_argument("--plot-data", help="write plot-ready CSV rows here")

    p = _Parser(prog="equidecomp", description="Equidecomposition laboratory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gap", parents=[common], help="spectral gap of an averaging operator")
    g.add_argument("--q", type=int, default=31)
    g.add_argument("--generators", choices=["sl2", "translations"], default="sl2")
    g.add_argument("--method", choices=["auto", "power", "dense", "sparse", "blocks"], default="auto")
    g.add_argument("--punctured", action="store_true", help="drop the fixed origin")
    g.add_argument("--orbitwise", action="store_true", help="measure the gap relative to orbit means")
    g.set_defaults(func=cmd_gap)

    e = sub.add_parser("expander", parents=[common], help="word length and size of an η-expanding set")
    e.add_argument("--model", choices=["torus", "annulus"], default="torus")
    e.add_argument("--q", type=int, default=32)
    e.add_argument("--generators", choices=["sl2", "translations"], default="sl2")
    e.add_argument("--eta", type=float, default=1 / 6)
    e.add_argument("--c", type=float, default=None, help="gap to use instead of computing one")
    e.add_argument("--cap", type=int, default=400_000)
    e.set_defaults(func=cmd_expander)

    v = sub.add_parser("verify-expansion", parents=[common], help="check expansion on random test sets")
    v.add_argument("--q", type=int, default=32)
    v.add_argument("--generators", choices=["sl2", "translations"], default="sl2")
    v.add_argument("--eta", type=float, default=1 / 6)
    v.add_argument("--c", type=float, default=None)
    v.add_argument("--tests", type=int, default=20)
    v.add_argument("--punctured", action="store_true")
    v.set_defaults(func=cmd_verify_expansion)

    m = sub.add_parser("match", parents=[common], help="staged matching on a random bipartite graph")
    m.add_argument("--n", type=int, default=200)
    m.add_argument("--degree", type=int, default=3)
    m.add_argument("--stages", type=int, default=None)
    m.add_argument("--c", type=float, default=None, help="expansion constant for the decay bound")
    m.set_defaults(func=cmd_match)

    q = sub.add_parser("equidecompose", parents=[common], help="end-to-end certificate on the torus")
    q.add_argument("--config", help="JSON experiment config")
    q.add_argument("--q", type=int, default=32)
    q.add_argument("--generators", choices=["sl2", "translations"], default="sl2")
    q.add_argument("--eta", type=float, default=None)
    q.add_argument("--stages", type=int, default=None)
    q.add_argument("--certificate", help="write the certificate JSON here")
    q.set_defaults(func=cmd_equidecompose)

    d = sub.add_parser("diffuser", parents=[common], help="Monte Carlo diffuser inequality")
    d.add_argument("--samples", type=int, default=1_000_000)
    d.add_argument("--bins", type=int, default=32)
    d.add_argument("--sets", type=int, default=20)
    d.add_argument("--foliation", action="store_true", help="also run the foliation consistency check")
    d.set_defaults(func=cmd_diffuser)

    c = sub.add_parser("cube", parents=[common], help="cube geometry identities")
    c.add_argument("--check", action="store_true", help="print residuals (default behaviour)")
    c.set_defaults(func=cmd_cube)

    b = sub.add_parser("bounds", parents=[common], help="explicit size-bound ledgers")
    b.add_argument("--eta", type=float, default=2 ** -14)
    b.add_argument("--ledger", choices=["expander", "cube", "sphere", "all"], default="expander")
    b.add_argument("--markdown", action="store_true", help="markdown tables (default text output)")
    b.set_defaults(func=cmd_bounds)

    r = sub.add_parser("reduce-open", parents=[common], help="open-set reduction on a planar grid")
    r.add_argument("--q", type=int, default=8)
    r.set_defaults(func=cmd_reduce_open)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        _threads(args)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc)}) + "\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
