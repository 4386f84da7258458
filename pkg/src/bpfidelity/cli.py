"""Command-line interface: ``bpfid <command> [options]``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime errors.
The resolved settings of every run are printed to stderr as JSON.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .errors import BPFidelityError
from .harness import (
    SCENARIOS,
    SOLVERS,
    ExperimentSpec,
    build_operator,
    build_scenario,
    make_prior,
    run_sweep,
)
from .imaging import write_pgm
from .linops import SpectralDecomposition, condition_number_sq, spectrum
from .priors import DenoiserAdapter
from .solvers import IdbpConfig, equivalence_check
from .tikhonov import NoiseSpec, check_observations, gamma_from_prior

log = logging.getLogger("bpfidelity")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_floats(text: str, flag: str) -> list[float]:
    """``a,b,c`` or a geometric range ``start:stop:count``."""
    try:
        if ":" in text:
            a, b, k = text.split(":")
            if int(k) < 1:
                raise ValueError
            return [float(v) for v in np.geomspace(float(a), float(b), int(k))]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: cannot parse {text!r} (use a,b,c or start:stop:count)") from None


def _add_problem_flags(p, betas=True):
    p.add_argument("--scenario", choices=SCENARIOS, default="srx3")
    p.add_argument("--size", type=int, default=64, help="image side length (default 64)")
    p.add_argument("--mratio", type=float, default=0.5, help="m/n for cs and inpaint (default 0.5)")
    p.add_argument("--image", help="8-bit binary PGM; the built-in phantom when omitted")
    p.add_argument("--seed", type=int, default=0)
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--sigma", type=float, help="noise standard deviation (default 0)")
    noise.add_argument("--snr", type=float, help="noise level as SNR in dB")
    if betas:
        p.add_argument("--fidelity", choices=("ls", "bp"), default="bp")
        p.add_argument("--eps", help="BP diagonal loading, one value or a list")
        p.add_argument("--prior", default="l2", help="l2, l2fd, l2sfd, tv or denoiser:NAME (default l2)")
        p.add_argument("--beta", default="1", help="list a,b,c or range start:stop:count")
        p.add_argument("--solver", choices=SOLVERS, default=None,
                       help="default: closed for l2 priors, fista otherwise")
        p.add_argument("--iters", type=int)
        p.add_argument("--draws", type=int, default=5, help="noise realizations per cell (default 5)")
        p.add_argument("--out", help="CSV output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpfid", description="Compare least-squares and back-projection fidelity terms.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", help="singular value range of a scenario operator")
    _add_problem_flags(p, betas=False)

    p = sub.add_parser("solve", help="reconstruct at a single beta")
    _add_problem_flags(p)
    p.add_argument("--save-image", help="write the first reconstruction as PGM")

    p = sub.add_parser("sweep", help="PSNR/MSE table over a beta grid")
    _add_problem_flags(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")

    p = sub.add_parser("verify-observations", help="check the LS/BP observations for a spectrum")
    _add_problem_flags(p, betas=False)
    p.add_argument("--spectrum", help="comma-separated singular values (m = n, V = I)")
    p.add_argument("--x", help="comma-separated signal for --spectrum (default all ones)")
    p.add_argument("--prior", default="l2", help="l2, l2fd or l2sfd with --scenario")
    p.add_argument("--beta", default="1", help="beta_LS values")
    p.add_argument("--beta-bp", type=float, help="beta_BP for the per-index comparison")

    p = sub.add_parser("idbp-equiv", help="max deviation between IDBP and ISTA on BP")
    _add_problem_flags(p, betas=False)
    p.add_argument("--prior", default="denoiser:median", help="denoiser:NAME")
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--delta", type=float)
    p.add_argument("--eps", type=float, default=0.0)
    return parser


def _noise(args) -> NoiseSpec:
    if args.snr is not None:
        return NoiseSpec(snr_db=args.snr)
    return NoiseSpec(sigma_e=args.sigma if args.sigma is not None else 0.0)


def _spec(args, betas=(1.0,), **overrides) -> ExperimentSpec:
    kw = dict(scenario=args.scenario, size=args.size, image=args.image, mratio=args.mratio,
              noise=_noise(args), seed=args.seed, betas=tuple(betas))
    for name in ("fidelity", "prior", "iters", "draws"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    if getattr(args, "eps", None) is not None and isinstance(args.eps, str):
        eps = parse_floats(args.eps, "--eps")
        if len(eps) == 1:
            kw["eps"] = eps[0]
        else:
            kw["eps_grid"] = tuple(eps)
    if hasattr(args, "solver"):
        prior = kw.get("prior", "l2")
        kw["solver"] = args.solver or ("closed" if prior.startswith("l2") else "fista")
    kw.update(overrides)
    try:
        return ExperimentSpec(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit_spec(info: dict):
    print(json.dumps(info, sort_keys=True), file=sys.stderr)


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


def cmd_spectrum(args) -> int:
    spec = _spec(args)
    _emit_spec({"command": "spectrum", **spec.to_dict()})
    op = build_operator(spec)
    dec = spectrum(op)
    s = dec.singular_values
    print(f"m={op.m} n={op.n}")
    print(f"lambda_1^2 = {s[0] ** 2:.6g}")
    print(f"lambda_m^2 = {s[-1] ** 2:.6g}")
    print(f"condition number = {condition_number_sq(dec):.6g}")
    return 0


def _sweep_like(args, workers=1, timing=False) -> int:
    betas = parse_floats(args.beta, "--beta")
    if args.command == "solve" and len(betas) != 1:
        raise UsageError("--beta: solve takes a single value")
    spec = _spec(args, betas)
    _emit_spec({"command": args.command, "workers": workers, "timing": timing, **spec.to_dict()})
    result = run_sweep(spec, workers=workers, timing=timing)
    fh = _open_out(args.out)
    try:
        result.to_csv(fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if result.baseline_psnr is not None:
        print(f"bicubic baseline PSNR = {result.baseline_psnr:.4f} dB", file=sys.stderr)
    if result.errors:
        for r in result.errors:
            print(f"cell beta={r.beta:g} eps={r.eps:g} failed: {r.error}", file=sys.stderr)
        return 2
    (beta, eps), best = result.best()
    print(f"best beta={beta:.6g} eps={eps:.6g}: mean PSNR {best:.4f} dB", file=sys.stderr)
    if args.command == "solve" and args.save_image:
        _save_reconstruction(spec, args.save_image)
    return 0


def _save_reconstruction(spec, path):
    from .harness import _Context, _solve_cell, resolve_eps_grid

    ctx = _Context(spec, analytic=False)
    eps = resolve_eps_grid(spec, ctx.sigma)[0]
    x, _ = _solve_cell(ctx, spec.betas[0], eps)[0]
    write_pgm(path, x.reshape(spec.image_shape))


def cmd_verify(args) -> int:
    betas = parse_floats(args.beta, "--beta")
    sigma = args.sigma if args.sigma is not None else 0.0
    if args.snr is not None:
        raise UsageError("--snr: verify-observations takes --sigma")
    if args.spectrum:
        lam = np.array(parse_floats(args.spectrum, "--spectrum"))
        if np.any(lam <= 0):
            raise UsageError("--spectrum: singular values must be positive")
        lam = np.sort(lam)[::-1]
        n = lam.size
        dec = SpectralDecomposition(lam, n, V=np.eye(n))
        x = np.ones(n) if args.x is None else np.array(parse_floats(args.x, "--x"))
        if x.size != n:
            raise UsageError(f"--x: expected {n} values")
        gamma = np.ones(n)
        _emit_spec({"command": "verify-observations", "spectrum": lam.tolist(), "x": x.tolist(),
                    "betas": betas, "beta_bp": args.beta_bp, "sigma_e": sigma})
    else:
        if not args.prior.startswith("l2"):
            raise UsageError("--prior: observations need an l2 prior")
        spec = _spec(args, prior=args.prior)
        _emit_spec({"command": "verify-observations", "beta_bp": args.beta_bp, **spec.to_dict(), "betas": betas})
        sc = build_scenario(spec)
        dec = spectrum(sc.op)
        x = sc.ground_truth
        g = gamma_from_prior(make_prior(spec), dec)
        gamma = g.gamma_sq
        if not g.exact:
            print(f"note: prior is not diagonal in the singular basis (off-diagonal ratio {g.offdiag_ratio:.3g})")
    for beta in betas:
        rep = check_observations(dec, x, gamma, beta, args.beta_bp, sigma)
        if len(betas) > 1:
            print(f"beta_LS={beta:g}")
        for line in rep.lines():
            print(line)
    return 0


def cmd_idbp_equiv(args) -> int:
    if not args.prior.startswith("denoiser:"):
        raise UsageError("--prior: idbp-equiv needs denoiser:NAME")
    spec = _spec(args, prior=args.prior, fidelity="bp", solver="idbp", iters=args.iters)
    sc = build_scenario(spec)
    try:
        cfg = IdbpConfig(sigma_e=sc.sigma_e, delta=args.delta, iters=args.iters, eps=args.eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit_spec({"command": "idbp-equiv", **spec.to_dict(), "iters": cfg.iters, "delta": cfg.delta, "eps": cfg.eps})
    denoiser = make_prior(spec)
    assert isinstance(denoiser, DenoiserAdapter)
    dev = equivalence_check(sc.op, sc.y, denoiser, cfg, sc.init)
    print(f"max |x_idbp - x_ista|_inf over {cfg.iters} iterations = {dev:.3e}")
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "solve": lambda a: _sweep_like(a),
    "sweep": lambda a: _sweep_like(a, workers=a.workers, timing=a.timing),
    "verify-observations": cmd_verify,
    "idbp-equiv": cmd_idbp_equiv,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BPFidelityError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
