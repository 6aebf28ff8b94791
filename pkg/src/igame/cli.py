"""``igame`` command line.

Exit codes: 0 success, 2 configuration or validation error, 3 numeric
failure, 4 insufficient data.  Output files are written atomically.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .engine import exclude_derivative, simulate
from .epsilon import recover_epsilon
from .errors import ConfigError, IGameError, InsufficientDataError, NumericError, SimulationError
from .invariants import load_candidates, scan_omens, verdict_stability
from .model import load_game_file
from .oracle import PREDICTORS, LoopConfig, run_prediction_loop, strategic_analysis
from .trajectory import Trajectory, atomic_write

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, InsufficientDataError):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _game(path: str):
    g = load_game_file(path)
    if any(p.feedback is not None and p.feedback.order == 1 for p in g.players):
        g = exclude_derivative(g)
    return g


def _observed(g, path: str | None) -> Trajectory:
    if path is None:
        return simulate(g)
    traj = Trajectory.load(path, game=g.name, h=g.horizon.step)
    if traj.state_dim != g.state_dim:
        raise ConfigError(f"trajectory has {traj.state_dim} state columns, game has "
                          f"{g.state_dim}", "MISSING_COLUMNS")
    return traj


# -- commands --------------------------------------------------------------

def cmd_simulate(a) -> int:
    g = load_game_file(a.game)
    fmt = "jsonl" if a.format == "jsonl" else "csv"
    try:
        traj = simulate(g)
    except SimulationError as exc:
        if a.out and exc.partial is not None:
            exc.partial.save(a.out + ".partial", fmt)
        raise
    if a.out:
        traj.save(a.out, fmt)
    else:
        sys.stdout.write(traj.to_jsonl() if fmt == "jsonl" else traj.to_csv())
    return EXIT_OK


def _loop_config(a) -> LoopConfig:
    return LoopConfig(cap=a.depth_cap, predictor=a.predictor, depth=a.dt, window=a.window,
                      ridge=a.ridge, history=a.history, observer=a.observer,
                      pair_with=a.pair_with, correct_observer=a.correct_observer,
                      noise=a.noise, seed=a.seed)


def cmd_predict(a) -> int:
    g = _game(a.game)
    cfg = _loop_config(a)
    cfg.check(g)
    res = run_prediction_loop(g, _observed(g, a.trajectory), cfg)
    if a.log:
        atomic_write(a.log, res.log_jsonl())
    _emit(res.metrics_json(), a.out)
    s = res.summary
    print(f"anchors={s['anchors']} baseline.state_rmse={s['baseline']['state_rmse']:.6g} "
          f"corrected.state_rmse={s['corrected']['state_rmse']:.6g} "
          f"improved={s['improved_fraction']:.3f}", file=sys.stderr if not a.out else sys.stdout)
    return EXIT_OK


def cmd_estimate_eps(a) -> int:
    g = load_game_file(a.game)
    trace = recover_epsilon(g, _observed(g, a.trajectory), threshold=a.threshold)
    _emit(trace.to_csv(), a.out)
    return EXIT_OK


def cmd_invariants(a) -> int:
    g = load_game_file(a.game)
    try:
        text = Path(a.candidates).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read candidates {a.candidates}: {exc}") from None
    cands = load_candidates(text)
    if a.stability:
        rep = verdict_stability(g, cands, runs=a.stability, delta=a.delta, seed=a.seed,
                                tol_rel=a.tol_rel, tol_dyn=a.tol_dyn)
    else:
        rep = scan_omens(cands, _observed(g, a.trajectory), a.tol_rel, a.tol_dyn)
    _emit(rep.to_json(), a.out)
    return EXIT_OK


def cmd_analyze(a) -> int:
    g = _game(a.game)
    cfg = _loop_config(a)
    cfg.check(g)
    observed = _observed(g, a.trajectory) if a.trajectory else None
    _emit(strategic_analysis(g, cfg, observed).to_json(), a.out)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def _nonneg(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return v


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, formats=("csv", "jsonl", "json")):
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--seed", type=_seed, default=0, help="64-bit seed for randomized harnesses")
    p.add_argument("--format", choices=formats, default=formats[0])


def _loop_args(p):
    p.add_argument("--predictor", choices=PREDICTORS, default="frozen")
    p.add_argument("--dt", type=_positive(float), default=None,
                   help="prediction depth (default: 50 grid steps)")
    p.add_argument("--depth-cap", type=_positive(float), default=1.0,
                   help="admissible prediction depth")
    p.add_argument("--window", type=_positive(int), default=200, help="fit window W")
    p.add_argument("--lambda", dest="ridge", type=_nonneg, default=1e-8, help="ridge weight")
    p.add_argument("--history", type=int, default=10, help="points used by the linear predictor")
    p.add_argument("--observer", type=_positive(int), default=1)
    p.add_argument("--pair-with", choices=("phi", "predicted"), default="phi")
    p.add_argument("--correct-observer", action="store_true")
    p.add_argument("--noise", type=_nonneg, default=0.0,
                   help="uniform observation noise amplitude on realized controls")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="igame", description="Interactive differential game toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run the game's scenario and write the trajectory")
    p.add_argument("game")
    _common(p, ("csv", "jsonl"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="baseline and corrected short-term predictions")
    p.add_argument("game")
    p.add_argument("trajectory", nargs="?", help="observed run (default: simulate the game)")
    _common(p, ("json",))
    _loop_args(p)
    p.add_argument("--log", help="prediction log (JSON lines)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("estimate-eps", help="recover eps per sample from a trajectory")
    p.add_argument("game")
    p.add_argument("trajectory", nargs="?")
    _common(p, ("csv",))
    p.add_argument("--threshold", type=_positive(float), default=1e-8,
                   help="identifiability threshold on the smallest singular value")
    p.set_defaults(func=cmd_estimate_eps)

    p = sub.add_parser("invariants", help="scan candidate quantities for omens")
    p.add_argument("game")
    p.add_argument("trajectory", nargs="?")
    p.add_argument("candidates")
    _common(p, ("json",))
    p.add_argument("--tol-rel", type=_positive(float), default=1e-6)
    p.add_argument("--tol-dyn", type=_positive(float), default=1e-6)
    p.add_argument("--stability", type=_positive(int), default=0,
                   help="re-scan under N seeded scenario perturbations")
    p.add_argument("--delta", type=_nonneg, default=1e-3, help="perturbation sup-norm")
    p.set_defaults(func=cmd_invariants)

    p = sub.add_parser("analyze", help="long-term associated-game path plus corrected segments")
    p.add_argument("game")
    p.add_argument("trajectory", nargs="?")
    _common(p, ("json",))
    _loop_args(p)
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return a.func(a)
    except IGameError as exc:
        print(f"igame {a.command}: error [{exc.code}]: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (ValueError, OSError) as exc:
        print(f"igame {a.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
