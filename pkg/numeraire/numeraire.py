# numeraire : log-optimal portfolios and asymptotic arbitrage diagnostics

import argparse
import logging
import os
from datetime import datetime

import halo
from pyfiglet import Figlet
from tqdm import tqdm

from .classes import ConfigError, Pool
from .colors import cyn, grn, red, ylw, verdict_color
from .config import SETTINGS_FILE, load_scenario, load_settings
from .scenario import REPORT, run_scenario

from .__init__ import __version__


def banner():
    custom_fig = Figlet(font="slant")
    print(custom_fig.renderText("numeraire"))
    print("This is free software with ABSOLUTELY NO WARRANTY")


# ****************************************************************************
# *                               Set-up/Parse                               *
# ****************************************************************************


def formatter(prog):
    return argparse.HelpFormatter(prog, max_help_position=52)


def build_parser():
    parser = argparse.ArgumentParser(prog="numeraire", formatter_class=formatter)
    parser.add_argument(
        "-v", "--version", action="version", version=f"numeraire version: {__version__}"
    )
    parser.add_argument(
        "--settings", help="Path to settings file (default ~/.numeraire/config.json)"
    )

    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    run_p = sub.add_parser("run", help="Run a scenario", formatter_class=formatter)
    run_p.add_argument("--config", required=True, help="Scenario config file")
    run_p.add_argument("--threads", type=int, help="Worker threads (default from settings)")
    run_p.add_argument("--out", help="Output folder (default <OUT_DIR>/<config name>)")

    val_p = sub.add_parser("validate", help="Check a scenario config", formatter_class=formatter)
    val_p.add_argument("--config", required=True, help="Scenario config file")

    return parser


def setup_logging(log_folder):
    logging.basicConfig(
        filename=os.path.join(log_folder, datetime.now().strftime("%Y-%m-%d")),
        level=logging.DEBUG,
        datefmt="%H:%M:%S",
        format="%(asctime)s %(levelname)s: %(message)s",
    )


def out_folder(args, cfg, settings):
    if args.out is not None:
        return os.path.abspath(args.out)
    if cfg.output_dir is not None:
        return cfg.resolve(cfg.output_dir)
    name = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(settings["OUT_DIR"], name)


def progress(iterable, **kwargs):
    return tqdm(iterable, desc="n", **kwargs)


# ****************************************************************************
# *                               Main Program                               *
# ****************************************************************************


def run(argv=None):
    """
    @brief      Parses argv, runs the command and returns the exit code.
    """
    args = build_parser().parse_args(argv)
    banner()
    spin = halo.Halo(spinner="dots", placement="right", color="yellow")

    try:
        settings = load_settings(args.settings or SETTINGS_FILE)
        setup_logging(settings["LOG_FOLDER"])

        spin.start("Reading: " + args.config)
        cfg = load_scenario(args.config)
        spin.stop_and_persist(symbol="✔")
    except ConfigError as e:
        spin.stop()
        print(red("ERROR"), e)
        logging.error("%s", e)
        return 2

    if args.command == "validate":
        print(grn("Valid:"), cyn(args.config), "is a", cfg.kind, "scenario")
        return 0

    threads = args.threads if args.threads is not None else settings["THREADS"]
    if threads < 1:
        print(red("ERROR"), "--threads must be >= 1")
        return 2

    out_dir = out_folder(args, cfg, settings)
    print("Running", ylw(cfg.kind), "scenario with", threads, "thread(s)")
    logging.info("Running %s with %d thread(s) into %s", args.config, threads, out_dir)

    with Pool(threads) as pool:
        code, report = run_scenario(cfg, out_dir, pool=pool, progress=progress)

    if code != 0:
        print(red("ERROR"), report["error"])
        return code

    v = report["verdict"]
    print(grn("Verdict:"), verdict_color(v["label"]), "(" + str(v["basis"]) + ")")
    print(grn("Report:"), cyn(os.path.join(out_dir, REPORT)))
    return 0


def main():
    # Entry point for 'numeraire' as terminal command.
    raise SystemExit(run())
