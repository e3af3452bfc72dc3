"""Logging utilities and version display."""

import os
import platform
from importlib.metadata import PackageNotFoundError, version


class Log:
    RESET = "\033[0m"
    BOLD = "\033[1m"
    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    BLUE = "\033[34m"
    CYAN = "\033[36m"
    PURPLE = "\033[0;35m"


def log_info(msg):
    print(f"{Log.CYAN} {msg}{Log.RESET}")


def log_ok(msg):
    print(f"{Log.GREEN} {msg}{Log.RESET}")


def log_warn(msg):
    print(f"{Log.YELLOW} {msg}{Log.RESET}")


def log_err(msg):
    print(f"{Log.RED} {msg}{Log.RESET}")


def log_deb(msg):
    if os.environ.get("MOTIONFUSE_DEBUG"):
        print(f"{Log.PURPLE}󰨰 {msg}{Log.RESET}")


def log_table(rows, headers):
    """Print rows as left-aligned columns under a bold header line."""
    cells = [[str(c) for c in r] for r in rows]
    widths = [len(h) for h in headers]
    for r in cells:
        widths = [max(w, len(c)) for w, c in zip(widths, r)]

    head = "  ".join(f"{h:<{w}}" for h, w in zip(headers, widths))
    print(f"{Log.BOLD}{head}{Log.RESET}")
    for r in cells:
        print("  ".join(f"{c:<{w}}" for c, w in zip(r, widths)))


def get_version() -> str:
    try:
        return version("motionfuse")
    except PackageNotFoundError:
        return "unknown"


def print_version():
    title = f"{Log.BOLD}{Log.CYAN}motionfuse{Log.RESET}"
    v = f"{Log.GREEN}{get_version()}{Log.RESET}"
    py = f"{Log.YELLOW}{platform.python_version()}{Log.RESET}"
    plat = f"{Log.BLUE}{platform.system()}-{platform.machine()}{Log.RESET}"

    block = (
        f"{title}\n"
        f"{Log.BOLD}Version   {Log.RESET}: {v}\n"
        f"{Log.BOLD}Python    {Log.RESET}: {py}\n"
        f"{Log.BOLD}Platform  {Log.RESET}: {plat}"
    )

    print(block)
    raise SystemExit(0)
