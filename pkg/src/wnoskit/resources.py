"""Bundled control programs and scenario files."""

from importlib import resources


def program_text(name: str) -> str:
    if not name.endswith(".wnos"):
        name += ".wnos"
    return resources.files("wnoskit").joinpath("programs", name).read_text(encoding="utf-8")


def scenario_text(name: str) -> str:
    if not name.endswith(".scn"):
        name += ".scn"
    return resources.files("wnoskit").joinpath("data", name).read_text(encoding="utf-8")


def list_programs() -> list:
    base = resources.files("wnoskit").joinpath("programs")
    return sorted(p.name for p in base.iterdir() if p.name.endswith(".wnos"))


def list_scenarios() -> list:
    base = resources.files("wnoskit").joinpath("data")
    return sorted(p.name for p in base.iterdir() if p.name.endswith(".scn"))
