"""Version of the package.

Installed distribution metadata is preferred; a source checkout falls back to
``pyproject.toml`` next to the package directory.
"""

import importlib.metadata
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _get_version() -> str:
    try:
        dist = importlib.metadata.distribution("bergerflow")
    except importlib.metadata.PackageNotFoundError:
        pass
    else:
        located = pathlib.Path(str(dist.locate_file("bergerflow/__version__.py")))
        if located == pathlib.Path(__file__):
            return dist.version
    pyproject = pathlib.Path(__file__).parent.parent / "pyproject.toml"
    if pyproject.exists():
        with pyproject.open("rb") as f:
            version = tomllib.load(f).get("project", {}).get("version")
        if isinstance(version, str):
            return version
    return "unknown"


VERSION = _get_version()
