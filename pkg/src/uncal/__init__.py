"""Toolkit for executable uncertainty interfaces over recorded model traces.

Subpackages by concern: `trajspace` (exact tilted-policy simulation),
`rewards` (answer matching and both reward functions), `calib` (calibration
metrics), `recal` (post-hoc recalibration), `probe` (hidden-state wrongness
probe), `ragctl` (retrieval-trigger simulation), `reprgeo` (representation
analytics), `cli` (the `uncal` command).
"""

__version__ = "0.1.0"

from importlib import resources as _resources


def fixture_path(name: str):
    """Filesystem path of a bundled fixture file (context-manager free for
    installed wheels backed by real files)."""
    return _resources.files(__name__) / "fixtures" / name
