"""Shared pipeline helpers for the test modules."""

from cam_regge.mulholland import attach_s_conj
from cam_regge.pade import PadePolicy, regge_poles_at_energy
from cam_regge.tracking import TrackPolicy, track


def regge_pipeline(table, policy=PadePolicy(), track_policy=TrackPolicy()):
    """Poles at every grid energy, tracked, with S* attached; returns (trajectories, approximants)."""
    per, ras = {}, {}
    for E in table.energies:
        ra, poles = regge_poles_at_energy(table, float(E), policy)
        per[float(E)] = poles
        ras[float(E)] = ra
    trajs = [attach_s_conj(t, ras) for t in track(per, track_policy)]
    return trajs, ras


ACCEPTANCE_LINES = []


def criterion(number, title):
    """Record one PASS/FAIL line per acceptance criterion; the test body may return a detail string."""
    import functools

    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
                ACCEPTANCE_LINES.append(f"criterion {number:2d} FAIL  {title}: {msg}")
                raise
            ACCEPTANCE_LINES.append(f"criterion {number:2d} PASS  {title}: {detail or ''}")
        return run
    return deco
