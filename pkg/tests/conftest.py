"""Shared fixtures: hand-built corpora written through the real CSV path."""

from datetime import date

import pytest

from eventscope.corpus import load_corpus


def write_corpus_files(tmp_path, checkins, venues, social, prefix=""):
    """Write raw rows to the three corpus CSVs and return their paths.

    checkins: (user_id, venue_id, iso_timestamp) rows
    venues:   (venue_id, lat, lon, category) rows
    social:   (user_a, user_b) rows
    """
    cpath = tmp_path / f"{prefix}checkins.csv"
    vpath = tmp_path / f"{prefix}venues.csv"
    spath = tmp_path / f"{prefix}social.csv"
    cpath.write_text("user_id,venue_id,timestamp\n"
                     + "".join(f"{u},{v},{t}\n" for u, v, t in checkins))
    vpath.write_text("venue_id,lat,lon,category\n"
                     + "".join(f"{v},{lat},{lon},{cat}\n" for v, lat, lon, cat in venues))
    spath.write_text("user_a,user_b\n"
                     + "".join(f"{a},{b}\n" for a, b in social))
    return cpath, vpath, spath


def corpus_from(tmp_path, checkins, venues, social, tz=0, prefix=""):
    c, v, s = write_corpus_files(tmp_path, checkins, venues, social, prefix)
    return load_corpus(c, v, s, tz)


@pytest.fixture
def tiny_corpus(tmp_path):
    """Two venues, two users, three check-ins, one friendship."""
    return corpus_from(
        tmp_path,
        checkins=[
            ("alice", "v1", "2011-05-01T10:00:00Z"),
            ("alice", "v2", "2011-05-02T20:30:00Z"),
            ("bob", "v1", "2011-05-02T11:15:00Z"),
        ],
        venues=[
            ("v1", 51.5, -0.12, "Coffee Shop"),
            ("v2", 51.51, -0.13, "Stadium"),
        ],
        social=[("alice", "bob")],
    )


CUTOFF = date(2011, 6, 1)
