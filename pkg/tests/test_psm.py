from collections import Counter

import pytest

from psmscope.config import PsmThresholds
from psmscope.errors import PsmError
from psmscope.models import END, NOISE, START, Direction, Message, Role, Session, SessionSequence
from psmscope.services.psm import (
    Pfts,
    build_pfts,
    filter_noise,
    infer_psm,
    label_directions,
    pfts_to_psm,
    ps,
    pt,
    removed_edges,
)

I, R = Direction.INITIATOR, Direction.RESPONDER


def session(key, directions):
    return Session(
        key=key,
        messages=[
            Message(session_key=key, direction=d, index=i, payload=b"\x01", timestamp=float(i), source="a:1")
            for i, d in enumerate(directions)
        ],
    )


def seqs(*token_lists):
    return [SessionSequence(session_key=f"s{i}", tokens=list(t)) for i, t in enumerate(token_lists)]


class TestPfts:
    def test_counts_include_virtual_ends(self):
        pfts = build_pfts([[0, 1, 0], [0, NOISE, 1]])
        assert pfts.counts == Counter({(START, 0): 2, (0, 1): 2, (1, 0): 1, (0, END): 1, (1, END): 1})
        assert pfts.n_set == 7
        assert pfts.labels == [0, 1]

    def test_noise_only_sessions_are_skipped(self):
        assert build_pfts([[NOISE, NOISE], []]).n_set == 0

    def test_accepts_session_sequences(self):
        assert build_pfts(seqs([3, 4])) == build_pfts([[3, 4]])

    def test_probabilities(self):
        pfts = build_pfts([[0, 1, 0], [0, 1]])
        assert ps(pfts, 0, 1) == pytest.approx(2 / 3)
        assert pt(pfts, 0, 1) == pytest.approx(2 / 7)
        assert ps(pfts, 0, 5) == 0.0

    def test_probabilities_need_counts(self):
        with pytest.raises(PsmError):
            ps(build_pfts([[0]]), 7, 0)
        with pytest.raises(PsmError):
            pt(Pfts(), 0, 1)


class TestFilterNoise:
    def test_rare_edge_in_large_set_needs_pt(self):
        pfts = Pfts(Counter({(0, 1): 999, (2, 3): 1}))
        assert ps(pfts, 2, 3) == 1.0
        kept = filter_noise(pfts, PsmThresholds(t_ps=0.05, t_pt=0.0))
        assert set(kept.counts) == {(0, 1), (2, 3)}
        filtered = filter_noise(pfts, PsmThresholds(t_ps=0.05, t_pt=0.05))
        assert filtered.counts == Counter({(0, 1): 999})

    def test_zero_thresholds_keep_everything(self, rng):
        pfts = build_pfts([rng.integers(-1, 4, size=6).tolist() for _ in range(10)])
        assert filter_noise(pfts, PsmThresholds(t_ps=0.0, t_pt=0.0)) == pfts

    def test_end_edge_restored_for_dead_end(self):
        pfts = Pfts(Counter({(START, 0): 10, (0, 1): 10, (1, END): 5, (1, 2): 5, (2, END): 5}))
        filtered = filter_noise(pfts, PsmThresholds(t_ps=0.0, t_pt=0.2))
        assert set(filtered.counts) == {(START, 0), (0, 1), (1, END)}
        assert filtered.counts[(1, END)] == 5

    def test_start_edge_restored_when_all_removed(self):
        pfts = Pfts(Counter({(START, 0): 1, (0, 1): 30, (1, 0): 29, (1, END): 1}))
        filtered = filter_noise(pfts, PsmThresholds())
        assert set(filtered.counts) == {(START, 0), (0, 1), (1, 0)}

    def test_reference_counts_drive_thresholds(self):
        pfts = Pfts(Counter({(0, 1): 1}))
        reference = Pfts(Counter({(0, 1): 1, (0, 2): 99}))
        assert filter_noise(pfts, PsmThresholds(), reference).n_set == 0

    def test_removed_edges_report(self):
        original = build_pfts([[0, 1]] * 20 + [[0, 2]])
        filtered = filter_noise(original, PsmThresholds())
        removed = removed_edges(original, filtered)
        assert [(r["from"], r["to"], r["count"]) for r in removed] == [("0", "2", 1), ("2", "end", 1)]
        assert removed[0]["ps"] == pytest.approx(1 / 21)
        assert removed[1]["pt"] == pytest.approx(1 / 63)

    def test_random_sets(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 15))
            original = build_pfts([rng.integers(-1, 6, size=int(rng.integers(0, 9))).tolist() for _ in range(n)])
            th = PsmThresholds(t_ps=float(rng.uniform(0, 0.5)), t_pt=float(rng.uniform(0, 0.3)))
            filtered = filter_noise(original, th)
            assert set(filtered.counts) <= set(original.counts)
            assert all(filtered.counts[e] == original.counts[e] for e in filtered.counts)
            removed = {(r["from"], r["to"]) for r in removed_edges(original, filtered)}
            assert len(removed) + len(filtered.edges) == len(original.edges)

            psm = pfts_to_psm(filtered, {label: I for label in filtered.labels})
            assert len(psm.inner_states) == len(filtered.labels)
            assert len(psm.transitions) == len(filtered.edges)
            for state in psm.states:
                edges = psm.outgoing(state.id)
                if edges:
                    assert sum(e.p for e in edges) == pytest.approx(1.0)

    def test_probabilities_normalize_and_filter_is_stable(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 15))
            original = build_pfts([rng.integers(-1, 6, size=int(rng.integers(1, 9))).tolist() for _ in range(n)])
            if original.n_set == 0:
                continue
            for source in original.totals:
                targets = [t for s, t in original.edges if s == source]
                assert sum(ps(original, source, t) for t in targets) == pytest.approx(1.0)
            assert sum(pt(original, *edge) for edge in original.edges) == pytest.approx(1.0)

            th = PsmThresholds(t_ps=float(rng.uniform(0, 0.5)), t_pt=float(rng.uniform(0, 0.3)))
            once = filter_noise(original, th)
            assert filter_noise(once, th, reference=original) == once


class TestPsmConstruction:
    def test_states_and_edges(self):
        psm = pfts_to_psm(build_pfts([[0, 1]] * 3), {0: I, 1: R})
        assert {(s.id, s.role) for s in psm.states} == {
            ("start", Role.START),
            ("end", Role.END),
            ("client-0", Role.CLIENT),
            ("server-1", Role.SERVER),
        }
        assert [(t.source, t.target, t.label, t.p) for t in psm.transitions] == [
            ("start", "client-0", "0", 1.0),
            ("client-0", "server-1", "1", 1.0),
            ("server-1", "end", None, 1.0),
        ]
        assert psm.has_path_to_end()

    def test_label_without_direction(self):
        with pytest.raises(PsmError, match="format 1"):
            pfts_to_psm(build_pfts([[0, 1]]), {0: I})

    def test_empty_set_gives_bare_machine(self):
        psm = pfts_to_psm(Pfts(), {})
        assert [s.role for s in psm.states] == [Role.START, Role.END]
        assert psm.transitions == []

    def test_infer_psm_records_filtering(self):
        psm = infer_psm(seqs(*([[0, 1]] * 20), [0, 2]), {0: I, 1: I, 2: I}, PsmThresholds(), protocol=4)
        assert psm.meta["protocol"] == 4
        assert psm.meta["sessions"] == 21
        assert (psm.meta["t_ps"], psm.meta["t_pt"]) == (0.05, 0.05)
        assert [(r["from"], r["to"]) for r in psm.meta["removed"]] == [("0", "2"), ("2", "end")]
        assert [(t.source, t.target, t.p) for t in psm.transitions] == [
            ("start", "client-0", 1.0),
            ("client-0", "client-1", 1.0),
            ("client-1", "end", 1.0),
        ]


class TestDirections:
    def test_majority(self):
        sessions = [session("a", [R, R, I])]
        assert label_directions(sessions, seqs([7, 7, 7])) == {7: R}

    def test_tie_goes_to_initiator(self):
        assert label_directions([session("a", [I, R])], seqs([5, 5])) == {5: I}

    def test_noise_is_ignored(self):
        directions = label_directions([session("a", [R, I, R])], seqs([NOISE, 2, 3]))
        assert directions == {2: I, 3: R}
