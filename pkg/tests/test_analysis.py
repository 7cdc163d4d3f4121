"""Static analyses: footprint collisions, entry scatter, NOP what-ifs.

The collision counter is validated against a quadratic brute-force oracle
that materializes every footprint into a multiset. The what-if tool is
validated against golden before/after addresses for the compiled
binary-search kernel and against an independent tag-image oracle that pushes
each branch through a zeroed history register and reads the tag hash back.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbp_workbench.analysis import (
    BINARY_SEARCH_LAYOUT,
    CollisionReport,
    StaticBranch,
    count_collisions,
    nop_whatif,
    parse_branch_list,
    scatter_report,
    tag_contribution,
)
from cbp_workbench.configs import (
    ALDERLAKE_SCHEME,
    FIRESTORM_SCHEME,
    HASWELL_SCHEME,
    ORYON_SCHEME,
    SKYLAKE_SCHEME,
    builtin,
)
from cbp_workbench.hashspec import compute_tag
from cbp_workbench.history import (
    FootprintScheme,
    compute_footprint,
    initial_state,
    update_history,
)
from cbp_workbench.rng import Stream
from cbp_workbench.sim import SimReport
from cbp_workbench.trace import KIND_COND, KIND_UNCOND, BranchRecord
from cbp_workbench.workloads import NOP_VARIANTS, layout_branches

# ---------------------------------------------------------------------------
# Brute-force oracle: written before the fast implementation, kept quadratic
# on purpose. Counts unordered pairs of distinct (pc, target) branches whose
# footprints compare equal.
# ---------------------------------------------------------------------------


def oracle_count_collisions(branches, scheme):
    footprints = [compute_footprint(scheme, b.pc, b.target) for b in branches]
    count = 0
    for i in range(len(branches)):
        for j in range(i + 1, len(branches)):
            a, b = branches[i], branches[j]
            if (a.pc, a.target) == (b.pc, b.target):
                continue
            if footprints[i] == footprints[j]:
                count += 1
    return count


def br(pc, target, kind=KIND_COND):
    return StaticBranch(pc=pc, target=target, kind=kind)


# ---------------------------------------------------------------------------
# count_collisions golden cases
# ---------------------------------------------------------------------------


class TestCountCollisions:
    def test_adjacent_pair_invisible_low_bits(self):
        # B differs only in bit 2, which Haswell's B[19:4] slice cannot see.
        pair = [br(0x1000, 0x2000), br(0x1004, 0x2000)]
        assert count_collisions(pair, HASWELL_SCHEME).colliding_pairs == 1

    def test_adjacent_pair_visible_low_bits(self):
        # Alder Lake's B[15:0] slice sees bit 2, so the same pair is distinct.
        pair = [br(0x1000, 0x2000), br(0x1004, 0x2000)]
        assert count_collisions(pair, ALDERLAKE_SCHEME).colliding_pairs == 0

    def test_shared_target_narrow_branch_slice(self):
        # Firestorm keeps only B[5:2]: two branches from different cache
        # lines that jump to one shared target collide iff B[5:2] agree.
        same_low = [br(0x1000, 0x3000), br(0x2000, 0x3000)]
        diff_low = [br(0x1004, 0x3000), br(0x1008, 0x3000)]
        assert count_collisions(same_low, FIRESTORM_SCHEME).colliding_pairs == 1
        assert count_collisions(diff_low, FIRESTORM_SCHEME).colliding_pairs == 0

    def test_exact_duplicates_do_not_pair(self):
        dup = [br(0x1000, 0x3000), br(0x1000, 0x3000)]
        assert count_collisions(dup, FIRESTORM_SCHEME).colliding_pairs == 0

    def test_duplicates_still_pair_with_third_branch(self):
        # Two copies of one branch plus a distinct branch with the same
        # footprint: the copies pair with the newcomer but not each other.
        group = [br(0x1000, 0x3000), br(0x1000, 0x3000), br(0x2000, 0x3000)]
        report = count_collisions(group, FIRESTORM_SCHEME, keep_pairs=True)
        assert report.colliding_pairs == 2
        assert len(report.pairs) == 2

    def test_empty_and_singleton(self):
        assert count_collisions([], ORYON_SCHEME).colliding_pairs == 0
        assert count_collisions([br(4, 8)], ORYON_SCHEME).colliding_pairs == 0

    def test_report_metadata(self):
        report = count_collisions([], SKYLAKE_SCHEME)
        assert report.scheme == "skylake"
        assert report.counting == "unordered-pairs"
        assert report.pairs is None  # not materialized unless asked

    def test_pair_list_matches_count_and_is_sorted(self):
        branches = [br(0x40 * i, 0x3000) for i in range(8)]  # all B[5:2] == 0
        report = count_collisions(branches, FIRESTORM_SCHEME, keep_pairs=True)
        assert report.colliding_pairs == math.comb(8, 2)
        assert len(report.pairs) == report.colliding_pairs
        keys = [((a.pc, a.target), (b.pc, b.target)) for a, b in report.pairs]
        assert keys == sorted(keys)
        assert all(ka < kb for ka, kb in keys)

    def test_to_dict_round(self):
        report = count_collisions([br(0, 4), br(0x40, 4)], FIRESTORM_SCHEME)
        d = report.to_dict()
        assert d["scheme"] == "firestorm"
        assert d["colliding_pairs"] == 1
        assert d["counting"] == "unordered-pairs"


# ---------------------------------------------------------------------------
# count_collisions == oracle (property), and scheme monotonicity
# ---------------------------------------------------------------------------

# Small address pools force frequent collisions; 4-byte alignment matches
# real instruction layouts but is not required by the counter.
_branches = st.builds(
    br,
    pc=st.integers(0, 0x7F).map(lambda v: v * 4),
    target=st.sampled_from([0x0, 0x4, 0x40, 0x44, 0x80, 0x1000, 0x1040]),
)

_SCHEMES = [FIRESTORM_SCHEME, ORYON_SCHEME, SKYLAKE_SCHEME, HASWELL_SCHEME,
            ALDERLAKE_SCHEME]


@given(branches=st.lists(_branches, max_size=120), scheme=st.sampled_from(_SCHEMES))
@settings(max_examples=60, deadline=None)
def test_matches_bruteforce_oracle(branches, scheme):
    assert count_collisions(branches, scheme).colliding_pairs == \
        oracle_count_collisions(branches, scheme)


def test_matches_bruteforce_oracle_at_thousand_branches():
    rng = Stream(2024).spawn("collision-oracle")
    branches = [br((rng.u64() % 0x100) * 4, 4 * (rng.u64() % 0x40))
                for _ in range(1000)]
    for scheme in _SCHEMES:
        assert count_collisions(branches, scheme).colliding_pairs == \
            oracle_count_collisions(branches, scheme)


@st.composite
def _scheme_and_subset(draw):
    """A scheme plus one whose input bit-set is a subset of the first's."""
    b_super = draw(st.sets(st.integers(0, 20), min_size=1, max_size=8))
    t_super = draw(st.sets(st.integers(0, 20), max_size=8))
    b_sub = draw(st.sets(st.sampled_from(sorted(b_super)), min_size=1))
    t_sub = draw(st.sets(st.sampled_from(sorted(t_super)))) if t_super else set()
    mk = lambda name, b, t: FootprintScheme(  # noqa: E731
        name=name, branch_bits=tuple(sorted(b)), target_bits=tuple(sorted(t)),
        split=True, shift_amount=1)
    return mk("superset", b_super, t_super), mk("subset", b_sub, t_sub)


@given(schemes=_scheme_and_subset(), branches=st.lists(_branches, max_size=80))
@settings(max_examples=60, deadline=None)
def test_wider_input_bitset_never_adds_collisions(schemes, branches):
    superset, subset = schemes
    assert count_collisions(branches, superset).colliding_pairs <= \
        count_collisions(branches, subset).colliding_pairs


def test_builtin_scheme_collision_ordering():
    # Corpus with the two patterns that separate the schemes: clusters of
    # adjacent branches whose targets are 64-byte-aligned function entries
    # (invisible to B slices blind below bit 4 and to 6-bit T slices), and
    # groups of scattered branches jumping to one shared cleanup target
    # (invisible to a 4-bit B slice). Wide low-bit coverage collides least.
    rng = Stream(7).spawn("ordering-corpus")
    branches = []
    for _ in range(300):
        base = (rng.u64() % (1 << 22)) * 4
        for off in (0, 4, 8, 16):
            branches.append(br(base + off, (rng.u64() % (1 << 18)) * 64))
    for _ in range(30):
        shared_target = (rng.u64() % (1 << 24)) * 4
        for _ in range(8):
            branches.append(br((rng.u64() % (1 << 22)) * 4, shared_target))
    counts = {s.name: count_collisions(branches, s).colliding_pairs
              for s in (HASWELL_SCHEME, SKYLAKE_SCHEME, FIRESTORM_SCHEME,
                        ALDERLAKE_SCHEME)}
    assert counts["alderlake"] < counts["firestorm"] \
        < counts["skylake"] < counts["haswell"]


# ---------------------------------------------------------------------------
# scatter_report
# ---------------------------------------------------------------------------


def _fake_report(scatter, per_branch):
    return SimReport(config_name="c", trace_name="t", mispredictions=0,
                     cond_branches=0, total_instructions=0, mpki=0.0,
                     mispred_rate=0.0, per_branch=per_branch, scatter=scatter)


class TestScatterReport:
    def test_empty(self):
        assert scatter_report(_fake_report({}, {})) == []

    def test_ranking_and_breakdown(self):
        scatter = {
            0x10: frozenset({(0, 1, 2), (0, 3, 4), (1, 0, 0)}),
            0x20: frozenset({(2, 5, 6)}),
            0x30: frozenset({(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 3)}),
        }
        per_branch = {0x10: (100, 7), 0x30: (50, 9)}
        rows = scatter_report(_fake_report(scatter, per_branch))
        assert [r.pc for r in rows] == [0x30, 0x10, 0x20]
        assert [r.distinct_entries for r in rows] == [4, 3, 1]
        assert rows[0].mispredictions == 9 and rows[0].executions == 50
        assert rows[2].mispredictions == 0 and rows[2].executions == 0
        assert rows[1].per_pht == {0: 2, 1: 1}

    def test_tie_breaks_on_pc(self):
        scatter = {0x20: frozenset({(0, 0, 0)}), 0x10: frozenset({(1, 1, 1)})}
        rows = scatter_report(_fake_report(scatter, {}))
        assert [r.pc for r in rows] == [0x10, 0x20]

    def test_top_k(self):
        scatter = {pc: frozenset({(0, pc, 0)}) for pc in range(0, 40, 4)}
        assert len(scatter_report(_fake_report(scatter, {}), top_k=3)) == 3

    def test_row_to_dict(self):
        rows = scatter_report(_fake_report({0x10: frozenset({(0, 1, 2)})}, {}))
        d = rows[0].to_dict()
        assert d == {"pc": "0x10", "distinct_entries": 1, "mispredictions": 0,
                     "executions": 0, "per_pht": {"0": 1}}


# ---------------------------------------------------------------------------
# nop_whatif: golden shifted addresses for the binary-search kernel
# ---------------------------------------------------------------------------

# (insertion point, b.lt pc, b.lt target, b.le pc, b.le target)
_GOLDEN_SHIFTS = [
    (None, 0x2C, 0x10, 0x3C, 0x1C),
    (NOP_VARIANTS["L2_L3"], 0x30, 0x10, 0x40, 0x20),
    (NOP_VARIANTS["L3_blt"], 0x30, 0x10, 0x40, 0x1C),
]


class TestNopWhatif:
    @pytest.mark.parametrize("point,lt_pc,lt_t,le_pc,le_t", _GOLDEN_SHIFTS)
    def test_golden_addresses(self, point, lt_pc, lt_t, le_pc, le_t):
        report = nop_whatif(BINARY_SEARCH_LAYOUT, point, builtin("oryon"))
        lt = report.branch(0x2C)
        le = report.branch(0x3C)
        assert (lt.after.pc, lt.after.target) == (lt_pc, lt_t)
        assert (le.after.pc, le.after.target) == (le_pc, le_t)

    def test_matches_workload_layout_helper(self):
        # The trace generator owns the same kernel layout; the two modules
        # must agree on every variant's critical-branch addresses.
        for variant, point in NOP_VARIANTS.items():
            report = nop_whatif(BINARY_SEARCH_LAYOUT, point, builtin("oryon"))
            expected = layout_branches(variant)
            lt = report.branch(0x2C)
            le = report.branch(0x3C)
            assert (lt.after.pc, lt.after.target) == expected["b.lt"]
            assert (le.after.pc, le.after.target) == expected["b.le"]

    def test_critical_pair_distance_one_bit_between_loop_labels(self):
        # With the NOP between the two loop labels, the critical pair's tag
        # contributions differ in exactly one bit; the other placements leave
        # larger differences.
        distances = {}
        for variant, point in NOP_VARIANTS.items():
            report = nop_whatif(BINARY_SEARCH_LAYOUT, point, builtin("oryon"))
            distances[variant] = report.pair(0x2C, 0x3C).distance_after
        assert distances["L2_L3"] == 1
        assert distances["L2_L3"] < distances["none"] < distances["L3_blt"]

    def test_contribution_matches_history_oracle(self):
        # Independent oracle: retire the branch once against a zeroed history
        # and read the first PHT's tag hash at pc=0. The image must equal the
        # analytical contribution mask.
        for config in (builtin("oryon"), builtin("firestorm"), builtin("skylake")):
            pht0 = config.phts[0]
            for b in BINARY_SEARCH_LAYOUT:
                state = initial_state(config.phrt_width, config.phrb_width)
                rec = BranchRecord(pc=b.pc, target=b.target, kind=KIND_UNCOND,
                                   taken=True)
                state = update_history(state, config.scheme, rec)
                expected = compute_tag(pht0.hash, 0, state)
                assert tag_contribution(pht0.hash, config.scheme,
                                        b.pc, b.target) == expected

    def test_no_shift_when_point_is_none(self):
        report = nop_whatif(BINARY_SEARCH_LAYOUT, None, builtin("oryon"))
        assert all(s.before == s.after for s in report.branches)
        assert all(p.delta == 0 for p in report.pairs)

    def test_zero_count_yields_zero_deltas(self):
        for point in (0x04, 0x14, 0x20, 0x48):
            report = nop_whatif(BINARY_SEARCH_LAYOUT, point, builtin("oryon"),
                                count=0)
            assert all(s.before == s.after for s in report.branches)
            assert all(p.distance_before == p.distance_after for p in report.pairs)
            assert all(p.delta == 0 for p in report.pairs)

    def test_multiple_nops_shift_linearly(self):
        report = nop_whatif(BINARY_SEARCH_LAYOUT, 0x14, builtin("oryon"), count=3)
        lt = report.branch(0x2C)
        assert lt.after.pc == 0x2C + 12
        assert lt.after.target == 0x10  # before the insertion point

    @pytest.mark.parametrize("bad", [0x15, 0x100, -4, 0x4C + 4])
    def test_invalid_insertion_point(self, bad):
        with pytest.raises(ValueError, match="insertion point"):
            nop_whatif(BINARY_SEARCH_LAYOUT, bad, builtin("oryon"))

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError, match="count"):
            nop_whatif(BINARY_SEARCH_LAYOUT, 0x14, builtin("oryon"), count=-1)

    def test_empty_layout_rejected(self):
        with pytest.raises(ValueError, match="layout"):
            nop_whatif([], 0x14, builtin("oryon"))

    def test_pair_count_and_to_dict(self):
        report = nop_whatif(BINARY_SEARCH_LAYOUT, 0x14, builtin("oryon"))
        n = len(BINARY_SEARCH_LAYOUT)
        assert len(report.pairs) == n * (n - 1) // 2
        d = report.to_dict()
        assert d["config"] == "oryon"
        assert d["insertion_point"] == "0x14"
        assert len(d["pairs"]) == len(report.pairs)
        assert {"pcs", "distance_before", "distance_after", "delta"} <= \
            set(d["pairs"][0])

    def test_unknown_pair_lookup(self):
        report = nop_whatif(BINARY_SEARCH_LAYOUT, None, builtin("oryon"))
        with pytest.raises(KeyError):
            report.pair(0x2C, 0x9999)


# ---------------------------------------------------------------------------
# branch-list text format
# ---------------------------------------------------------------------------

_SAMPLE = """\
# hot_loop
0x1000 0x2000 cond
0x1004 0x2000 cond

# epilogue
0x2000 0x100 uncond
4096 8192 ret
"""


class TestParseBranchList:
    def test_groups_and_values(self):
        groups = parse_branch_list(_SAMPLE)
        assert [name for name, _ in groups] == ["hot_loop", "epilogue"]
        hot = groups[0][1]
        assert hot == (br(0x1000, 0x2000), br(0x1004, 0x2000))
        epi = groups[1][1]
        assert epi[0] == StaticBranch(0x2000, 0x100, KIND_UNCOND)
        assert epi[1].pc == 4096 and epi[1].target == 8192

    def test_branches_before_any_header(self):
        groups = parse_branch_list("0x10 0x20 cond\n")
        assert groups == [("default", (br(0x10, 0x20),))]

    def test_blank_lines_ignored(self):
        groups = parse_branch_list("\n\n# g\n\n0x10 0x20 cond\n\n")
        assert groups == [("g", (br(0x10, 0x20),))]

    def test_bad_kind(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_branch_list("0x10 0x20 sideways\n")

    def test_bad_field_count(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_branch_list("# g\n0x10 0x20\n")

    def test_bad_address(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_branch_list("0xzz 0x20 cond\n")

    def test_round_trip_through_counter(self):
        groups = parse_branch_list(_SAMPLE)
        totals = {name: count_collisions(list(brs), HASWELL_SCHEME).colliding_pairs
                  for name, brs in groups}
        assert totals == {"hot_loop": 1, "epilogue": 0}
