#include "fixtures.hpp"

#include "ecgr/interpretation.hpp"
#include "ecgr/pipeline.hpp"

#include <doctest.h>

using namespace ecgr;

namespace {

// Beats with the given RR series over a quiet record, P on request.
fixtures::ConstructedCase rr_case(const std::vector<double>& rr_ms, bool with_p, bool ventricular = false) {
    std::vector<double> t = {500.0};
    for (double v : rr_ms) t.push_back(t.back() + v);
    fixtures::ConstructedCase c;
    c.record = fixtures::beats_record({}, (t.back() + 800.0) / 1000.0);
    for (double v : t) {
        BeatObservation b;
        b.qrs_peak = fixtures::to_sample(v);
        b.qrs_onset = b.qrs_peak - 12;
        b.qrs_offset = b.qrs_peak + 12;
        b.qrs_amp = 1.0;
        if (with_p) b.p = Wave{b.qrs_peak - 72, b.qrs_peak - 51, b.qrs_peak - 30, 0.15};
        b.tag = ventricular ? BeatTag::Ventricular : BeatTag::Normal;
        c.beats.push_back(b);
    }
    return c;
}

PatternMatch whole(RhythmPattern p, const fixtures::ConstructedCase& c) {
    RhythmEvidence ev(c.record, c.beats);
    return match_pattern(p, ev, {0, c.beats.size() - 1});
}

Interpretation interpret_synth(ClassLabel c, std::uint64_t seed, double dur = 30.0) {
    const auto r = prepare_record(synth_record(c, seed, dur));
    return abstract_rhythms(r, conduction_evidence(r));
}

}  // namespace

TEST_CASE("constraint table examples") {
    const auto sinus = rr_case(std::vector<double>(9, 800.0), true);
    const auto m = whole(RhythmPattern::Sinus, sinus);
    CHECK(m.admissible);
    CHECK(m.penalty == 0.0);

    std::vector<double> wobble;
    for (int i = 0; i < 12; ++i) wobble.push_back(std::array{760.0, 800.0, 840.0}[i % 3]);
    const auto low_irreg = rr_case(wobble, false);
    CHECK_FALSE(whole(RhythmPattern::AFib, low_irreg).admissible);

    const auto brady = rr_case(std::vector<double>(6, 1500.0), true);
    CHECK(whole(RhythmPattern::Brady, brady).admissible);
    CHECK_FALSE(whole(RhythmPattern::Sinus, brady).admissible);

    const auto tachy = rr_case(std::vector<double>(8, 500.0), true);
    CHECK(whole(RhythmPattern::Tachy, tachy).admissible);
    CHECK_FALSE(whole(RhythmPattern::VentTachy, tachy).admissible);
    CHECK(whole(RhythmPattern::VentTachy, rr_case(std::vector<double>(8, 500.0), false, true)).admissible);

    const auto u = whole(RhythmPattern::Unexplained, sinus);
    CHECK(u.admissible);
    CHECK(u.penalty == 2.0 * 10);
}

TEST_CASE("AFIB penalty is proportional to P presence") {
    std::vector<double> rr;
    for (int i = 0; i < 15; ++i) rr.push_back(i % 2 ? 500.0 : 1000.0 + 20 * i);
    auto c = rr_case(rr, false);
    const auto none = whole(RhythmPattern::AFib, c);
    REQUIRE(none.admissible);
    CHECK(none.penalty == 0.0);
    for (std::size_t i = 0; i < 3; ++i) c.beats[i].p = Wave{c.beats[i].qrs_peak - 72, c.beats[i].qrs_peak - 51, c.beats[i].qrs_peak - 30, 0.15};
    const auto some = whole(RhythmPattern::AFib, c);
    REQUIRE(some.admissible);
    CHECK(some.penalty == doctest::Approx(2.0 * 3.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("bigeminy needs the alternating tag pattern") {
    std::vector<double> rr;
    for (int i = 0; i < 9; ++i) rr.push_back(i % 2 ? 1000.0 : 560.0);
    auto c = rr_case(rr, true);
    CHECK_FALSE(whole(RhythmPattern::Bigeminy, c).admissible);
    for (std::size_t i = 1; i < c.beats.size(); i += 2) c.beats[i].tag = BeatTag::Ventricular;
    const auto m = whole(RhythmPattern::Bigeminy, c);
    CHECK(m.admissible);
    CHECK(m.penalty == 0.0);
    CHECK_FALSE(whole(RhythmPattern::Trigeminy, c).admissible);
}

TEST_CASE("match_pattern argument checks") {
    const auto c = rr_case(std::vector<double>(4, 800.0), true);
    RhythmEvidence ev(c.record, c.beats);
    CHECK_THROWS_AS(match_pattern(RhythmPattern::Sinus, ev, {2, 7}), ArgumentError);
    CHECK_THROWS_AS(match_pattern(RhythmPattern::Sinus, ev, {3, 2}), ArgumentError);
    CHECK_FALSE(match_pattern(RhythmPattern::Sinus, ev, {0, 1}).admissible);
}

TEST_CASE("beam search equals exhaustive search on fuzzed short inputs") {
    Rng rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 3 + rng.below(10);
        const auto c = fixtures::fuzz_rhythm(rng, n);
        RhythmEvidence ev(c.record, c.beats);
        const auto t = best_tiling(ev, 8);
        CAPTURE(trial);
        CHECK(tiles_exactly(t.episodes, n));
        CHECK(t.cost == doctest::Approx(fixtures::exhaustive_tiling_cost(ev)).epsilon(1e-12));
        CHECK(tiling_cost(ev, t.episodes) == doctest::Approx(t.cost).epsilon(1e-12));
    }
}

TEST_CASE("tiling helpers") {
    std::vector<RhythmEpisode> e = {{RhythmPattern::Sinus, 0, 3, 0}, {RhythmPattern::AFib, 4, 9, 0}};
    CHECK(tiles_exactly(e, 10));
    CHECK_FALSE(tiles_exactly(e, 11));
    e[1].first = 5;
    CHECK_FALSE(tiles_exactly(e, 10));
    CHECK(tiles_exactly({}, 0));
}

TEST_CASE("spurious low-amplitude detection is deleted") {
    const auto c = fixtures::spurious_case();
    const auto itp = abstract_rhythms(c.record, c.beats);
    CHECK(itp.initial_beat_count == 5);
    CHECK(itp.deleted_count == 1);
    CHECK(itp.inserted_count == 0);
    REQUIRE(itp.edits.size() == 1);
    CHECK(itp.edits[0].op == EvidenceEdit::Op::Delete);
    CHECK(itp.edits[0].sample_index == fixtures::to_sample(c.truth_ms));
    CHECK(itp.edits[0].window_profile < itp.edits[0].profile_threshold);
    CHECK(itp.edits[0].cost_after < itp.edits[0].cost_before);
    REQUIRE(itp.episodes.size() == 1);
    CHECK(itp.episodes[0].pattern == RhythmPattern::Sinus);
    CHECK(itp.beats.size() == 4);
    REQUIRE(itp.deleted.size() == 1);
    CHECK(itp.deleted[0].tag == BeatTag::Spurious);
}

TEST_CASE("a dropped beat is reinserted near its true position") {
    const auto c = fixtures::dropout_case();
    const auto itp = abstract_rhythms(c.record, c.beats);
    CHECK(itp.inserted_count == 1);
    CHECK(itp.deleted_count == 0);
    REQUIRE(itp.edits.size() == 1);
    const double ms = itp.edits[0].sample_index * 1000.0 / c.record.fs;
    CHECK(std::fabs(ms - c.truth_ms) <= 60.0);
    CHECK(itp.beats.size() == 5);
    for (const auto& b : itp.beats) CHECK(b.well_formed());
    CHECK(tiles_exactly(itp.episodes, itp.beats.size()));
}

TEST_CASE("clean input is a fixpoint of repair") {
    const auto c = rr_case(std::vector<double>(10, 800.0), true);
    auto r = c.record;
    for (const auto& b : c.beats) fixtures::add_beat(r.samples, r.fs, b.qrs_peak * 1000.0 / r.fs);
    const auto itp = abstract_rhythms(r, c.beats);
    CHECK(itp.edits.empty());
    CHECK(itp.beats.size() == c.beats.size());
    CHECK(itp.repair_passes == 1);
}

TEST_CASE("synthetic N records give one SINUS episode") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto itp = interpret_synth(ClassLabel::Normal, seed);
        CAPTURE(seed);
        REQUIRE(itp.episodes.size() == 1);
        CHECK(itp.episodes[0].pattern == RhythmPattern::Sinus);
        CHECK(itp.deleted_count == 0);
    }
}

TEST_CASE("synthetic A records are mostly AFIB") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto itp = interpret_synth(ClassLabel::AFib, seed);
        std::size_t af = 0;
        for (const auto& e : itp.episodes)
            if (e.pattern == RhythmPattern::AFib) af += e.last - e.first + 1;
        CAPTURE(seed);
        CHECK(static_cast<double>(af) >= 0.8 * static_cast<double>(itp.beats.size()));
    }
}

TEST_CASE("interpretation invariants on synthetic and fuzzed records") {
    Rng rng(5);
    for (int trial = 0; trial < 24; ++trial) {
        Interpretation itp;
        if (trial % 2) {
            itp = interpret_synth(kAllClasses[trial % 4], 300 + trial, 15.0);
        } else {
            const auto c = fixtures::fuzz_rhythm(rng, 8 + rng.below(25));
            itp = abstract_rhythms(c.record, c.beats);
        }
        CAPTURE(trial);
        CHECK(tiles_exactly(itp.episodes, itp.beats.size()));
        CHECK(itp.repair_passes <= 10);
        for (std::size_t i = 1; i < itp.cost_trace.size(); ++i) CHECK(itp.cost_trace[i] <= itp.cost_trace[i - 1]);
        for (const auto& e : itp.edits)
            if (e.op == EvidenceEdit::Op::Delete) CHECK(e.window_profile < e.profile_threshold);
        CHECK(itp.initial_beat_count + itp.inserted_count - itp.deleted_count == itp.beats.size());
    }
}

TEST_CASE("interpretation is deterministic and round-trips through JSON") {
    const auto a = interpret_synth(ClassLabel::Other, 17);
    const auto b = interpret_synth(ClassLabel::Other, 17);
    CHECK(interpretation_to_json(a) == interpretation_to_json(b));
    const auto back = interpretation_from_json(interpretation_to_json(a));
    CHECK(interpretation_to_json(back) == interpretation_to_json(a));
    CHECK_THROWS_AS(interpretation_from_json("{\"beats\": 3}"), FormatError);
}

TEST_CASE("degenerate beat lists") {
    Record r;
    r.samples.assign(3000, 0.0);
    const auto none = abstract_rhythms(r, {});
    CHECK(none.episodes.empty());
    BeatObservation b;
    b.qrs_onset = 100;
    b.qrs_peak = 110;
    b.qrs_offset = 120;
    const auto one = abstract_rhythms(r, {b});
    REQUIRE(one.episodes.size() == 1);
    CHECK(one.episodes[0].pattern == RhythmPattern::Unexplained);
}

TEST_CASE("episode durations cover the record") {
    const auto r = prepare_record(synth_record(ClassLabel::Other, 4, 25.0));
    const auto itp = abstract_rhythms(r, conduction_evidence(r));
    const auto d = episode_durations_s(itp, r);
    REQUIRE(d.size() == itp.episodes.size());
    double s = 0.0;
    for (double v : d) {
        CHECK(v >= 0.0);
        s += v;
    }
    CHECK(s == doctest::Approx(r.duration_s()).epsilon(1e-9));
}

TEST_CASE("flutter waves in the TP segment are found") {
    std::vector<double> t;
    for (int i = 0; i < 14; ++i) t.push_back(500.0 + 1000.0 * i);
    auto r = fixtures::beats_record({}, 15.0);
    for (std::size_t i = 0; i < r.samples.size(); ++i)
        r.samples[i] = 0.12 * std::sin(2.0 * std::numbers::pi * 5.0 * static_cast<double>(i) / r.fs);
    for (double v : t) fixtures::add_beat(r.samples, r.fs, v, false);
    std::vector<long> peaks;
    for (double v : t) peaks.push_back(fixtures::to_sample(v));
    const auto beats = delineate_all(r, peaks);
    RhythmEvidence ev(r, beats);
    const auto s = ev.tp_spectrum({0, beats.size() - 1});
    CHECK(s.peak_hz == doctest::Approx(5.0).epsilon(0.06));
    CHECK(s.prominence >= 2.0);
}
