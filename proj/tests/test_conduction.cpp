#include "fixtures.hpp"

#include "ecgr/conduction.hpp"
#include "ecgr/pipeline.hpp"

#include <doctest.h>

using namespace ecgr;
using fixtures::add_beat;
using fixtures::add_gauss;

namespace {

Record regular_record(double rr_ms, double duration_s, std::uint64_t noise_seed) {
    std::vector<double> t;
    for (double v = 400.0; v < duration_s * 1000.0 - 400.0; v += rr_ms) t.push_back(v);
    auto r = fixtures::beats_record(t, duration_s);
    Rng rng(noise_seed);
    for (double& v : r.samples) v += 0.01 * rng.normal();
    return r;
}

// 30 beats at 800 ms with beat `k` replaced by a wide inverted complex.
Record with_ectopic(std::size_t k) {
    Record r;
    r.fs = kCanonicalFs;
    r.samples.assign(static_cast<std::size_t>(0.8 * 30 * r.fs + 600), 0.0);
    for (std::size_t i = 0; i < 30; ++i) {
        const double t = 400.0 + 800.0 * static_cast<double>(i);
        if (i == k) {
            add_gauss(r.samples, r.fs, t, 28.0, -1.0);
            add_gauss(r.samples, r.fs, t + 60.0, 22.0, 0.25);
            add_gauss(r.samples, r.fs, t + 320.0, 50.0, 0.3);
        } else {
            add_beat(r.samples, r.fs, t);
        }
    }
    return r;
}

}  // namespace

TEST_CASE("detect_qrs on a regular 75 bpm record") {
    const auto r = regular_record(800.0, 30.0, 1);
    const auto peaks = detect_qrs(r);
    CHECK(peaks.size() >= 36);
    CHECK(peaks.size() <= 38);
    for (long p : peaks) {
        const double ms = p * 1000.0 / r.fs;
        const double nearest = 400.0 + 800.0 * std::round((ms - 400.0) / 800.0);
        CHECK(std::fabs(ms - nearest) <= 20.0);
    }
}

TEST_CASE("detect_qrs matches the synthetic beat schedule") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        const auto s = synth_record_with_truth(ClassLabel::Normal, seed, 30.0);
        const auto r = prepare_record(s.record);
        const auto peaks = detect_qrs(r);
        CAPTURE(seed);
        CHECK(peaks.size() == s.truth.beat_times_s.size());
        for (double t : s.truth.beat_times_s) {
            double best = 1e9;
            for (long p : peaks) best = std::min(best, std::fabs(p * 1000.0 / r.fs - t * 1000.0));
            CHECK(best <= 20.0);
        }
    }
}

TEST_CASE("detect_qrs edge cases") {
    Record zero;
    zero.samples.assign(3000, 0.0);
    CHECK(detect_qrs(zero).empty());
    Record short_r;
    short_r.samples.assign(500, 0.0);
    CHECK_THROWS_AS(detect_qrs(short_r), EvidenceError);
}

TEST_CASE("detect_qrs is shift equivariant") {
    const auto r = regular_record(760.0, 20.0, 2);
    const long k = 37;
    Record shifted = r;
    shifted.samples.insert(shifted.samples.begin(), static_cast<std::size_t>(k), 0.0);
    shifted.samples.resize(r.samples.size());
    const auto a = detect_qrs(r), b = detect_qrs(shifted);
    const long n = static_cast<long>(r.samples.size());
    std::vector<long> a_in, b_in;
    for (long p : a)
        if (p > 3 * r.fs && p + k < n - 3 * r.fs) a_in.push_back(p + k);
    for (long p : b)
        if (p > 3 * r.fs + k && p < n - 3 * r.fs) b_in.push_back(p);
    CHECK(a_in == b_in);
}

TEST_CASE("detections are increasing and respect the refractory period") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto r = prepare_record(synth_record(kAllClasses[seed % 4], seed, 20.0));
        const auto p = detect_qrs(r);
        for (std::size_t i = 1; i < p.size(); ++i) CHECK(p[i] - p[i - 1] >= std::lround(0.25 * r.fs));
    }
}

TEST_CASE("QRS width of a 100 ms Gaussian complex") {
    // 100 ms = +-2.5 sigma.
    Record r;
    r.samples.assign(1200, 0.0);
    add_gauss(r.samples, r.fs, 2000.0, 20.0, 1.2);
    const auto b = delineate_beat(r, fixtures::to_sample(2000.0), -1, static_cast<long>(r.samples.size()));
    CHECK(b.qrs_duration_ms(r.fs) >= 80.0);
    CHECK(b.qrs_duration_ms(r.fs) <= 120.0);
    CHECK(b.well_formed());
}

TEST_CASE("P and T presence") {
    Record r;
    r.samples.assign(900, 0.0);
    add_beat(r.samples, r.fs, 1000.0, false);
    const long pk = fixtures::to_sample(1000.0);
    const auto no_p = delineate_beat(r, pk, -1, static_cast<long>(r.samples.size()));
    CHECK_FALSE(no_p.p.has_value());
    CHECK(no_p.t.has_value());

    Record w;
    w.samples.assign(900, 0.0);
    add_beat(w.samples, w.fs, 1000.0, true);
    const auto full = delineate_beat(w, pk, -1, static_cast<long>(w.samples.size()));
    REQUIRE(full.p.has_value());
    CHECK(full.p->amp > 0.0);
    // Next onset 20 ms after the QRS: the T window is empty.
    const auto clipped = delineate_beat(w, pk, -1, full.qrs_offset + fixtures::to_sample(20.0));
    CHECK_FALSE(clipped.t.has_value());
    CHECK_THROWS_AS(delineate_beat(w, pk, pk, pk + 10), EvidenceError);
}

TEST_CASE("identical beats give a zero-distance template") {
    Record r;
    r.samples.assign(3000, 0.0);
    std::vector<long> peaks;
    for (int i = 0; i < 10; ++i) {
        add_beat(r.samples, r.fs, 400.0 + 900.0 * i);
        peaks.push_back(fixtures::to_sample(400.0 + 900.0 * i));
    }
    const auto beats = delineate_all(r, peaks);
    const auto tr = dominant_template(r, beats);
    double e = 0.0, m = 0.0;
    for (double v : tr.qrs_template.waveform) {
        e += v * v;
        m += v;
    }
    CHECK(e == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(m) < 1e-9);
    for (std::size_t i = 0; i < beats.size(); ++i) {
        CHECK(tr.morph_dist[i] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(tr.tags[i] == BeatTag::Normal);
    }
    CHECK_THROWS_AS(dominant_template(r, std::span(beats).first(2)), EvidenceError);
}

TEST_CASE("a single wide inverted ectopic is tagged ventricular") {
    for (std::size_t k : {5u, 14u, 22u}) {
        const auto beats = conduction_evidence(with_ectopic(k));
        REQUIRE(beats.size() == 30);
        for (std::size_t i = 0; i < beats.size(); ++i) {
            CAPTURE(i);
            CHECK((beats[i].tag == BeatTag::Ventricular) == (i == k));
        }
    }
}

TEST_CASE("tag_beat rule") {
    CHECK(tag_beat(0.6, 140.0, 90.0) == BeatTag::Ventricular);
    CHECK(tag_beat(0.6, 100.0, 90.0) == BeatTag::Normal);
    CHECK(tag_beat(0.4, 100.0, 90.0) == BeatTag::Fusion);
    CHECK(tag_beat(0.1, 140.0, 90.0) == BeatTag::Normal);
}

TEST_CASE("amplitude scaling leaves the evidence unchanged") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto r = prepare_record(synth_record(kAllClasses[seed % 3], seed, 20.0));
        const auto a = conduction_evidence(r);
        for (double c : {0.8, 3.0}) {
            Record s = r;
            for (double& v : s.samples) v *= c;
            const auto b = conduction_evidence(s);
            CAPTURE(seed);
            CAPTURE(c);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                CHECK(a[i].qrs_onset == b[i].qrs_onset);
                CHECK(a[i].qrs_peak == b[i].qrs_peak);
                CHECK(a[i].qrs_offset == b[i].qrs_offset);
                CHECK(a[i].tag == b[i].tag);
                CHECK(a[i].morph_dist == doctest::Approx(b[i].morph_dist).epsilon(1e-9));
                CHECK(b[i].qrs_amp == doctest::Approx(c * a[i].qrs_amp).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("delineation never emits inverted fiducials") {
    Rng rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        Record r;
        if (trial % 2) {
            r = prepare_record(synth_record(kAllClasses[rng.below(4)], rng.next(), 10.0));
        } else {
            r.samples.resize(3000);
            double w = 0.0;
            for (double& v : r.samples) v = (w = 0.95 * w + rng.normal() * 0.3);
        }
        for (const auto& b : conduction_evidence(r)) CHECK(b.well_formed());
    }
}

TEST_CASE("annotation rows") {
    BeatObservation b;
    b.qrs_onset = 10;
    b.qrs_peak = 15;
    b.qrs_offset = 20;
    b.t = Wave{40, 50, 60, 0.3};
    const auto s = annotation_rows(std::span(&b, 1));
    CHECK(s == "10\t15\t20\tNORMAL\t-\t50\n");
    CHECK(s.find("50") != std::string::npos);
}
