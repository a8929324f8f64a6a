#include "fixtures.hpp"

#include "ecgr/features.hpp"
#include "ecgr/signal_io.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace ecgr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "ecgr_unit";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<double> rr_from_times(const std::vector<double>& t) {
    std::vector<double> rr;
    for (std::size_t i = 1; i < t.size(); ++i) rr.push_back(1000.0 * (t[i] - t[i - 1]));
    return rr;
}

}  // namespace

TEST_CASE("parse_record divides by gain") {
    const auto r = parse_record("fs=300,gain=1000,baseline=0\n1000\n0\n-1000\n", "x");
    REQUIRE(r.samples.size() == 3);
    CHECK(r.samples[0] == 1.0);
    CHECK(r.samples[1] == 0.0);
    CHECK(r.samples[2] == -1.0);
    CHECK(r.fs == 300);
}

TEST_CASE("parse_record applies baseline") {
    const auto r = parse_record("fs=300,gain=200,baseline=100\n300\n", "x");
    CHECK(r.samples.at(0) == 1.0);
}

TEST_CASE("parse_record errors") {
    CHECK_THROWS_AS(parse_record("fs=0,gain=1000,baseline=0\n1\n", "x"), FormatError);
    CHECK_THROWS_AS(parse_record("fs=300,gain=0,baseline=0\n1\n", "x"), FormatError);
    CHECK_THROWS_AS(parse_record("fs=300,gain=1000\n1\n", "x"), FormatError);
    CHECK_THROWS_AS(parse_record("fs=300,gain=1000,baseline=0\n", "x"), FormatError);
    CHECK_THROWS_AS(parse_record("fs=300,gain=1000,baseline=0\n1\nabc\n", "x"), ParseError);
    CHECK_THROWS_AS(load_record(scratch("does_not_exist.txt")), IoError);
}

TEST_CASE("write then load is the identity up to format precision") {
    Rng rng(3);
    Record r;
    r.id = "rt";
    r.fs = 250;
    for (int i = 0; i < 500; ++i) r.samples.push_back(rng.uniform(-3.0, 3.0));
    const auto path = scratch("rt.txt");
    write_record(path, r);
    const auto back = load_record(path);
    CHECK(back.fs == r.fs);
    REQUIRE(back.samples.size() == r.samples.size());
    for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(std::fabs(back.samples[i] - r.samples[i]) <= 0.5e-3 + 1e-12);
    CHECK(back.id == "rt");
}

TEST_CASE("manifest round trip, header optional, duplicates rejected") {
    Manifest m;
    m.entries.push_back({"a", "records/a.txt", ClassLabel::AFib});
    m.entries.push_back({"b", "records/b.txt", std::nullopt});
    const auto path = scratch("manifest.csv");
    write_manifest(path, m);
    const auto back = load_manifest(path);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].label == ClassLabel::AFib);
    CHECK_FALSE(back.entries[1].label.has_value());
    CHECK(back.resolve(back.entries[0]) == path.parent_path() / "records/a.txt");

    const auto dup = scratch("dup.csv");
    std::ofstream(dup) << "a,x.txt,N\na,y.txt,A\n";
    CHECK_THROWS_AS(load_manifest(dup), ParseError);
    const auto bad = scratch("bad.csv");
    std::ofstream(bad) << "a,x.txt,Q\n";
    CHECK_THROWS_AS(load_manifest(bad), ParseError);
}

TEST_CASE("resample examples") {
    Record r;
    r.fs = 300;
    r.samples = {1.0, 2.0, 3.0};
    CHECK(resample(r, 300).samples == r.samples);

    Record two;
    two.fs = 2;
    two.samples = {0.0, 1.0};
    const auto up = resample(two, 4);
    CHECK(up.samples == std::vector<double>{0.0, 0.5, 1.0, 1.0});

    Record c;
    c.fs = 360;
    c.samples.assign(1000, 0.7);
    for (double v : resample(c, 300).samples) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("resample round trip within the interpolation bound") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Record r;
        r.fs = 300;
        double phase = rng.uniform(0, 6.28), f = rng.uniform(0.5, 20.0);
        for (int i = 0; i < 900; ++i) r.samples.push_back(std::sin(phase + 2 * std::numbers::pi * f * i / 300.0));
        double d2 = 0.0;
        for (std::size_t i = 1; i + 1 < r.samples.size(); ++i)
            d2 = std::max(d2, std::fabs(r.samples[i + 1] - 2 * r.samples[i] + r.samples[i - 1]));
        const auto back = resample(resample(r, 600), 300);
        REQUIRE(back.samples.size() == r.samples.size());
        for (std::size_t i = 0; i < r.samples.size(); ++i) CHECK(std::fabs(back.samples[i] - r.samples[i]) <= 2 * d2 + 1e-12);
    }
}

TEST_CASE("synth_record is a pure function of its arguments") {
    const auto a = synth_record(ClassLabel::Normal, 7, 30.0);
    const auto b = synth_record(ClassLabel::Normal, 7, 30.0);
    REQUIRE(a.samples.size() == b.samples.size());
    CHECK(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(double)) == 0);
    const auto c = synth_record(ClassLabel::Normal, 8, 30.0);
    CHECK(c.samples != a.samples);
    CHECK_THROWS_AS(synth_record(ClassLabel::Normal, 1, 5.0), ArgumentError);
    CHECK_THROWS_AS(synth_record(ClassLabel::Normal, 1, 70.0), ArgumentError);
}

TEST_CASE("synthetic A records are irregular") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto s = synth_record_with_truth(ClassLabel::AFib, seed, 30.0);
        const auto st = rr_statistics_ms(rr_from_times(s.truth.beat_times_s));
        CHECK(st[6] >= 0.2);
        CHECK_FALSE(s.truth.has_p);
    }
}

TEST_CASE("synthetic O tachycardia is fast") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto s = synth_other(OtherVariant::Tachycardia, seed, 30.0);
        const auto st = rr_statistics_ms(rr_from_times(s.truth.beat_times_s));
        CHECK(60000.0 / st[2] > 100.0);
    }
}
