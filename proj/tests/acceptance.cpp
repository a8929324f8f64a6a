// Acceptance runner: one PASS/FAIL line per criterion.

#include "fixtures.hpp"

#include "ecgr/evaluation.hpp"
#include "ecgr/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace ecgr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

struct Shell {
    fs::path cli;

    int run(const fs::path& cwd, const std::string& args) const {
        const std::string cmd = "cd " + quote(cwd) + " && " + quote(cli) + " -q " + args + " >>" +
                                quote(cwd / "stdout.log") + " 2>>" + quote(cwd / "stderr.log");
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
};

// ---------------------------------------------------------------------------

Outcome feature_oracles() {
    Outcome o;
    Rng rng(1);
    auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(b)); };
    for (int trial = 0; trial < 1000 && o.pass; ++trial) {
        const std::size_t n = 2 + rng.below(150);
        std::vector<double> rr(n);
        const int mode = static_cast<int>(rng.below(3));
        for (double& v : rr)
            v = mode == 0 ? std::round(rng.uniform(300, 2000)) : mode == 1 ? 800.0 + 25.0 * std::round(rng.normal())
                                                                            : rng.uniform(300, 2000);
        const std::string at = "sequence " + std::to_string(trial);
        for (double x : {5.0, 10.0, 50.0, 100.0}) o.require(close(pnn(rr, x), fixtures::naive_pnn(rr, x)), at + " pNN");
        o.require(close(rmssd(rr), fixtures::naive_rmssd(rr)), at + " RMSSD");
        o.require(close(mad(rr), fixtures::naive_mad(rr)), at + " MAD");
        o.require(close(profile(rr), fixtures::naive_profile(rr)), at + " profile");
        const auto s = rr_statistics_ms(rr);
        o.require(s[9] >= s[10] && s[10] >= s[11] && s[11] >= s[12], at + " pNN ordering");
        o.require(close(s[8], fixtures::naive_rmssd(rr)) && close(s[5], fixtures::naive_mad(rr)), at + " stats vector");
    }
    if (o.pass) o.detail = "1000 sequences";
    return o;
}

Outcome anomaly_boundaries() {
    Outcome o;
    const double eps = 1e-9;
    auto rules = [](auto set) {
        AnomalyInputs in;
        set(in);
        return anomaly_rules(in);
    };
    o.require(rules([&](auto& i) { i.mean_hr_bpm = 100 + eps; }).tachycardia, "HR 100+e");
    o.require(!rules([&](auto& i) { i.mean_hr_bpm = 100 - eps; }).tachycardia, "HR 100-e");
    o.require(rules([&](auto& i) { i.mean_hr_bpm = 50 - eps; }).bradycardia, "HR 50-e");
    o.require(!rules([&](auto& i) { i.mean_hr_bpm = 50 + eps; }).bradycardia, "HR 50+e");
    o.require(rules([&](auto& i) { i.median_qrs_ms = 110 + eps; }).wide_qrs, "QRS 110+e");
    o.require(!rules([&](auto& i) { i.median_qrs_ms = 110 - eps; }).wide_qrs, "QRS 110-e");
    o.require(rules([&](auto& i) { i.median_pr_ms = 210 + eps; }).long_pr, "PR 210+e");
    o.require(!rules([&](auto& i) { i.median_pr_ms = 210 - eps; }).long_pr, "PR 210-e");
    if (o.pass) o.detail = "8 boundary probes";
    return o;
}

Outcome interpretation_oracle() {
    Outcome o;
    Rng rng(3);
    int max_passes = 0;
    for (int trial = 0; trial < 200 && o.pass; ++trial) {
        const std::size_t n = 2 + rng.below(11);
        const auto c = fixtures::fuzz_rhythm(rng, n);
        RhythmEvidence ev(c.record, c.beats);
        const auto t = best_tiling(ev, 8);
        const double ex = fixtures::exhaustive_tiling_cost(ev);
        const std::string at = "case " + std::to_string(trial);
        o.require(std::fabs(t.cost - ex) <= 1e-9 * std::max(1.0, std::fabs(ex)),
                  at + ": beam " + fmt("%.12g", t.cost) + " vs exhaustive " + fmt("%.12g", ex));
        o.require(tiles_exactly(t.episodes, n), at + ": tiling");
        const auto itp = abstract_rhythms(c.record, c.beats);
        o.require(tiles_exactly(itp.episodes, itp.beats.size()), at + ": repaired tiling");
        o.require(itp.repair_passes <= 10, at + ": repair passes");
        max_passes = std::max(max_passes, itp.repair_passes);
    }
    if (o.pass) o.detail = "200 cases, max repair passes " + std::to_string(max_passes);
    return o;
}

Outcome repair_cases() {
    Outcome o;
    const auto sp = fixtures::spurious_case();
    const auto a = abstract_rhythms(sp.record, sp.beats);
    o.require(a.deleted_count == 1 && a.inserted_count == 0, "spurious: edit counts");
    o.require(a.deleted.size() == 1 && a.deleted[0].qrs_peak == fixtures::to_sample(sp.truth_ms), "spurious: wrong beat");
    o.require(a.episodes.size() == 1 && a.episodes[0].pattern == RhythmPattern::Sinus, "spurious: not a single SINUS");
    const auto dr = fixtures::dropout_case();
    const auto b = abstract_rhythms(dr.record, dr.beats);
    o.require(b.inserted_count == 1 && b.deleted_count == 0 && b.edits.size() == 1, "dropout: edit counts");
    double off = 0.0;
    if (!b.edits.empty()) {
        off = b.edits[0].sample_index * 1000.0 / dr.record.fs - dr.truth_ms;
        o.require(std::fabs(off) <= 60.0, "dropout: insertion " + fmt("%.1f", off) + " ms from truth");
    }
    o.require(interpretation_to_json(a) == interpretation_to_json(abstract_rhythms(sp.record, sp.beats)) &&
                  interpretation_to_json(b) == interpretation_to_json(abstract_rhythms(dr.record, dr.beats)),
              "not deterministic");
    if (o.pass) o.detail = "insertion offset " + fmt("%.1f", off) + " ms";
    return o;
}

Outcome gbt_checks() {
    Outcome o;
    GbtHyperparams hp;
    hp.rounds = 1;
    hp.max_depth = 1;
    hp.gamma = 0.0;
    hp.min_child_weight = 0.0;
    hp.subsample = 1.0;
    hp.colsample_bytree = 1.0;
    const auto X = fixtures::stump_X();
    const auto y = fixtures::stump_y();
    const auto m = train_gbt(X, y, hp, 1);
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const auto brute = fixtures::brute_force_stump(X, y, k, hp.lambda, hp.gamma, hp.eta);
        const auto& t = m.rounds.at(0)[k];
        const std::string at = "stump class " + std::to_string(k);
        if (brute.feature < 0) {
            o.require(t.nodes.size() == 1, at + ": split where none gains");
            continue;
        }
        o.require(t.nodes.size() == 3, at + ": not a stump");
        if (t.nodes.size() != 3) continue;
        o.require(t.nodes[0].feature == brute.feature && t.nodes[0].threshold == brute.threshold, at + ": split");
        o.require(t.nodes[0].gain == brute.gain, at + ": gain");
        o.require(t.nodes[static_cast<std::size_t>(t.nodes[0].left)].leaf == brute.left_leaf &&
                      t.nodes[static_cast<std::size_t>(t.nodes[0].right)].leaf == brute.right_leaf,
                  at + ": leaves");
    }

    // Overlapping classes, default hyperparameters without subsampling.
    Rng rng(5);
    FeatureMatrix Xn;
    std::vector<ClassLabel> yn;
    for (int i = 0; i < 1500; ++i) {
        const std::size_t c = rng.below(kNumClasses);
        std::vector<double> row;
        for (std::size_t k = 0; k < 8; ++k) row.push_back(rng.normal() + (k == c ? 1.0 : 0.0));
        Xn.push_back(std::move(row));
        yn.push_back(kAllClasses[c]);
    }
    GbtHyperparams full;
    full.subsample = 1.0;
    full.colsample_bytree = 1.0;
    GbtTrainLog log;
    const auto big = train_gbt(Xn, yn, full, 7, &log);
    for (std::size_t r = 1; r < log.train_loss.size(); ++r)
        o.require(log.train_loss[r] <= log.train_loss[r - 1] * (1.0 + 1e-12),
                  "loss increased at round " + std::to_string(r));

    // Structure under the default sampling.
    const auto sampled = train_gbt(Xn, yn, GbtHyperparams{}, 8);
    int max_depth = 0;
    double min_leaf = std::numeric_limits<double>::infinity();
    for (const auto* model : {&big, &sampled})
        for (const auto& round : model->rounds)
            for (const auto& t : round) {
                max_depth = std::max(max_depth, t.depth());
                for (const auto& nd : t.nodes)
                    if (nd.is_leaf()) min_leaf = std::min(min_leaf, nd.cover);
            }
    o.require(max_depth <= 6, "depth " + std::to_string(max_depth));
    o.require(min_leaf >= 20.0, "leaf hessian " + fmt("%.3f", min_leaf));
    if (o.pass) o.detail = "max depth " + std::to_string(max_depth) + ", min leaf hessian " + fmt("%.2f", min_leaf);
    return o;
}

Outcome rnn_checks() {
    Outcome o;
    Rng rng(6);
    auto cfg = fixtures::tiny_rnn_config();
    auto m = init_rnn(cfg, 6);
    for (const auto& t : m.layout)
        if (!t.is_weight())
            for (std::size_t k = t.offset; k < t.offset + t.size(); ++k) m.params[k] += 0.1 * rng.normal();

    const auto s0 = fixtures::random_sequence(rng, 3, 3), s1 = fixtures::random_sequence(rng, 2, 3);
    const Sequence* ptrs[] = {&s0, &s1};
    const int labels[] = {0, 2};
    const auto batch = make_batch(ptrs, labels);
    double worst = 0.0;
    for (std::optional<std::uint64_t> drop : {std::optional<std::uint64_t>{}, std::optional<std::uint64_t>{11}}) {
        const auto gc = fixtures::gradient_check(m, batch, cfg.l2, drop);
        worst = std::max(worst, gc.worst_rel);
        o.require(gc.worst_rel < 1e-4, "gradient check " + gc.worst_tensor + " " + fmt("%.3g", gc.worst_rel));
    }

    double mask_err = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t T = 1 + rng.below(10), pad = 1 + rng.below(8);
        const auto s = fixtures::random_sequence(rng, T, 3);
        Sequence padded(static_cast<Eigen::Index>(T + pad), 3);
        padded.topRows(static_cast<Eigen::Index>(T)) = s;
        padded.bottomRows(static_cast<Eigen::Index>(pad)) = 100.0 * fixtures::random_sequence(rng, pad, 3);
        std::vector<char> mask(T + pad, 0);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(T), 1);
        const auto a = forward(m, s), b = forward_masked(m, padded, mask);
        for (std::size_t c = 0; c < kNumClasses; ++c) mask_err = std::max(mask_err, std::fabs(a[c] - b[c]));
    }
    o.require(mask_err <= 1e-12, "masking " + fmt("%.3g", mask_err));

    RnnConfig full;
    for (int k = 0; k <= 10; ++k)
        o.require(std::fabs(scheduled_lr(full, k) - 0.002 * std::pow(2.0, -k / 2.0)) <= 1e-18,
                  "lr after " + std::to_string(k) + " plateaus");

    auto frozen = cfg;
    frozen.lr0 = 0.0;
    frozen.batch = 8;
    std::vector<Sequence> seqs;
    std::vector<int> ys;
    for (int i = 0; i < 40; ++i) {
        seqs.push_back(fixtures::random_sequence(rng, 2 + rng.below(6), 3));
        ys.push_back(i % 2);
    }
    const auto res = train_rnn(seqs, ys, frozen, 2);
    o.require(res.log.stopped_epoch == 16, "stopped at epoch " + std::to_string(res.log.stopped_epoch));
    if (o.pass)
        o.detail = "grad rel err " + fmt("%.2e", worst) + ", mask err " + fmt("%.1e", mask_err) + ", stop epoch 16";
    return o;
}

double csv_mean(const std::string& csv, const std::string& method) {
    std::istringstream is(csv);
    std::string line;
    while (std::getline(is, line))
        if (line.rfind(method + ",", 0) == 0) return std::stod(line.substr(line.rfind(',') + 1));
    throw std::runtime_error("no " + method + " row");
}

Outcome end_to_end(const Shell& sh, const fs::path& work) {
    Outcome o;
    const auto dir = work / "e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    o.require(sh.run(dir, "synth --per-class 200 --seed 1") == 0, "synth failed");
    if (!o.pass) return o;
    o.require(sh.run(dir, "cv --seed 1 --csv cv.csv --json cv.json") == 0, "cv failed");
    if (!o.pass) return o;
    const auto csv = read_file(dir / "cv.csv");
    const double g = csv_mean(csv, "gbt"), r = csv_mean(csv, "rnn"), s = csv_mean(csv, "stacker");
    o.detail = "gbt " + fmt("%.4f", g) + ", rnn " + fmt("%.4f", r) + ", stacker " + fmt("%.4f", s);
    o.require(s >= 0.90, "stacker below 0.90: " + o.detail);
    o.require(s >= std::max(g, r) - 0.02, "stacker behind a base model: " + o.detail);
    return o;
}

Outcome determinism(const Shell& sh, const fs::path& work) {
    Outcome o;
    const std::string small =
        "--set synth.max_duration_s=15 --set gbt.rounds=10 --set rnn.mlp_hidden=16 --set rnn.mlp_out=16 "
        "--set rnn.lstm_units=12 --set rnn.head_hidden=16 --set rnn.head_out=16 --set rnn.max_epochs=3 "
        "--set ensemble.n_rnns=2 --set ensemble.stack_folds=3 --set cv.folds=3 --seed 4 ";
    std::vector<fs::path> runs;
    for (const char* run : {"a", "b"}) {
        const auto dir = work / (std::string("det_") + run);
        fs::remove_all(dir);
        fs::create_directories(dir);
        runs.push_back(dir);
        const std::string base = small + "--jobs 2 ";
        const std::vector<std::string> steps = {
            "synth --per-class 6 --out synth",
            "features synth/manifest.csv --global g.csv --beats b.csv",
            "train synth/manifest.csv --out bundle",
            "classify synth/manifest.csv --bundle bundle --out answers.csv",
            "interpret synth/records/A00001.txt --out itp.json --annotations ann.tsv --svg itp.svg --bundle bundle",
            "render itp.json synth/records/A00001.txt --out render.svg",
            "cv synth/manifest.csv --csv cv.csv --json cv.json",
            "score answers.csv synth/manifest.csv",
            "config",
            "config --hash",
        };
        for (const auto& st : steps) o.require(sh.run(dir, base + st) == 0, std::string("run ") + run + ": " + st);
        if (!o.pass) return o;
    }
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(runs[0])) {
        if (!e.is_regular_file() || e.path().filename() == "stderr.log") continue;
        const auto rel = fs::relative(e.path(), runs[0]);
        ++files;
        o.require(fs::exists(runs[1] / rel) && read_file(e.path()) == read_file(runs[1] / rel), "differs: " + rel.string());
    }
    if (o.pass) o.detail = std::to_string(files) + " artifacts identical across repeated runs";
    return o;
}

Outcome challenge_metric() {
    Outcome o;
    ConfusionMatrix cm;
    cm.counts = {{{8, 2, 0, 0}, {0, 5, 0, 0}, {1, 0, 6, 0}, {0, 0, 0, 1}}};
    const auto s = challenge_score(cm);
    o.require(std::fabs(s.f1[0] - 16.0 / 19.0) <= 1e-12, "F1_N " + fmt("%.15f", s.f1[0]));
    ConfusionMatrix d;
    d.counts = {{{7, 0, 0, 0}, {0, 3, 0, 0}, {0, 0, 4, 0}, {0, 0, 0, 2}}};
    o.require(challenge_score(d).final == 1.0, "diagonal did not score 1");
    if (o.pass) o.detail = "F1_N " + fmt("%.15f", s.f1[0]);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    fs::path cli, work = fs::temp_directory_path() / "ecgr_acceptance";
    std::vector<int> only;
    app.add_option("--cli", cli, "ecgr executable")->required();
    app.add_option("--work", work, "Scratch directory");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);
    const Shell sh{fs::absolute(cli)};

    struct Criterion {
        int id;
        const char* name;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all = {
        {1, "feature-oracles", 10, feature_oracles},
        {2, "anomaly-boundaries", 1, anomaly_boundaries},
        {3, "interpretation-oracle", 60, interpretation_oracle},
        {4, "repair-cases", 1, repair_cases},
        {5, "gbt", 30, gbt_checks},
        {6, "rnn", 120, rnn_checks},
        {7, "end-to-end", 900, [&] { return end_to_end(sh, work); }},
        {8, "determinism", 0, [&] { return determinism(sh, work); }},
        {9, "challenge-metric", 0, challenge_metric},
    };

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_s > 0 && secs > c.limit_s) {
            if (o.pass) o.detail = "over time limit " + fmt("%.0f s", c.limit_s) + "; " + o.detail;
            o.pass = false;
        }
        std::printf("%s %d %s (%.2f s) %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
        std::fflush(stdout);
        if (!o.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
