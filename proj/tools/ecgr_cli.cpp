// ecgr: batch command-line front end over the C API.

#include "ecgr.h"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string config_path;
    std::vector<std::string> overrides;
    bool quiet = false;
};

class Failure {
public:
    Failure(ecgr_status s, std::string msg) : status(s), message(std::move(msg)) {}
    ecgr_status status;
    std::string message;
};

void check(ecgr_status s) {
    if (s != ECGR_OK) throw Failure(s, ecgr_last_error());
}

struct ConfigDeleter {
    void operator()(ecgr_config* c) const { ecgr_config_free(c); }
};
struct RecordDeleter {
    void operator()(ecgr_record* r) const { ecgr_record_free(r); }
};
struct InterpDeleter {
    void operator()(ecgr_interpretation* i) const { ecgr_interpretation_free(i); }
};
struct BundleDeleter {
    void operator()(ecgr_bundle* b) const { ecgr_bundle_free(b); }
};
using ConfigPtr = std::unique_ptr<ecgr_config, ConfigDeleter>;
using RecordPtr = std::unique_ptr<ecgr_record, RecordDeleter>;
using InterpPtr = std::unique_ptr<ecgr_interpretation, InterpDeleter>;
using BundlePtr = std::unique_ptr<ecgr_bundle, BundleDeleter>;

// Owns a string handed out by the library.
std::string take(char* p) {
    std::string s = p ? p : "";
    ecgr_free(p);
    return s;
}

ConfigPtr make_config(const Globals& g) {
    ecgr_config* c = nullptr;
    check(g.config_path.empty() ? ecgr_config_create(&c) : ecgr_config_load(g.config_path.c_str(), &c));
    ConfigPtr cp(c);
    for (const auto& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Failure(ECGR_E_ARGUMENT, "--set expects key=value, got " + kv);
        // A bad override is a command-line mistake.
        if (ecgr_config_set(c, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != ECGR_OK)
            throw Failure(ECGR_E_ARGUMENT, ecgr_last_error());
    }
    if (g.seed) check(ecgr_config_set_seed(c, *g.seed));
    if (g.jobs) check(ecgr_config_set_jobs(c, *g.jobs));
    return cp;
}

BundlePtr load_bundle(const std::string& dir) {
    ecgr_bundle* b = nullptr;
    check(ecgr_bundle_load(dir.c_str(), &b));
    return BundlePtr(b);
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::fwrite(text.data(), 1, text.size(), stdout);
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os || !(os << text)) throw Failure(ECGR_E_IO, "cannot write " + path);
}

void log_to_stderr(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG rhythm classification: interpretation, features, models, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(ecgr_version()));

    Globals g;
    app.add_option("--seed", g.seed, "Base seed")->envname("ECGR_SEED");
    app.add_option("--jobs", g.jobs, "Worker threads for record-level work")
        ->envname("ECGR_JOBS")
        ->check(CLI::PositiveNumber);
    app.add_option("--config", g.config_path, "JSON config overriding the defaults")->envname("ECGR_CONFIG");
    app.add_option("--set", g.overrides, "Override one config key: section.key=<json>");
    app.add_flag("-q,--quiet", g.quiet, "No progress messages");

    auto* synth = app.add_subcommand("synth", "Write a synthetic labelled corpus and its manifest");
    int per_class = 0;
    std::string synth_out;
    synth->add_option("--per-class", per_class, "Records per class")->required()->check(CLI::PositiveNumber);
    synth->add_option("--out", synth_out, "Output directory")->default_val("synth");

    auto* interp = app.add_subcommand("interpret", "Interpret one record");
    std::string interp_record, interp_json, interp_ann, interp_svg, interp_bundle;
    interp->add_option("record", interp_record, "Record file")->required();
    interp->add_option("--out", interp_json, "Interpretation JSON (default stdout)");
    interp->add_option("--annotations", interp_ann, "Beat annotation export");
    interp->add_option("--svg", interp_svg, "SVG overlay");
    interp->add_option("--bundle", interp_bundle, "Model bundle (inversion check and its config)");

    auto* feats = app.add_subcommand("features", "Global and per-beat feature tables for a manifest");
    std::string feats_manifest, feats_global, feats_beats, feats_bundle;
    feats->add_option("manifest", feats_manifest, "Manifest CSV")->required();
    feats->add_option("--global", feats_global, "Global feature CSV")->default_val("global_features.csv");
    feats->add_option("--beats", feats_beats, "Per-beat feature CSV")->default_val("beat_features.csv");
    feats->add_option("--bundle", feats_bundle, "Model bundle (inversion check and its config)");

    auto* train = app.add_subcommand("train", "Train a model bundle");
    std::string train_manifest, train_out;
    train->add_option("manifest", train_manifest, "Labelled manifest CSV")->required();
    train->add_option("--out", train_out, "Bundle directory")->default_val("bundle");

    auto* classify = app.add_subcommand("classify", "Label every record of a manifest");
    std::string cls_manifest, cls_bundle, cls_out;
    classify->add_option("manifest", cls_manifest, "Manifest CSV")->required();
    classify->add_option("--bundle", cls_bundle, "Bundle directory")->required();
    classify->add_option("--out", cls_out, "Answers CSV")->default_val("answers.csv");

    auto* cv = app.add_subcommand("cv", "Stratified cross-validation of GBT, RNN and stacker");
    std::string cv_manifest, cv_csv, cv_json;
    cv->add_option("manifest", cv_manifest, "Labelled manifest CSV")->default_val("synth/manifest.csv");
    cv->add_option("--csv", cv_csv, "CSV report (default stdout)");
    cv->add_option("--json", cv_json, "JSON report");

    auto* score = app.add_subcommand("score", "Challenge score of an answers file");
    std::string score_answers, score_ref;
    score->add_option("answers", score_answers, "Answers CSV")->required();
    score->add_option("reference", score_ref, "Reference CSV or manifest")->required();

    auto* render = app.add_subcommand("render", "SVG overlay of an interpretation on its record");
    std::string render_json, render_record, render_out;
    bool render_inverted = false;
    render->add_option("interpretation", render_json, "Interpretation JSON")->required();
    render->add_option("record", render_record, "Record file")->required();
    render->add_option("--out", render_out, "SVG file (default stdout)");
    render->add_flag("--inverted", render_inverted, "Interpretation was made on the negated signal");

    auto* config = app.add_subcommand("config", "Print the effective configuration");
    bool config_hash_only = false;
    config->add_flag("--hash", config_hash_only, "Print only the config hash");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (!g.quiet) ecgr_set_log_callback(log_to_stderr, nullptr);

    try {
        const auto cfg = make_config(g);
        if (*synth) {
            char* path = nullptr;
            check(ecgr_synth_corpus(cfg.get(), synth_out.c_str(), per_class, &path));
            std::printf("%s\n", take(path).c_str());
        } else if (*interp) {
            ecgr_record* r = nullptr;
            check(ecgr_record_load(interp_record.c_str(), &r));
            RecordPtr rec(r);
            BundlePtr bundle;
            if (!interp_bundle.empty()) bundle = load_bundle(interp_bundle);
            ecgr_interpretation* i = nullptr;
            check(ecgr_interpret(cfg.get(), bundle.get(), rec.get(), &i));
            InterpPtr itp(i);
            char* s = nullptr;
            check(ecgr_interpretation_json(itp.get(), &s));
            emit(interp_json, take(s));
            if (!interp_ann.empty()) {
                check(ecgr_interpretation_annotations(itp.get(), &s));
                emit(interp_ann, take(s));
            }
            if (!interp_svg.empty()) {
                check(ecgr_interpretation_svg(itp.get(), &s));
                emit(interp_svg, take(s));
            }
            std::size_t nb = 0, ne = 0;
            int del = 0, ins = 0, inv = 0;
            check(ecgr_interpretation_summary(itp.get(), &nb, &ne, &del, &ins, &inv));
            if (!g.quiet)
                std::fprintf(stderr, "%zu beats, %zu episodes, %d deleted, %d inserted%s\n", nb, ne, del, ins,
                             inv ? ", inverted" : "");
        } else if (*feats) {
            BundlePtr bundle;
            if (!feats_bundle.empty()) bundle = load_bundle(feats_bundle);
            check(ecgr_extract_features(cfg.get(), bundle.get(), feats_manifest.c_str(), feats_global.c_str(),
                                        feats_beats.c_str()));
        } else if (*train) {
            check(ecgr_train(cfg.get(), train_manifest.c_str(), train_out.c_str()));
            char* h = nullptr;
            check(ecgr_config_hash(cfg.get(), &h));
            if (!g.quiet) std::fprintf(stderr, "bundle written to %s (config %s)\n", train_out.c_str(), take(h).c_str());
        } else if (*classify) {
            const auto bundle = load_bundle(cls_bundle);
            check(ecgr_classify(bundle.get(), cfg.get(), cls_manifest.c_str(), cls_out.c_str()));
        } else if (*cv) {
            double means[3] = {0, 0, 0};
            const bool to_stdout = cv_csv.empty() || cv_csv == "-";
            check(ecgr_cv(cfg.get(), cv_manifest.c_str(), to_stdout ? "-" : cv_csv.c_str(),
                          cv_json.empty() ? nullptr : cv_json.c_str(), means));
            if (!to_stdout && !g.quiet) {
                std::fprintf(stderr, "means: gbt %.4f, rnn %.4f, stacker %.4f\n", means[0], means[1], means[2]);
            }
        } else if (*score) {
            double f1[4] = {0, 0, 0, 0}, fin = 0.0;
            check(ecgr_score(score_answers.c_str(), score_ref.c_str(), f1, &fin));
            std::printf("F1_N=%.6f\nF1_A=%.6f\nF1_O=%.6f\nF1_~=%.6f\nfinal=%.6f\n", f1[0], f1[1], f1[2], f1[3], fin);
        } else if (*render) {
            char* s = nullptr;
            check(ecgr_render(render_json.c_str(), render_record.c_str(), render_inverted ? 1 : 0, &s));
            emit(render_out, take(s));
        } else if (*config) {
            char* s = nullptr;
            check(config_hash_only ? ecgr_config_hash(cfg.get(), &s) : ecgr_config_to_json(cfg.get(), &s));
            std::string out = take(s);
            if (config_hash_only) out += "\n";
            emit("", out);
        }
    } catch (const Failure& f) {
        std::fprintf(stderr, "ecgr: %s error: %s\n", ecgr_status_name(f.status), f.message.c_str());
        return f.status == ECGR_E_ARGUMENT ? 2 : 1;
    }
    return 0;
}
