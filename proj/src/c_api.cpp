#include "ecgr.h"

#include "ecgr/pipeline.hpp"
#include "ecgr/render.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <new>
#include <string_view>

struct ecgr_config {
    ecgr::PipelineConfig cfg;
};
struct ecgr_record {
    ecgr::Record r;
};
struct ecgr_interpretation {
    ecgr::ProcessedRecord p;
};
struct ecgr_bundle {
    ecgr::Bundle b;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mu;
ecgr_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

ecgr::Logger logger() {
    std::lock_guard lock(g_log_mu);
    if (!g_log_fn) return {};
    auto fn = g_log_fn;
    auto user = g_log_user;
    return [fn, user](const std::string& m) { fn(m.c_str(), user); };
}

ecgr_status fail(ecgr_status s, const char* what) {
    g_last_error = what;
    return s;
}

template <class F>
ecgr_status guard(F&& f) {
    g_last_error.clear();
    try {
        f();
        return ECGR_OK;
    } catch (const ecgr::ArgumentError& e) {
        return fail(ECGR_E_ARGUMENT, e.what());
    } catch (const ecgr::IoError& e) {
        return fail(ECGR_E_IO, e.what());
    } catch (const ecgr::ParseError& e) {
        return fail(ECGR_E_PARSE, e.what());
    } catch (const ecgr::FormatError& e) {
        return fail(ECGR_E_FORMAT, e.what());
    } catch (const ecgr::EvidenceError& e) {
        return fail(ECGR_E_EVIDENCE, e.what());
    } catch (const ecgr::DegenerateDataError& e) {
        return fail(ECGR_E_DEGENERATE, e.what());
    } catch (const ecgr::ShapeError& e) {
        return fail(ECGR_E_SHAPE, e.what());
    } catch (const ecgr::RegularizationError& e) {
        return fail(ECGR_E_NUMERIC, e.what());
    } catch (const std::bad_alloc&) {
        return fail(ECGR_E_INTERNAL, "out of memory");
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(ECGR_E_IO, e.what());
    } catch (const std::exception& e) {
        return fail(ECGR_E_INTERNAL, e.what());
    } catch (...) {
        return fail(ECGR_E_INTERNAL, "unknown error");
    }
}

void need(const void* p, const char* name) {
    if (!p) throw ecgr::ArgumentError(std::string(name) + " is NULL");
}

char* dup(const std::string& s) {
    auto* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.data(), s.size() + 1);
    return p;
}

void write_file(const char* path, const std::string& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ecgr::IoError(std::string("cannot write ") + path);
    os << s;
    if (!os) throw ecgr::IoError(std::string("cannot write ") + path);
}

std::string read_file(const char* path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ecgr::IoError(std::string("cannot read ") + path);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<ecgr::Record> manifest_records(const char* manifest, int jobs) {
    need(manifest, "manifest");
    return ecgr::load_manifest_records(ecgr::load_manifest(manifest), jobs);
}

}  // namespace

extern "C" {

const char* ecgr_version(void) { return "1.0.0"; }

const char* ecgr_status_name(ecgr_status s) {
    switch (s) {
        case ECGR_OK: return "ok";
        case ECGR_E_ARGUMENT: return "argument";
        case ECGR_E_IO: return "io";
        case ECGR_E_FORMAT: return "format";
        case ECGR_E_PARSE: return "parse";
        case ECGR_E_EVIDENCE: return "evidence";
        case ECGR_E_DEGENERATE: return "degenerate";
        case ECGR_E_SHAPE: return "shape";
        case ECGR_E_NUMERIC: return "numeric";
        case ECGR_E_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* ecgr_last_error(void) { return g_last_error.c_str(); }

void ecgr_free(void* p) { std::free(p); }

void ecgr_set_log_callback(ecgr_log_fn fn, void* user) {
    std::lock_guard lock(g_log_mu);
    g_log_fn = fn;
    g_log_user = user;
}

// ---- configuration

ecgr_status ecgr_config_create(ecgr_config** out) {
    return guard([&] {
        need(out, "out");
        *out = new ecgr_config{};
    });
}

ecgr_status ecgr_config_load(const char* path, ecgr_config** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new ecgr_config{ecgr::load_config(path)};
    });
}

ecgr_status ecgr_config_set(ecgr_config* c, const char* key, const char* json_value) {
    return guard([&] {
        need(c, "config");
        need(key, "key");
        need(json_value, "value");
        ecgr::config_set(c->cfg, key, json_value);
    });
}

ecgr_status ecgr_config_set_seed(ecgr_config* c, uint64_t seed) {
    return guard([&] {
        need(c, "config");
        c->cfg.seed = seed;
    });
}

ecgr_status ecgr_config_set_jobs(ecgr_config* c, int jobs) {
    return guard([&] {
        need(c, "config");
        if (jobs < 1) throw ecgr::ArgumentError("jobs must be at least 1");
        c->cfg.jobs = jobs;
    });
}

ecgr_status ecgr_config_to_json(const ecgr_config* c, char** out) {
    return guard([&] {
        need(c, "config");
        need(out, "out");
        *out = dup(ecgr::config_to_json(c->cfg) + "\n");
    });
}

ecgr_status ecgr_config_hash(const ecgr_config* c, char** out) {
    return guard([&] {
        need(c, "config");
        need(out, "out");
        *out = dup(ecgr::config_hash(c->cfg));
    });
}

void ecgr_config_free(ecgr_config* c) { delete c; }

// ---- records

ecgr_status ecgr_record_load(const char* path, ecgr_record** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new ecgr_record{ecgr::load_record(path)};
    });
}

ecgr_status ecgr_record_synth(char label, uint64_t seed, double duration_s, ecgr_record** out) {
    return guard([&] {
        need(out, "out");
        const auto c = ecgr::label_from_char(label);
        if (!c) throw ecgr::ArgumentError("label must be one of N, A, O, ~");
        *out = new ecgr_record{ecgr::synth_record(*c, seed, duration_s)};
    });
}

ecgr_status ecgr_record_write(const ecgr_record* r, const char* path) {
    return guard([&] {
        need(r, "record");
        need(path, "path");
        ecgr::write_record(path, r->r);
    });
}

ecgr_status ecgr_record_info(const ecgr_record* r, int* fs, size_t* n_samples) {
    return guard([&] {
        need(r, "record");
        if (fs) *fs = r->r.fs;
        if (n_samples) *n_samples = r->r.samples.size();
    });
}

ecgr_status ecgr_record_samples(const ecgr_record* r, double* out, size_t capacity) {
    return guard([&] {
        need(r, "record");
        need(out, "out");
        const auto n = std::min(capacity, r->r.samples.size());
        std::copy_n(r->r.samples.begin(), n, out);
    });
}

void ecgr_record_free(ecgr_record* r) { delete r; }

// ---- interpretation

ecgr_status ecgr_interpret(const ecgr_config* c, const ecgr_bundle* bundle, const ecgr_record* r,
                           ecgr_interpretation** out) {
    return guard([&] {
        need(r, "record");
        need(out, "out");
        if (!c && !bundle) throw ecgr::ArgumentError("config and bundle are both NULL");
        const auto& cfg = bundle ? bundle->b.cfg : c->cfg;
        const ecgr::LogRegModel* inv = bundle && bundle->b.has_logreg ? &bundle->b.logreg : nullptr;
        *out = new ecgr_interpretation{ecgr::process_record(r->r, cfg, inv)};
    });
}

ecgr_status ecgr_interpretation_json(const ecgr_interpretation* itp, char** out) {
    return guard([&] {
        need(itp, "interpretation");
        need(out, "out");
        *out = dup(ecgr::interpretation_to_json(itp->p.itp) + "\n");
    });
}

ecgr_status ecgr_interpretation_annotations(const ecgr_interpretation* itp, char** out) {
    return guard([&] {
        need(itp, "interpretation");
        need(out, "out");
        *out = dup(ecgr::annotation_rows(itp->p.itp.beats));
    });
}

ecgr_status ecgr_interpretation_svg(const ecgr_interpretation* itp, char** out) {
    return guard([&] {
        need(itp, "interpretation");
        need(out, "out");
        *out = dup(ecgr::render_svg(itp->p.itp, itp->p.record));
    });
}

ecgr_status ecgr_interpretation_summary(const ecgr_interpretation* itp, size_t* n_beats, size_t* n_episodes,
                                        int* deleted, int* inserted, int* inverted) {
    return guard([&] {
        need(itp, "interpretation");
        if (n_beats) *n_beats = itp->p.itp.beats.size();
        if (n_episodes) *n_episodes = itp->p.itp.episodes.size();
        if (deleted) *deleted = itp->p.itp.deleted_count;
        if (inserted) *inserted = itp->p.itp.inserted_count;
        if (inverted) *inverted = itp->p.inverted ? 1 : 0;
    });
}

void ecgr_interpretation_free(ecgr_interpretation* itp) { delete itp; }

ecgr_status ecgr_render(const char* interpretation_json_path, const char* record_path, int inverted,
                        char** svg_out) {
    return guard([&] {
        need(interpretation_json_path, "interpretation path");
        need(record_path, "record path");
        need(svg_out, "out");
        const auto itp = ecgr::interpretation_from_json(read_file(interpretation_json_path));
        auto rec = ecgr::prepare_record(ecgr::load_record(record_path));
        if (inverted) rec = ecgr::negate(rec);
        for (const auto& b : itp.beats)
            if (b.qrs_offset >= static_cast<long>(rec.samples.size()))
                throw ecgr::FormatError("interpretation refers to samples past the end of the record");
        *svg_out = dup(ecgr::render_svg(itp, rec));
    });
}

// ---- batch operations

ecgr_status ecgr_synth_corpus(const ecgr_config* c, const char* out_dir, int per_class, char** manifest_path) {
    return guard([&] {
        need(c, "config");
        need(out_dir, "out_dir");
        const auto p = ecgr::synth_corpus(out_dir, per_class, c->cfg);
        if (manifest_path) *manifest_path = dup(p.string());
    });
}

ecgr_status ecgr_extract_features(const ecgr_config* c, const ecgr_bundle* bundle, const char* manifest,
                                  const char* global_csv, const char* beats_csv) {
    return guard([&] {
        need(c, "config");
        const auto records = manifest_records(manifest, c->cfg.jobs);
        const auto& cfg = bundle ? bundle->b.cfg : c->cfg;
        const ecgr::LogRegModel* inv = bundle && bundle->b.has_logreg ? &bundle->b.logreg : nullptr;
        std::vector<std::string> g(records.size()), s(records.size());
        ecgr::parallel_for(records.size(), c->cfg.jobs, [&](std::size_t i) {
            const auto p = ecgr::process_record(records[i], cfg, inv);
            g[i] = ecgr::global_features_csv_row(records[i].id, p.global);
            s[i] = ecgr::beat_features_csv_rows(records[i].id, p.beats);
        });
        if (global_csv) {
            std::string out = ecgr::global_features_csv_header();
            for (const auto& row : g) out += row;
            write_file(global_csv, out);
        }
        if (beats_csv) {
            std::string out = ecgr::beat_features_csv_header();
            for (const auto& rows : s) out += rows;
            write_file(beats_csv, out);
        }
    });
}

ecgr_status ecgr_train(const ecgr_config* c, const char* manifest, const char* bundle_dir) {
    return guard([&] {
        need(c, "config");
        need(bundle_dir, "bundle_dir");
        const auto records = manifest_records(manifest, c->cfg.jobs);
        const auto b = ecgr::train_bundle(records, c->cfg, logger());
        ecgr::save_bundle(bundle_dir, b);
    });
}

ecgr_status ecgr_bundle_load(const char* dir, ecgr_bundle** out) {
    return guard([&] {
        need(dir, "dir");
        need(out, "out");
        *out = new ecgr_bundle{ecgr::load_bundle(dir)};
    });
}

ecgr_status ecgr_bundle_config_hash(const ecgr_bundle* b, char** out) {
    return guard([&] {
        need(b, "bundle");
        need(out, "out");
        *out = dup(b->b.config_hash);
    });
}

void ecgr_bundle_free(ecgr_bundle* b) { delete b; }

ecgr_status ecgr_classify(const ecgr_bundle* b, const ecgr_config* c, const char* manifest, const char* answers_path) {
    return guard([&] {
        need(b, "bundle");
        need(answers_path, "answers_path");
        ecgr::PipelineConfig run = b->b.cfg;
        run.jobs = c ? c->cfg.jobs : 1;
        const auto records = manifest_records(manifest, run.jobs);
        const auto preds = ecgr::classify_records(b->b, records, run);
        std::vector<std::string> ids;
        std::vector<ecgr::ClassLabel> labels;
        for (std::size_t i = 0; i < records.size(); ++i) {
            ids.push_back(records[i].id);
            labels.push_back(preds[i].label);
        }
        write_file(answers_path, ecgr::answers_csv(ids, labels));
    });
}

ecgr_status ecgr_classify_record(const ecgr_bundle* b, const ecgr_record* r, char* label, double probs[4]) {
    return guard([&] {
        need(b, "bundle");
        need(r, "record");
        const auto p = ecgr::process_record(r->r, b->b.cfg, b->b.has_logreg ? &b->b.logreg : nullptr);
        const auto pred = ecgr::classify_processed(b->b, p);
        if (label) *label = ecgr::to_char(pred.label);
        if (probs)
            for (std::size_t k = 0; k < ecgr::kNumClasses; ++k) probs[k] = pred.probs[k];
    });
}

ecgr_status ecgr_cv(const ecgr_config* c, const char* manifest, const char* csv_path, const char* json_path,
                    double means[3]) {
    return guard([&] {
        need(c, "config");
        const auto records = manifest_records(manifest, c->cfg.jobs);
        const auto rep = ecgr::run_cv(records, c->cfg, logger());
        if (csv_path && std::string_view(csv_path) == "-") {
            const auto csv = ecgr::cv_report_csv(rep);
            std::fwrite(csv.data(), 1, csv.size(), stdout);
            std::fflush(stdout);
        } else if (csv_path) {
            write_file(csv_path, ecgr::cv_report_csv(rep));
        }
        if (json_path) write_file(json_path, ecgr::cv_report_json(rep) + "\n");
        if (means)
            for (std::size_t m = 0; m < 3; ++m) means[m] = rep.mean(m);
    });
}

ecgr_status ecgr_score(const char* answers, const char* reference, double f1[4], double* final_score) {
    return guard([&] {
        need(answers, "answers");
        need(reference, "reference");
        const auto s = ecgr::score_answers(answers, reference);
        if (f1)
            for (std::size_t k = 0; k < ecgr::kNumClasses; ++k) f1[k] = s.f1[k];
        if (final_score) *final_score = s.final;
    });
}

}  // extern "C"
