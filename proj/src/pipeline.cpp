#include "ecgr/pipeline.hpp"

#include "ecgr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace ecgr {

// ---------------------------------------------------------------------------
// Configuration

namespace {

using nlohmann::json;

// Calls f(section, key, field) for every serialisable field.
template <class C, class F>
void visit_fields(C& c, F&& f) {
    f("", "version", c.version);
    f("", "seed", c.seed);
    f("", "jobs", c.jobs);
    f("", "detect_inversion", c.detect_inversion);

    auto& cd = c.conduction;
    f("conduction", "detect_threshold_factor", cd.detect_threshold_factor);
    f("conduction", "detect_history", cd.detect_history);
    f("conduction", "refractory_ms", cd.refractory_ms);
    f("conduction", "integration_ms", cd.integration_ms);
    f("conduction", "slope_fraction", cd.slope_fraction);
    f("conduction", "qrs_max_half_ms", cd.qrs_max_half_ms);
    f("conduction", "t_search_start_ms", cd.t_search_start_ms);
    f("conduction", "t_search_end_ms", cd.t_search_end_ms);
    f("conduction", "p_window_ms", cd.p_window_ms);
    f("conduction", "wave_presence_mv", cd.wave_presence_mv);
    f("conduction", "wave_edge_fraction", cd.wave_edge_fraction);
    f("conduction", "p_min_ms", cd.p_min_ms);
    f("conduction", "p_max_ms", cd.p_max_ms);
    f("conduction", "template_ms", cd.template_ms);
    f("conduction", "cluster_correlation", cd.cluster_correlation);
    f("conduction", "ventricular_dist", cd.ventricular_dist);
    f("conduction", "fusion_dist", cd.fusion_dist);
    f("conduction", "wide_qrs_ms", cd.wide_qrs_ms);
    f("conduction", "ventricular_width_ratio", cd.ventricular_width_ratio);

    auto& it = c.interpretation;
    f("interpretation", "beam_width", it.beam_width);
    f("interpretation", "switch_cost", it.switch_cost);
    f("interpretation", "unexplained_beat_cost", it.unexplained_beat_cost);
    f("interpretation", "min_episode_beats", it.min_episode_beats);
    f("interpretation", "sinus_min_bpm", it.sinus_min_bpm);
    f("interpretation", "sinus_max_bpm", it.sinus_max_bpm);
    f("interpretation", "sinus_min_p_fraction", it.sinus_min_p_fraction);
    f("interpretation", "irregularity_tolerance", it.irregularity_tolerance);
    f("interpretation", "irregularity_weight", it.irregularity_weight);
    f("interpretation", "rr_break_low", it.rr_break_low);
    f("interpretation", "rr_break_high", it.rr_break_high);
    f("interpretation", "rr_break_cost", it.rr_break_cost);
    f("interpretation", "brady_max_bpm", it.brady_max_bpm);
    f("interpretation", "tachy_min_bpm", it.tachy_min_bpm);
    f("interpretation", "afib_min_irregularity", it.afib_min_irregularity);
    f("interpretation", "afib_max_p_fraction", it.afib_max_p_fraction);
    f("interpretation", "afib_p_weight", it.afib_p_weight);
    f("interpretation", "flutter_low_hz", it.flutter_low_hz);
    f("interpretation", "flutter_high_hz", it.flutter_high_hz);
    f("interpretation", "flutter_prominence", it.flutter_prominence);
    f("interpretation", "flutter_min_tp_s", it.flutter_min_tp_s);
    f("interpretation", "spectrum_low_hz", it.spectrum_low_hz);
    f("interpretation", "spectrum_high_hz", it.spectrum_high_hz);
    f("interpretation", "ectopy_max_break_fraction", it.ectopy_max_break_fraction);
    f("interpretation", "vt_min_ventricular_fraction", it.vt_min_ventricular_fraction);
    f("interpretation", "max_repair_passes", it.max_repair_passes);
    f("interpretation", "profile_window_ms", it.profile_window_ms);
    f("interpretation", "delete_profile_ratio", it.delete_profile_ratio);
    f("interpretation", "insert_gap_low", it.insert_gap_low);
    f("interpretation", "insert_gap_high", it.insert_gap_high);
    f("interpretation", "insert_search_ms", it.insert_search_ms);
    f("interpretation", "insert_amp_ratio", it.insert_amp_ratio);
    f("interpretation", "local_median_gaps", it.local_median_gaps);

    auto& an = c.anomalies;
    f("anomalies", "tachy_bpm", an.tachy_bpm);
    f("anomalies", "brady_bpm", an.brady_bpm);
    f("anomalies", "wide_qrs_ms", an.wide_qrs_ms);
    f("anomalies", "long_pr_ms", an.long_pr_ms);
    f("anomalies", "extrasystole_prev_ratio", an.extrasystole_prev_ratio);
    f("anomalies", "extrasystole_next_ratio", an.extrasystole_next_ratio);
    f("anomalies", "local_median_halfwidth", an.local_median_halfwidth);

    f("logreg", "l2", c.logreg.l2);
    f("logreg", "grad_tol", c.logreg.grad_tol);
    f("logreg", "max_iter", c.logreg.max_iter);

    auto& g = c.gbt;
    f("gbt", "max_depth", g.max_depth);
    f("gbt", "eta", g.eta);
    f("gbt", "gamma", g.gamma);
    f("gbt", "colsample_bytree", g.colsample_bytree);
    f("gbt", "min_child_weight", g.min_child_weight);
    f("gbt", "subsample", g.subsample);
    f("gbt", "rounds", g.rounds);
    f("gbt", "lambda", g.lambda);

    auto& r = c.rnn;
    f("rnn", "input_dim", r.input_dim);
    f("rnn", "mlp_hidden", r.mlp_hidden);
    f("rnn", "mlp_out", r.mlp_out);
    f("rnn", "lstm_units", r.lstm_units);
    f("rnn", "head_hidden", r.head_hidden);
    f("rnn", "head_out", r.head_out);
    f("rnn", "classes", r.classes);
    f("rnn", "l2", r.l2);
    f("rnn", "dropout_rate", r.dropout_rate);
    f("rnn", "batch", r.batch);
    f("rnn", "lr0", r.lr0);
    f("rnn", "lr_decay_log2", r.lr_decay_log2);
    f("rnn", "plateau_patience", r.plateau_patience);
    f("rnn", "early_stop", r.early_stop);
    f("rnn", "val_frac", r.val_frac);
    f("rnn", "max_epochs", r.max_epochs);
    f("rnn", "bucket_width", r.bucket_width);

    f("ensemble", "n_rnns", c.n_rnns);
    f("ensemble", "lda_shrink", c.lda_shrink);
    f("ensemble", "stack_folds", c.stack_folds);

    f("cv", "folds", c.cv_folds);
    f("cv", "stacking", c.cv_stacking);
    f("cv", "rnn_max_epochs", c.cv_rnn_max_epochs);

    f("synth", "min_duration_s", c.synth_min_duration_s);
    f("synth", "max_duration_s", c.synth_max_duration_s);
}

json to_json_value(const CvStacking& s) { return s == CvStacking::Nested ? "nested" : "outer"; }
template <class T>
json to_json_value(const T& v) {
    return json(v);
}

void from_json_value(const json& j, CvStacking& s) {
    const auto v = j.get<std::string>();
    if (v == "outer") s = CvStacking::Outer;
    else if (v == "nested") s = CvStacking::Nested;
    else throw FormatError("config: cv.stacking must be \"outer\" or \"nested\"");
}
template <class T>
void from_json_value(const json& j, T& v) {
    v = j.get<T>();
}

json config_json(const PipelineConfig& c, bool include_runtime) {
    json j = json::object();
    auto& cc = const_cast<PipelineConfig&>(c);
    visit_fields(cc, [&](const char* section, const char* key, auto& field) {
        if (!include_runtime && std::string_view(key) == "jobs") return;
        if (*section) j[section][key] = to_json_value(field);
        else j[key] = to_json_value(field);
    });
    return j;
}

void apply_json(PipelineConfig& c, const json& j) {
    if (!j.is_object()) throw FormatError("config: top level must be an object");
    std::set<std::string> known;
    visit_fields(c, [&](const char* section, const char* key, auto& field) {
        const std::string s = section;
        known.insert(s.empty() ? std::string(key) : s + "." + key);
        if (!s.empty()) known.insert(s);
        const json* node = &j;
        if (!s.empty()) {
            if (!j.contains(s)) return;
            node = &j.at(s);
            if (!node->is_object()) throw FormatError("config: section " + s + " must be an object");
        }
        if (!node->contains(key)) return;
        try {
            from_json_value(node->at(key), field);
        } catch (const json::exception& e) {
            throw FormatError("config: bad value for " + (s.empty() ? std::string(key) : s + "." + key) + ": " + e.what());
        }
    });
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw FormatError("config: unknown key " + k);
        if (v.is_object())
            for (const auto& [k2, v2] : v.items())
                if (!known.count(k + "." + k2)) throw FormatError("config: unknown key " + k + "." + k2);
    }
    if (c.version != 1) throw FormatError("config: unsupported version");
}

}  // namespace

std::string config_to_json(const PipelineConfig& c) { return config_json(c, true).dump(2); }

PipelineConfig config_from_json(const std::string& text) {
    PipelineConfig c;
    try {
        apply_json(c, json::parse(text));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return config_from_json(ss.str());
}

void config_set(PipelineConfig& c, const std::string& key, const std::string& json_value) {
    json v;
    try {
        v = json::parse(json_value);
    } catch (const json::parse_error&) {
        v = json_value;  // bare strings
    }
    json patch = json::object();
    const auto dot = key.find('.');
    if (dot == std::string::npos) patch[key] = v;
    else patch[key.substr(0, dot)][key.substr(dot + 1)] = v;
    apply_json(c, patch);
}

std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a64(config_json(c, false).dump())); }

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
    // splitmix64 over (base, tag hash, index)
    std::uint64_t z = base ^ fnv1a64(tag) ^ (index * 0x9E3779B97F4A7C15ULL);
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t err_index = n;
    std::exception_ptr err;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < err_index) {
                    err_index = i;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Per-record processing

Record prepare_record(const Record& raw) {
    raw.validate();
    Record r = raw.fs == kCanonicalFs ? raw : resample(raw, kCanonicalFs);
    return baseline_filter(r);
}

std::vector<BeatObservation> safe_evidence(const Record& prepared, const ConductionConfig& cfg) {
    try {
        return conduction_evidence(prepared, cfg);
    } catch (const EvidenceError&) {
        return {};
    }
}

ProcessedRecord analyse_prepared(const Record& prepared, const PipelineConfig& cfg) {
    ProcessedRecord p;
    p.id = prepared.id;
    p.label = prepared.label;
    p.record = prepared;
    p.itp = abstract_rhythms(prepared, safe_evidence(prepared, cfg.conduction), cfg.interpretation, cfg.conduction);
    p.global = global_features(prepared, p.itp, cfg.anomalies);
    p.beats = beat_features_or_placeholder(prepared, p.itp);
    return p;
}

std::optional<std::pair<InversionFeatures, InversionFeatures>> inversion_pair(const Record& prepared,
                                                                              const ConductionConfig& cfg) {
    const auto up = safe_evidence(prepared, cfg);
    if (up.empty()) return std::nullopt;
    const Record neg = negate(prepared);
    const auto dn = safe_evidence(neg, cfg);
    if (dn.empty()) return std::nullopt;
    return std::make_pair(inversion_features(prepared, up), inversion_features(neg, dn));
}

ProcessedRecord process_record(const Record& raw, const PipelineConfig& cfg, const LogRegModel* inversion) {
    Record prep = prepare_record(raw);
    bool inverted = false;
    double prob = 0.0;
    if (inversion && cfg.detect_inversion) {
        const auto beats = safe_evidence(prep, cfg.conduction);
        if (!beats.empty()) {
            const auto d = detect_inversion(*inversion, inversion_features(prep, beats));
            prob = d.probability;
            inverted = d.inverted;
        }
    }
    if (inverted) prep = negate(prep);
    auto p = analyse_prepared(prep, cfg);
    p.inverted = inverted;
    p.inversion_probability = prob;
    return p;
}

Sequence to_sequence(const BeatFeatureSequence& s) {
    Sequence m(static_cast<Eigen::Index>(s.rows.size()), static_cast<Eigen::Index>(kBeatFeatureCount));
    for (std::size_t i = 0; i < s.rows.size(); ++i)
        for (std::size_t j = 0; j < kBeatFeatureCount; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s.rows[i][j];
    return m;
}

// ---------------------------------------------------------------------------
// Model training

namespace {

ClassLabel require_label(const ProcessedRecord& p) {
    if (!p.label) throw ArgumentError("record " + p.id + " has no reference label");
    return *p.label;
}

}  // namespace

BaseModels train_base_models(const RecordView& data, std::span<const std::size_t> idx, const PipelineConfig& cfg,
                             std::uint64_t seed, const Logger& log) {
    FeatureMatrix X;
    std::vector<ClassLabel> y;
    std::vector<Sequence> seqs;
    std::vector<int> yi;
    for (std::size_t i : idx) {
        const auto& p = *data[i];
        X.emplace_back(p.global.v.begin(), p.global.v.end());
        y.push_back(require_label(p));
        seqs.push_back(to_sequence(p.beats));
        yi.push_back(static_cast<int>(index_of(y.back())));
    }
    BaseModels m;
    m.gbt = train_gbt(X, y, cfg.gbt, derive_seed(seed, "gbt"));
    m.rnns.resize(static_cast<std::size_t>(std::max(1, cfg.n_rnns)));
    std::vector<RnnTrainLog> logs(m.rnns.size());
    parallel_for(m.rnns.size(), cfg.jobs, [&](std::size_t r) {
        auto res = train_rnn(seqs, yi, cfg.rnn, derive_seed(seed, "rnn", r));
        m.rnns[r] = std::move(res.model);
        logs[r] = std::move(res.log);
    });
    if (log)
        for (std::size_t r = 0; r < logs.size(); ++r) {
            const auto& L = logs[r];
            const auto& best = L.epochs[static_cast<std::size_t>(L.best_epoch - 1)];
            std::ostringstream os;
            os << "  rnn " << r << ": " << L.stopped_epoch << " epochs, best " << L.best_epoch << " (val loss "
               << best.val_loss << ", acc " << best.val_accuracy << ")";
            log(os.str());
        }
    return m;
}

std::vector<BasePredictions> predict_base(const BaseModels& m, const RecordView& data,
                                          std::span<const std::size_t> idx) {
    std::vector<BasePredictions> out(idx.size());
    std::vector<Sequence> seqs;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out[k].gbt = predict_gbt(m.gbt, data[idx[k]]->global.v);
        seqs.push_back(to_sequence(data[idx[k]]->beats));
    }
    std::vector<std::vector<ClassProbabilities>> per(m.rnns.size());
    for (std::size_t r = 0; r < m.rnns.size(); ++r) per[r] = predict_rnn(m.rnns[r], seqs);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::vector<ClassProbabilities> ps;
        for (const auto& v : per) ps.push_back(v[k]);
        out[k].rnn = average_probs(ps);
    }
    return out;
}

LdaModel fit_stacker(std::span<const StackVector> Z, std::span<const ClassLabel> y, double shrink) {
    for (;;) {
        try {
            return fit_lda(Z, y, shrink);
        } catch (const RegularizationError&) {
            if (shrink >= 1.0) throw;
            shrink = std::min(1.0, std::max(2.0 * shrink, 0.05));
        }
    }
}

StackedModels train_stacked(const RecordView& data, std::span<const std::size_t> idx, const PipelineConfig& cfg,
                            std::uint64_t seed, const Logger& log) {
    std::vector<ClassLabel> labels;
    for (std::size_t i : idx) labels.push_back(require_label(*data[i]));
    const auto folds = stratified_folds(labels, cfg.stack_folds, derive_seed(seed, "stack-folds"));
    std::vector<StackVector> Z(idx.size());
    std::vector<char> filled(idx.size(), 0);
    for (int j = 0; j < cfg.stack_folds; ++j) {
        std::vector<std::size_t> tr, te, te_pos;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (folds[k] == j) {
                te.push_back(idx[k]);
                te_pos.push_back(k);
            } else {
                tr.push_back(idx[k]);
            }
        }
        if (te.empty()) continue;
        if (log) log("stacking fold " + std::to_string(j) + ": " + std::to_string(tr.size()) + " train, " +
                     std::to_string(te.size()) + " held out");
        const auto models = train_base_models(data, tr, cfg, derive_seed(seed, "inner", static_cast<std::uint64_t>(j)), log);
        std::vector<char> in_train(data.size(), 0);
        for (std::size_t i : tr) in_train[i] = 1;
        const auto preds = predict_base(models, data, te);
        for (std::size_t k = 0; k < te.size(); ++k) {
            if (in_train[te[k]]) throw std::logic_error("stacking leakage: record " + data[te[k]]->id);
            Z[te_pos[k]] = stack_features(preds[k].gbt, preds[k].rnn);
            filled[te_pos[k]] = 1;
        }
    }
    for (char f : filled)
        if (!f) throw std::logic_error("stacking: a record received no out-of-fold prediction");
    StackedModels out;
    out.lda = fit_stacker(Z, labels, cfg.lda_shrink);
    if (log) log("refitting base models on " + std::to_string(idx.size()) + " records");
    out.base = train_base_models(data, idx, cfg, derive_seed(seed, "full"), log);
    return out;
}

LogRegModel train_inversion_model(const std::vector<Record>& prepared, const PipelineConfig& cfg) {
    std::vector<std::optional<std::pair<InversionFeatures, InversionFeatures>>> pairs(prepared.size());
    parallel_for(prepared.size(), cfg.jobs, [&](std::size_t i) { pairs[i] = inversion_pair(prepared[i], cfg.conduction); });
    std::vector<InversionFeatures> X;
    std::vector<int> y;
    for (const auto& p : pairs) {
        if (!p) continue;
        X.push_back(p->first);
        y.push_back(0);
        X.push_back(p->second);
        y.push_back(1);
    }
    return train_logreg(X, y, cfg.logreg).model;
}

Bundle train_bundle(const std::vector<Record>& records, const PipelineConfig& cfg, const Logger& log) {
    Bundle b;
    b.cfg = cfg;
    b.config_hash = config_hash(cfg);
    std::vector<Record> prepared(records.size());
    parallel_for(records.size(), cfg.jobs, [&](std::size_t i) { prepared[i] = prepare_record(records[i]); });
    if (cfg.detect_inversion) {
        if (log) log("training inversion detector");
        b.logreg = train_inversion_model(prepared, cfg);
        b.has_logreg = true;
    }
    if (log) log("interpreting " + std::to_string(records.size()) + " records");
    std::vector<ProcessedRecord> processed(records.size());
    parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
        processed[i] = process_record(records[i], cfg, b.has_logreg ? &b.logreg : nullptr);
    });
    RecordView view;
    for (const auto& p : processed) view.push_back(&p);
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), 0);
    auto stacked = train_stacked(view, all, cfg, derive_seed(cfg.seed, "train"), log);
    b.gbt = std::move(stacked.base.gbt);
    b.rnns = std::move(stacked.base.rnns);
    b.lda = stacked.lda;
    return b;
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    os << s;
    if (!os) throw IoError("cannot write " + p.string());
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const Bundle& b) {
    std::filesystem::create_directories(dir);
    json meta;
    meta["version"] = 1;
    meta["config_hash"] = b.config_hash;
    meta["config"] = json::parse(config_to_json(b.cfg));
    meta["n_rnns"] = b.rnns.size();
    meta["has_logreg"] = b.has_logreg;
    write_text(dir / "bundle.json", meta.dump(2) + "\n");
    if (b.has_logreg) write_text(dir / "logreg.json", logreg_to_json(b.logreg) + "\n");
    write_text(dir / "gbt.json", gbt_to_json(b.gbt) + "\n");
    for (std::size_t r = 0; r < b.rnns.size(); ++r) save_rnn(dir / ("rnn_" + std::to_string(r) + ".bin"), b.rnns[r]);
    write_text(dir / "lda.json", lda_to_json(b.lda) + "\n");
}

Bundle load_bundle(const std::filesystem::path& dir) {
    Bundle b;
    try {
        const auto meta = json::parse(read_text(dir / "bundle.json"));
        if (meta.at("version").get<int>() != 1) throw FormatError("bundle: unsupported version");
        b.cfg = config_from_json(meta.at("config").dump());
        b.config_hash = meta.at("config_hash").get<std::string>();
        b.has_logreg = meta.at("has_logreg").get<bool>();
        const auto n = meta.at("n_rnns").get<std::size_t>();
        if (b.has_logreg) b.logreg = logreg_from_json(read_text(dir / "logreg.json"));
        b.gbt = gbt_from_json(read_text(dir / "gbt.json"));
        for (std::size_t r = 0; r < n; ++r) b.rnns.push_back(load_rnn(dir / ("rnn_" + std::to_string(r) + ".bin")));
        b.lda = lda_from_json(read_text(dir / "lda.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bundle: ") + e.what());
    }
    if (b.rnns.empty()) throw FormatError("bundle: no RNN models");
    return b;
}

StackedPrediction classify_processed(const Bundle& b, const ProcessedRecord& p) {
    const auto pg = predict_gbt(b.gbt, p.global.v);
    const auto seq = to_sequence(p.beats);
    std::vector<ClassProbabilities> pr;
    for (const auto& m : b.rnns) pr.push_back(forward(m, seq));
    return predict_stacked(pg, pr, b.lda);
}

std::vector<StackedPrediction> classify_records(const Bundle& b, const std::vector<Record>& records,
                                                const PipelineConfig& cfg) {
    std::vector<StackedPrediction> out(records.size());
    parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
        const auto p = process_record(records[i], b.cfg, b.has_logreg ? &b.logreg : nullptr);
        out[i] = classify_processed(b, p);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

CvReport run_cv(const std::vector<Record>& records, const PipelineConfig& user_cfg, const Logger& log) {
    PipelineConfig cfg = user_cfg;
    cfg.rnn.max_epochs = std::min(cfg.rnn.max_epochs, std::max(1, cfg.cv_rnn_max_epochs));
    const std::size_t n = records.size();
    std::vector<ClassLabel> labels;
    for (const auto& r : records) {
        if (!r.label) throw ArgumentError("cv: record " + r.id + " has no reference label");
        labels.push_back(*r.label);
    }
    const auto fold = stratified_folds(labels, cfg.cv_folds, derive_seed(cfg.seed, "cv-folds"));

    if (log) log("preparing and interpreting " + std::to_string(n) + " records");
    std::vector<Record> prepared(n);
    parallel_for(n, cfg.jobs, [&](std::size_t i) { prepared[i] = prepare_record(records[i]); });
    std::vector<ProcessedRecord> upright(n);
    parallel_for(n, cfg.jobs, [&](std::size_t i) { upright[i] = analyse_prepared(prepared[i], cfg); });
    std::vector<std::optional<std::pair<InversionFeatures, InversionFeatures>>> pairs(n);
    if (cfg.detect_inversion)
        parallel_for(n, cfg.jobs, [&](std::size_t i) { pairs[i] = inversion_pair(prepared[i], cfg.conduction); });
    std::vector<std::optional<ProcessedRecord>> flipped(n);

    CvReport rep;
    rep.seed = cfg.seed;
    rep.config_hash = config_hash(user_cfg);
    const int K = cfg.cv_folds;
    for (auto& s : rep.scores) s.assign(static_cast<std::size_t>(K), 0.0);

    std::vector<BasePredictions> oof(n);
    std::vector<StackedPrediction> stacked_pred(n);
    std::vector<RecordView> views(static_cast<std::size_t>(K));
    std::vector<std::vector<char>> trained_on(static_cast<std::size_t>(K));

    for (int k = 0; k < K; ++k) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < n; ++i) (fold[i] == k ? te : tr).push_back(i);
        if (log) log("fold " + std::to_string(k) + ": " + std::to_string(tr.size()) + " train, " +
                     std::to_string(te.size()) + " test");

        // Inversion detector from this fold's training records only.
        std::vector<char> invert(n, 0);
        if (cfg.detect_inversion) {
            std::vector<InversionFeatures> X;
            std::vector<int> y;
            for (std::size_t i : tr)
                if (pairs[i]) {
                    X.push_back(pairs[i]->first);
                    y.push_back(0);
                    X.push_back(pairs[i]->second);
                    y.push_back(1);
                }
            if (!X.empty()) {
                const auto lr = train_logreg(X, y, cfg.logreg).model;
                for (std::size_t i = 0; i < n; ++i)
                    if (pairs[i]) invert[i] = detect_inversion(lr, pairs[i]->first).inverted ? 1 : 0;
            }
            std::vector<std::size_t> need;
            for (std::size_t i = 0; i < n; ++i)
                if (invert[i] && !flipped[i]) need.push_back(i);
            parallel_for(need.size(), cfg.jobs, [&](std::size_t q) {
                const std::size_t i = need[q];
                auto p = analyse_prepared(negate(prepared[i]), cfg);
                p.inverted = true;
                flipped[i] = std::move(p);
            });
        }
        auto& view = views[static_cast<std::size_t>(k)];
        view.resize(n);
        for (std::size_t i = 0; i < n; ++i) view[i] = invert[i] ? &*flipped[i] : &upright[i];
        auto& mark = trained_on[static_cast<std::size_t>(k)];
        mark.assign(n, 0);
        for (std::size_t i : tr) mark[i] = 1;

        if (cfg.cv_stacking == CvStacking::Nested) {
            const auto sm = train_stacked(view, tr, cfg, derive_seed(cfg.seed, "cv", static_cast<std::uint64_t>(k)), log);
            const auto preds = predict_base(sm.base, view, te);
            for (std::size_t q = 0; q < te.size(); ++q) {
                oof[te[q]] = preds[q];
                stacked_pred[te[q]].probs = sm.lda.posterior(stack_features(preds[q].gbt, preds[q].rnn));
                stacked_pred[te[q]].label = stacked_pred[te[q]].probs.argmax();
            }
        } else {
            const auto bm = train_base_models(view, tr, cfg, derive_seed(cfg.seed, "cv", static_cast<std::uint64_t>(k)), log);
            const auto preds = predict_base(bm, view, te);
            for (std::size_t q = 0; q < te.size(); ++q) {
                if (mark[te[q]]) throw std::logic_error("cv leakage: record " + records[te[q]].id);
                oof[te[q]] = preds[q];
            }
        }
    }

    if (cfg.cv_stacking == CvStacking::Outer) {
        // Every stacking row is a held-out prediction: record i's row comes
        // from the fold-fold[i] models, which never trained on it.
        for (std::size_t i = 0; i < n; ++i)
            if (trained_on[static_cast<std::size_t>(fold[i])][i]) throw std::logic_error("cv leakage: record " + records[i].id);
        for (int k = 0; k < K; ++k) {
            std::vector<StackVector> Z;
            std::vector<ClassLabel> y;
            for (std::size_t i = 0; i < n; ++i)
                if (fold[i] != k) {
                    Z.push_back(stack_features(oof[i].gbt, oof[i].rnn));
                    y.push_back(labels[i]);
                }
            const auto lda = fit_stacker(Z, y, cfg.lda_shrink);
            for (std::size_t i = 0; i < n; ++i)
                if (fold[i] == k) {
                    stacked_pred[i].probs = lda.posterior(stack_features(oof[i].gbt, oof[i].rnn));
                    stacked_pred[i].label = stacked_pred[i].probs.argmax();
                }
        }
    }

    for (int k = 0; k < K; ++k) {
        std::array<ConfusionMatrix, 3> cm;
        for (std::size_t i = 0; i < n; ++i) {
            if (fold[i] != k) continue;
            cm[0].add(labels[i], oof[i].gbt.argmax());
            cm[1].add(labels[i], oof[i].rnn.argmax());
            cm[2].add(labels[i], stacked_pred[i].label);
        }
        for (std::size_t m = 0; m < 3; ++m) rep.scores[m][static_cast<std::size_t>(k)] = challenge_score(cm[m]).final;
        if (log) {
            std::ostringstream os;
            os << "fold " << k << " scores: gbt " << rep.scores[0][static_cast<std::size_t>(k)] << ", rnn "
               << rep.scores[1][static_cast<std::size_t>(k)] << ", stacker " << rep.scores[2][static_cast<std::size_t>(k)];
            log(os.str());
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Files

std::vector<Record> load_manifest_records(const Manifest& m, int jobs) {
    std::vector<Record> out(m.entries.size());
    parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
        const auto& e = m.entries[i];
        out[i] = load_record(m.resolve(e), e.label);
        out[i].id = e.record_id;
    });
    return out;
}

std::filesystem::path synth_corpus(const std::filesystem::path& dir, int per_class, const PipelineConfig& cfg) {
    if (per_class < 1) throw ArgumentError("synth: per-class count must be positive");
    if (!(cfg.synth_min_duration_s >= kSynthMinDuration && cfg.synth_max_duration_s <= kSynthMaxDuration &&
          cfg.synth_min_duration_s <= cfg.synth_max_duration_s))
        throw ArgumentError("synth: durations must lie within [9, 61] s");
    std::filesystem::create_directories(dir / "records");
    Manifest man;
    man.base_dir = dir;
    struct Job {
        ClassLabel c;
        int i;
        std::string id;
    };
    std::vector<Job> jobs;
    for (auto c : kAllClasses)
        for (int i = 0; i < per_class; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%c%05d", c == ClassLabel::Noisy ? 'X' : to_char(c), i + 1);
            jobs.push_back({c, i, buf});
            man.entries.push_back({buf, std::string("records/") + buf + ".txt", c});
        }
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t q) {
        const auto& j = jobs[q];
        const auto key = static_cast<std::uint64_t>(index_of(j.c)) * 1000003ULL + static_cast<std::uint64_t>(j.i);
        Rng dur_rng(derive_seed(cfg.seed, "synth-duration", key));
        const double dur = dur_rng.uniform(cfg.synth_min_duration_s, cfg.synth_max_duration_s);
        Record r = synth_record(j.c, derive_seed(cfg.seed, "synth", key), dur);
        r.id = j.id;
        write_record(dir / "records" / (j.id + ".txt"), r);
    });
    const auto path = dir / "manifest.csv";
    write_manifest(path, man);
    return path;
}

std::string answers_csv(std::span<const std::string> ids, std::span<const ClassLabel> labels) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s += ids[i];
        s += ',';
        s += to_char(labels[i]);
        s += '\n';
    }
    return s;
}

std::vector<std::pair<std::string, ClassLabel>> load_labels_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read " + path.string());
    std::vector<std::pair<std::string, ClassLabel>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
        if (!line.empty() && line.back() == ',') cols.emplace_back();
        if (lineno == 1 && !cols.empty() && cols[0] == "record_id") continue;
        if (cols.size() != 2 && cols.size() != 3) throw ParseError("expected 2 or 3 columns", lineno);
        const auto lab = label_from_string(cols.back());
        if (!lab) throw ParseError("unknown label '" + cols.back() + "'", lineno);
        out.emplace_back(cols[0], *lab);
    }
    return out;
}

ChallengeScore score_answers(const std::filesystem::path& answers, const std::filesystem::path& reference) {
    std::map<std::string, ClassLabel> pred;
    for (const auto& [id, l] : load_labels_csv(answers))
        if (!pred.emplace(id, l).second) throw FormatError("answers: duplicate record " + id);
    ConfusionMatrix cm;
    for (const auto& [id, l] : load_labels_csv(reference)) {
        const auto it = pred.find(id);
        if (it == pred.end()) throw FormatError("answers: no label for record " + id);
        cm.add(l, it->second);
    }
    return challenge_score(cm);
}

}  // namespace ecgr
