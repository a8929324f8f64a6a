#pragma once

#include "ecgr/common.hpp"
#include "ecgr/conduction.hpp"
#include "ecgr/ensemble.hpp"
#include "ecgr/evaluation.hpp"
#include "ecgr/features.hpp"
#include "ecgr/gbt.hpp"
#include "ecgr/interpretation.hpp"
#include "ecgr/preprocess.hpp"
#include "ecgr/rnn.hpp"
#include "ecgr/signal_io.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ecgr {

enum class CvStacking : std::uint8_t {
    // Stacker for fold k fitted on the other folds' held-out predictions.
    Outer,
    // Full inner k-fold stacking inside every outer training partition.
    Nested,
};

struct PipelineConfig {
    int version = 1;
    std::uint64_t seed = 1;
    int jobs = 1;

    ConductionConfig conduction;
    InterpretationConfig interpretation;
    AnomalyThresholds anomalies;
    LogRegOptions logreg;
    bool detect_inversion = true;
    GbtHyperparams gbt;
    RnnConfig rnn;
    int n_rnns = 3;
    double lda_shrink = 0.05;
    int stack_folds = 8;
    int cv_folds = 8;
    CvStacking cv_stacking = CvStacking::Outer;
    // Epoch cap for RNNs trained inside cv (min with rnn.max_epochs).
    int cv_rnn_max_epochs = 8;

    double synth_min_duration_s = 10.0;
    double synth_max_duration_s = 30.0;
};

std::string config_to_json(const PipelineConfig& c);
// Keys absent from the text keep their defaults; unknown keys are a
// FormatError.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
// Dotted key ("gbt.eta", "seed") with a JSON value ("0.3", "\"nested\"").
void config_set(PipelineConfig& c, const std::string& key, const std::string& json_value);
// FNV-1a of the canonical JSON, hex.
std::string config_hash(const PipelineConfig& c);

using Logger = std::function<void(const std::string&)>;

// Deterministic sub-seed for a named component.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are
// rethrown (the one with the smallest index wins).
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Resample to the canonical rate and remove baseline wander.
Record prepare_record(const Record& raw);

struct ProcessedRecord {
    std::string id;
    std::optional<ClassLabel> label;
    Record record;  // prepared, negated when inverted
    bool inverted = false;
    double inversion_probability = 0.0;
    Interpretation itp;
    GlobalFeatures global;
    BeatFeatureSequence beats;
};

// Evidence for a prepared record; a record too short for detection yields
// no beats instead of an error.
std::vector<BeatObservation> safe_evidence(const Record& prepared, const ConductionConfig& cfg);

// Interpretation and features for an already prepared record.
ProcessedRecord analyse_prepared(const Record& prepared, const PipelineConfig& cfg);
// prepare + optional inversion check + analyse.
ProcessedRecord process_record(const Record& raw, const PipelineConfig& cfg, const LogRegModel* inversion = nullptr);

// Inversion features of the record as given and of its negation; nullopt
// when no beats are found.
std::optional<std::pair<InversionFeatures, InversionFeatures>> inversion_pair(const Record& prepared,
                                                                              const ConductionConfig& cfg);

Sequence to_sequence(const BeatFeatureSequence& s);

struct Bundle {
    PipelineConfig cfg;
    std::string config_hash;
    LogRegModel logreg;
    bool has_logreg = false;
    GbtModel gbt;
    std::vector<RnnModel> rnns;
    LdaModel lda;
};

struct BasePredictions {
    ClassProbabilities gbt;
    ClassProbabilities rnn;  // average of the RNNs
};

struct BaseModels {
    GbtModel gbt;
    std::vector<RnnModel> rnns;
};

// Non-owning view of a processed dataset.
using RecordView = std::vector<const ProcessedRecord*>;

// GBT + n_rnns RNNs on the given records (indices into `data`).
BaseModels train_base_models(const RecordView& data, std::span<const std::size_t> idx, const PipelineConfig& cfg,
                             std::uint64_t seed, const Logger& log = {});
std::vector<BasePredictions> predict_base(const BaseModels& m, const RecordView& data,
                                          std::span<const std::size_t> idx);

// Stacker fit with shrink escalation on RegularizationError.
LdaModel fit_stacker(std::span<const StackVector> Z, std::span<const ClassLabel> y, double shrink);

// Out-of-fold stacking inside `idx`, then base models refit on all of it.
// Throws std::logic_error if a record's stacking feature came from a model
// that trained on it.
struct StackedModels {
    BaseModels base;
    LdaModel lda;
};
StackedModels train_stacked(const RecordView& data, std::span<const std::size_t> idx, const PipelineConfig& cfg,
                            std::uint64_t seed, const Logger& log = {});

LogRegModel train_inversion_model(const std::vector<Record>& prepared, const PipelineConfig& cfg);

Bundle train_bundle(const std::vector<Record>& records, const PipelineConfig& cfg, const Logger& log = {});
void save_bundle(const std::filesystem::path& dir, const Bundle& b);
Bundle load_bundle(const std::filesystem::path& dir);

StackedPrediction classify_processed(const Bundle& b, const ProcessedRecord& p);
std::vector<StackedPrediction> classify_records(const Bundle& b, const std::vector<Record>& records,
                                                const PipelineConfig& cfg);

CvReport run_cv(const std::vector<Record>& records, const PipelineConfig& cfg, const Logger& log = {});

// Manifest loading with labels attached to each record.
std::vector<Record> load_manifest_records(const Manifest& m, int jobs = 1);

// Writes <dir>/records/<id>.txt and <dir>/manifest.csv; returns the manifest path.
std::filesystem::path synth_corpus(const std::filesystem::path& dir, int per_class, const PipelineConfig& cfg);

std::string answers_csv(std::span<const std::string> ids, std::span<const ClassLabel> labels);
// "record_id,label" (answers) or "record_id,path,label" (manifest) CSV.
std::vector<std::pair<std::string, ClassLabel>> load_labels_csv(const std::filesystem::path& path);
ChallengeScore score_answers(const std::filesystem::path& answers, const std::filesystem::path& reference);

}  // namespace ecgr
