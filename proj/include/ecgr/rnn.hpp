#pragma once

#include "ecgr/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ecgr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RnnConfig {
    std::size_t input_dim = 22;
    std::size_t mlp_hidden = 256;
    std::size_t mlp_out = 128;
    std::size_t lstm_units = 128;
    std::size_t head_hidden = 256;
    std::size_t head_out = 128;
    std::size_t classes = 4;
    double l2 = 1e-4;
    double dropout_rate = 0.2;
    std::size_t batch = 32;
    double lr0 = 0.002;
    // lr = lr0 * 2^(lr_decay_log2 * k) after k plateau events, i.e. 1/sqrt(2) per event
    double lr_decay_log2 = -0.5;
    int plateau_patience = 3;
    int early_stop = 15;
    double val_frac = 0.15;
    int max_epochs = 200;
    std::size_t bucket_width = 8;
};

struct TensorSpec {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return rows * cols; }
    bool is_weight() const;  // L2 applies to W/U matrices, not biases
};

// Tensor order of the flat parameter vector:
//   mlp1.W (D x M1), mlp1.b, mlp2.W (M1 x M2), mlp2.b,
//   lstm{0..3}.W (in x 4H), lstm{k}.U (H x 4H), lstm{k}.b (gate order i, f, g, o),
//   head1.W (3H x K1), head1.b, head2.W (K1 x K2), head2.b, out.W (K2 x C), out.b
std::vector<TensorSpec> rnn_layout(const RnnConfig& cfg);

struct RnnModel {
    RnnConfig cfg;
    std::vector<TensorSpec> layout;
    std::vector<double> params;
    // Per-input standardisation, fitted on the training split.
    std::vector<double> input_mean;
    std::vector<double> input_std;

    const TensorSpec& tensor(const std::string& name) const;
};

// Glorot-uniform weights, zero biases, forget-gate bias 1.
RnnModel init_rnn(const RnnConfig& cfg, std::uint64_t seed);

// One sequence: rows are timesteps.
using Sequence = RowMatrix;

// Time-major padded batch; row t*B + b holds timestep t of sequence b.
struct PaddedBatch {
    std::size_t T = 0;
    std::size_t B = 0;
    RowMatrix x;                // T*B x input_dim, raw (unstandardised)
    std::vector<char> mask;    // T*B, 1 for valid timesteps
    std::vector<int> labels;   // B, may be empty for inference
};

PaddedBatch make_batch(std::span<const Sequence* const> seqs, std::span<const int> labels = {});

struct LstmStep {
    Eigen::VectorXd h;
    Eigen::VectorXd c;
};

// Single LSTM step with W (in x 4H), U (H x 4H), b (4H), gates i, f, g, o.
// Throws ShapeError on mismatched sizes.
LstmStep lstm_cell(const Eigen::VectorXd& x, const Eigen::VectorXd& h, const Eigen::VectorXd& c,
                   const Eigen::MatrixXd& W, const Eigen::MatrixXd& U, const Eigen::VectorXd& b);

// Inference (no dropout). Throws ArgumentError for an empty or fully masked
// sequence.
std::vector<ClassProbabilities> forward_batch(const RnnModel& m, const PaddedBatch& batch);
ClassProbabilities forward(const RnnModel& m, const Sequence& seq);
ClassProbabilities forward_masked(const RnnModel& m, const Sequence& seq, const std::vector<char>& mask);
std::vector<ClassProbabilities> predict_rnn(const RnnModel& m, std::span<const Sequence> seqs);

struct LossGrad {
    double loss = 0.0;           // cross-entropy + l2 term
    double cross_entropy = 0.0;  // mean over the batch
    std::vector<double> grad;    // same layout as params
};

// -log(p_y) with p_y clamped to [1e-9, 1 - 1e-9].
double cross_entropy(const ClassProbabilities& p, int label);

// Mean cross-entropy + l2 * sum of squared weights, gradients by BPTT.
// Dropout masks come from dropout_seed; nullopt disables dropout.
// Throws ArgumentError for labels out of range or an empty batch.
LossGrad loss_and_gradients(const RnnModel& m, const PaddedBatch& batch, double l2,
                            std::optional<std::uint64_t> dropout_seed);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long t = 0;
};

// beta1 0.9, beta2 0.999, eps 1e-8, bias corrected; t is the 1-based step.
void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state, long t, double lr);

double scheduled_lr(const RnnConfig& cfg, int plateau_events);

struct RnnEpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double lr = 0.0;
};

struct RnnTrainLog {
    std::vector<RnnEpochLog> epochs;
    int best_epoch = 0;
    int stopped_epoch = 0;
    int plateau_events = 0;
    std::vector<std::size_t> train_index;
    std::vector<std::size_t> val_index;
};

struct RnnTrainResult {
    RnnModel model;
    RnnTrainLog log;
};

// Stratified 85/15 split, length-bucketed batches, Adam, plateau decay and
// early stopping; returns the best-validation-loss parameters. Throws
// DegenerateDataError unless at least 2 classes occur, each with >= 2
// examples.
RnnTrainResult train_rnn(std::span<const Sequence> seqs, std::span<const int> labels, const RnnConfig& cfg,
                         std::uint64_t seed);

// JSON header line + '\n' + little-endian float64 parameter blob.
std::string rnn_to_bytes(const RnnModel& m);
RnnModel rnn_from_bytes(const std::string& bytes);
void save_rnn(const std::filesystem::path& path, const RnnModel& m);
RnnModel load_rnn(const std::filesystem::path& path);

}  // namespace ecgr
