#include "ecgr/rnn.hpp"

#include "ecgr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace ecgr {

static_assert(std::endian::native == std::endian::little, "model blobs assume a little-endian host");

bool TensorSpec::is_weight() const {
    return name.size() >= 2 && (name.ends_with(".W") || name.ends_with(".U"));
}

std::vector<TensorSpec> rnn_layout(const RnnConfig& c) {
    const std::size_t H = c.lstm_units;
    std::vector<TensorSpec> L;
    auto add = [&L](std::string name, std::size_t r, std::size_t k) {
        const std::size_t off = L.empty() ? 0 : L.back().offset + L.back().size();
        L.push_back({std::move(name), r, k, off});
    };
    add("mlp1.W", c.input_dim, c.mlp_hidden);
    add("mlp1.b", 1, c.mlp_hidden);
    add("mlp2.W", c.mlp_hidden, c.mlp_out);
    add("mlp2.b", 1, c.mlp_out);
    for (int k = 0; k < 4; ++k) {
        const std::string p = "lstm" + std::to_string(k);
        add(p + ".W", k == 0 ? c.mlp_out : H, 4 * H);
        add(p + ".U", H, 4 * H);
        add(p + ".b", 1, 4 * H);
    }
    add("head1.W", 3 * H, c.head_hidden);
    add("head1.b", 1, c.head_hidden);
    add("head2.W", c.head_hidden, c.head_out);
    add("head2.b", 1, c.head_out);
    add("out.W", c.head_out, c.classes);
    add("out.b", 1, c.classes);
    return L;
}

const TensorSpec& RnnModel::tensor(const std::string& name) const {
    for (const auto& t : layout)
        if (t.name == name) return t;
    throw ArgumentError("rnn: no tensor named " + name);
}

namespace {

// Fixed positions in rnn_layout().
enum : std::size_t {
    kMlp1W = 0, kMlp1b, kMlp2W, kMlp2b,
    kLstm0 = 4,  // W, U, b per LSTM, 3 tensors each
    kHead1W = 16, kHead1b, kHead2W, kHead2b, kOutW, kOutb,
};

using CMap = Eigen::Map<const RowMatrix>;
using MMap = Eigen::Map<RowMatrix>;

// Views into Eigen-owned buffers only: Eigen picks scalar or packet (FMA)
// code per coefficient from the address, so the base alignment must not
// vary between runs.
CMap view(const Eigen::VectorXd& p, const TensorSpec& s) {
    return CMap(p.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}
MMap view(Eigen::VectorXd& p, const TensorSpec& s) {
    return MMap(p.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Vectorised through Eigen's packet exp; tanh(x) = 2 sigmoid(2x) - 1.
template <class A>
auto sigmoid_array(const A& z) {
    return (1.0 + (-z).exp()).inverse();
}
template <class A>
auto tanh_array(const A& z) {
    return 2.0 * (1.0 + (-2.0 * z).exp()).inverse() - 1.0;
}

struct LstmCache {
    RowMatrix gates;  // post-activation i, f, g, o
    RowMatrix c_prev, h_prev, c_new, tanh_c;
    RowMatrix h_out;  // carried state at every timestep
};

void lstm_forward(const RowMatrix& in, CMap W, CMap U, CMap b, const std::vector<char>& mask, std::size_t T,
                  std::size_t B, LstmCache& k) {
    const auto H = U.rows();
    const auto TB = static_cast<Eigen::Index>(T * B);
    const auto Bi = static_cast<Eigen::Index>(B);
    RowMatrix xw = in * W;
    xw.rowwise() += b.row(0);
    k.gates.resize(TB, 4 * H);
    k.c_prev.resize(TB, H);
    k.h_prev.resize(TB, H);
    k.c_new.resize(TB, H);
    k.tanh_c.resize(TB, H);
    k.h_out.resize(TB, H);
    RowMatrix h = RowMatrix::Zero(Bi, H), c = RowMatrix::Zero(Bi, H);
    RowMatrix z(Bi, 4 * H);
    RowMatrix cn(Bi, H), tc(Bi, H);
    for (std::size_t t = 0; t < T; ++t) {
        const auto r0 = static_cast<Eigen::Index>(t * B);
        z.noalias() = xw.middleRows(r0, Bi);
        z.noalias() += h * U;
        auto g = k.gates.middleRows(r0, Bi);
        g.array() = sigmoid_array(z.array());
        g.middleCols(2 * H, H).array() = tanh_array(z.middleCols(2 * H, H).array());
        cn.array() = g.middleCols(H, H).array() * c.array() + g.leftCols(H).array() * g.middleCols(2 * H, H).array();
        tc.array() = tanh_array(cn.array());
        k.c_prev.middleRows(r0, Bi) = c;
        k.h_prev.middleRows(r0, Bi) = h;
        k.c_new.middleRows(r0, Bi) = cn;
        k.tanh_c.middleRows(r0, Bi) = tc;
        for (Eigen::Index bi = 0; bi < Bi; ++bi) {
            if (mask[static_cast<std::size_t>(r0 + bi)] == 0) continue;
            c.row(bi) = cn.row(bi);
            h.row(bi) = g.row(bi).tail(H).cwiseProduct(tc.row(bi));
        }
        k.h_out.middleRows(r0, Bi) = h;
    }
}

// Returns the gradient w.r.t. the layer input; accumulates dW, dU, db.
RowMatrix lstm_backward(const RowMatrix& in, const LstmCache& k, const RowMatrix& d_hout, CMap W, CMap U,
                        const std::vector<char>& mask, std::size_t T, std::size_t B, MMap dW, MMap dU, MMap db) {
    const auto H = U.rows();
    const auto Bi = static_cast<Eigen::Index>(B);
    RowMatrix dz(static_cast<Eigen::Index>(T * B), 4 * H);
    RowMatrix dh_next = RowMatrix::Zero(Bi, H), dc_next = RowMatrix::Zero(Bi, H);
    RowMatrix dh(Bi, H), dct(Bi, H);
    for (std::size_t tt = T; tt-- > 0;) {
        const auto r0 = static_cast<Eigen::Index>(tt * B);
        dh = d_hout.middleRows(r0, Bi) + dh_next;
        const auto g = k.gates.middleRows(r0, Bi).array();
        const auto ig = g.leftCols(H), fg = g.middleCols(H, H), gg = g.middleCols(2 * H, H), og = g.rightCols(H);
        const auto tc = k.tanh_c.middleRows(r0, Bi).array();
        dct.array() = dc_next.array() + dh.array() * og * (1.0 - tc * tc);
        auto d = dz.middleRows(r0, Bi);
        d.leftCols(H).array() = dct.array() * gg * ig * (1.0 - ig);
        d.middleCols(H, H).array() = dct.array() * k.c_prev.middleRows(r0, Bi).array() * fg * (1.0 - fg);
        d.middleCols(2 * H, H).array() = dct.array() * ig * (1.0 - gg * gg);
        d.rightCols(H).array() = dh.array() * tc * og * (1.0 - og);
        for (Eigen::Index bi = 0; bi < Bi; ++bi) {
            if (mask[static_cast<std::size_t>(r0 + bi)] == 0) {
                d.row(bi).setZero();  // dc_next carries through unchanged
            } else {
                dc_next.row(bi) = dct.row(bi).cwiseProduct(fg.row(bi).matrix());
            }
        }
        dh_next.noalias() = dz.middleRows(r0, Bi) * U.transpose();
        for (Eigen::Index bi = 0; bi < Bi; ++bi)
            if (mask[static_cast<std::size_t>(r0 + bi)] == 0) dh_next.row(bi) += dh.row(bi);
    }
    dU.noalias() += k.h_prev.transpose() * dz;
    db.row(0) += dz.colwise().sum();
    dW.noalias() += in.transpose() * dz;
    return dz * W.transpose();
}

RowMatrix relu(const RowMatrix& a) { return a.cwiseMax(0.0); }

RowMatrix dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double rate) {
    RowMatrix m(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform() < rate ? 0.0 : keep;
    return m;
}

// Forward pass with everything backward needs.
struct Net {
    const RnnModel& m;
    const PaddedBatch& batch;
    std::size_t T, B, H;
    bool use_dropout = false;

    RowMatrix xs, a1, r1, d1, r1d, a2, r2, d2, r2d;
    LstmCache l0;
    RowMatrix d3, h0d;
    LstmCache l1, l2, l3;
    std::vector<double> lengths;
    std::vector<Eigen::Index> argmax;  // B x H timestep rows of branch-3 maxima
    RowMatrix y, a4, r4, d4, r4d, a5, r5, logits, probs;

    Eigen::VectorXd params;

    Net(const RnnModel& model, const PaddedBatch& pb)
        : m(model), batch(pb), T(pb.T), B(pb.B), H(model.cfg.lstm_units),
          params(Eigen::Map<const Eigen::VectorXd>(model.params.data(), static_cast<Eigen::Index>(model.params.size()))) {}

    CMap P(std::size_t i) const { return view(params, m.layout[i]); }

    void run(std::optional<std::uint64_t> dropout_seed) {
        const auto& cfg = m.cfg;
        const auto TB = static_cast<Eigen::Index>(T * B);
        const auto Bi = static_cast<Eigen::Index>(B);
        const auto Hi = static_cast<Eigen::Index>(H);
        if (batch.x.cols() != static_cast<Eigen::Index>(cfg.input_dim) || batch.x.rows() != TB ||
            batch.mask.size() != T * B)
            throw ShapeError("rnn: batch does not match the model input");
        use_dropout = dropout_seed.has_value() && cfg.dropout_rate > 0.0;
        Rng rng(dropout_seed.value_or(0));

        lengths.assign(B, 0.0);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) lengths[b] += batch.mask[t * B + b] ? 1.0 : 0.0;
        for (double l : lengths)
            if (l <= 0.0) throw ArgumentError("rnn: empty sequence");

        xs = batch.x;
        for (Eigen::Index j = 0; j < xs.cols(); ++j) {
            const double mu = m.input_mean.empty() ? 0.0 : m.input_mean[static_cast<std::size_t>(j)];
            const double sd = m.input_std.empty() ? 1.0 : m.input_std[static_cast<std::size_t>(j)];
            xs.col(j) = (xs.col(j).array() - mu) / sd;
        }

        a1 = xs * P(kMlp1W);
        a1.rowwise() += P(kMlp1b).row(0);
        r1 = relu(a1);
        if (use_dropout) {
            d1 = dropout_mask(rng, r1.rows(), r1.cols(), cfg.dropout_rate);
            r1d = r1.cwiseProduct(d1);
        } else {
            r1d = r1;
        }
        a2 = r1d * P(kMlp2W);
        a2.rowwise() += P(kMlp2b).row(0);
        r2 = relu(a2);
        if (use_dropout) {
            d2 = dropout_mask(rng, r2.rows(), r2.cols(), cfg.dropout_rate);
            r2d = r2.cwiseProduct(d2);
        } else {
            r2d = r2;
        }

        lstm_forward(r2d, P(kLstm0), P(kLstm0 + 1), P(kLstm0 + 2), batch.mask, T, B, l0);
        if (use_dropout) {
            d3 = dropout_mask(rng, TB, Hi, cfg.dropout_rate);
            h0d = l0.h_out.cwiseProduct(d3);
        } else {
            h0d = l0.h_out;
        }
        lstm_forward(h0d, P(kLstm0 + 3), P(kLstm0 + 4), P(kLstm0 + 5), batch.mask, T, B, l1);
        lstm_forward(h0d, P(kLstm0 + 6), P(kLstm0 + 7), P(kLstm0 + 8), batch.mask, T, B, l2);
        lstm_forward(h0d, P(kLstm0 + 9), P(kLstm0 + 10), P(kLstm0 + 11), batch.mask, T, B, l3);

        y = RowMatrix::Zero(Bi, 3 * Hi);
        argmax.assign(B * H, -1);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b) {
                if (!batch.mask[t * B + b]) continue;
                const auto row = static_cast<Eigen::Index>(t * B + b);
                const auto bi = static_cast<Eigen::Index>(b);
                y.block(bi, 0, 1, Hi) += l1.h_out.row(row);
                for (Eigen::Index j = 0; j < Hi; ++j) {
                    auto& am = argmax[b * H + static_cast<std::size_t>(j)];
                    if (am < 0 || l3.h_out(row, j) > l3.h_out(am, j)) am = row;
                }
            }
        for (std::size_t b = 0; b < B; ++b) {
            const auto bi = static_cast<Eigen::Index>(b);
            y.block(bi, 0, 1, Hi) /= lengths[b];
            y.block(bi, Hi, 1, Hi) = l2.h_out.row(static_cast<Eigen::Index>((T - 1) * B + b));
            for (Eigen::Index j = 0; j < Hi; ++j) y(bi, 2 * Hi + j) = l3.h_out(argmax[b * H + static_cast<std::size_t>(j)], j);
        }

        a4 = y * P(kHead1W);
        a4.rowwise() += P(kHead1b).row(0);
        r4 = relu(a4);
        if (use_dropout) {
            d4 = dropout_mask(rng, r4.rows(), r4.cols(), cfg.dropout_rate);
            r4d = r4.cwiseProduct(d4);
        } else {
            r4d = r4;
        }
        a5 = r4d * P(kHead2W);
        a5.rowwise() += P(kHead2b).row(0);
        r5 = relu(a5);
        logits = r5 * P(kOutW);
        logits.rowwise() += P(kOutb).row(0);
        probs.resize(logits.rows(), logits.cols());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const double mx = logits.row(i).maxCoeff();
            double s = 0.0;
            for (Eigen::Index j = 0; j < logits.cols(); ++j) s += probs(i, j) = std::exp(logits(i, j) - mx);
            probs.row(i) /= s;
        }
    }

    std::vector<double> backward() {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.params.size()));
        auto G = [&](std::size_t i) { return view(g, m.layout[i]); };
        const auto Bi = static_cast<Eigen::Index>(B);
        const auto Hi = static_cast<Eigen::Index>(H);
        const auto TB = static_cast<Eigen::Index>(T * B);

        RowMatrix dlog = probs;
        for (std::size_t b = 0; b < B; ++b) dlog(static_cast<Eigen::Index>(b), batch.labels[b]) -= 1.0;
        dlog /= static_cast<double>(B);

        G(kOutW).noalias() += r5.transpose() * dlog;
        G(kOutb).row(0) += dlog.colwise().sum();
        RowMatrix da5 = (dlog * P(kOutW).transpose()).cwiseProduct((a5.array() > 0.0).cast<double>().matrix());
        G(kHead2W).noalias() += r4d.transpose() * da5;
        G(kHead2b).row(0) += da5.colwise().sum();
        RowMatrix dr4 = da5 * P(kHead2W).transpose();
        if (use_dropout) dr4 = dr4.cwiseProduct(d4);
        RowMatrix da4 = dr4.cwiseProduct((a4.array() > 0.0).cast<double>().matrix());
        G(kHead1W).noalias() += y.transpose() * da4;
        G(kHead1b).row(0) += da4.colwise().sum();
        RowMatrix dy = da4 * P(kHead1W).transpose();

        RowMatrix dh1 = RowMatrix::Zero(TB, Hi), dh2 = RowMatrix::Zero(TB, Hi), dh3 = RowMatrix::Zero(TB, Hi);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t b = 0; b < B; ++b)
                if (batch.mask[t * B + b])
                    dh1.row(static_cast<Eigen::Index>(t * B + b)) =
                        dy.block(static_cast<Eigen::Index>(b), 0, 1, Hi) / lengths[b];
        for (std::size_t b = 0; b < B; ++b) {
            const auto bi = static_cast<Eigen::Index>(b);
            dh2.row(static_cast<Eigen::Index>((T - 1) * B + b)) = dy.block(bi, Hi, 1, Hi);
            for (Eigen::Index j = 0; j < Hi; ++j)
                dh3(argmax[b * H + static_cast<std::size_t>(j)], j) += dy(bi, 2 * Hi + j);
        }

        RowMatrix dh0 = lstm_backward(h0d, l1, dh1, P(kLstm0 + 3), P(kLstm0 + 4), batch.mask, T, B, G(kLstm0 + 3),
                                      G(kLstm0 + 4), G(kLstm0 + 5));
        dh0 += lstm_backward(h0d, l2, dh2, P(kLstm0 + 6), P(kLstm0 + 7), batch.mask, T, B, G(kLstm0 + 6),
                             G(kLstm0 + 7), G(kLstm0 + 8));
        dh0 += lstm_backward(h0d, l3, dh3, P(kLstm0 + 9), P(kLstm0 + 10), batch.mask, T, B, G(kLstm0 + 9),
                             G(kLstm0 + 10), G(kLstm0 + 11));
        if (use_dropout) dh0 = dh0.cwiseProduct(d3);
        RowMatrix dr2 = lstm_backward(r2d, l0, dh0, P(kLstm0), P(kLstm0 + 1), batch.mask, T, B, G(kLstm0),
                                      G(kLstm0 + 1), G(kLstm0 + 2));
        if (use_dropout) dr2 = dr2.cwiseProduct(d2);
        RowMatrix da2 = dr2.cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
        G(kMlp2W).noalias() += r1d.transpose() * da2;
        G(kMlp2b).row(0) += da2.colwise().sum();
        RowMatrix dr1 = da2 * P(kMlp2W).transpose();
        if (use_dropout) dr1 = dr1.cwiseProduct(d1);
        RowMatrix da1 = dr1.cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
        G(kMlp1W).noalias() += xs.transpose() * da1;
        G(kMlp1b).row(0) += da1.colwise().sum();
        (void)Bi;
        return {g.data(), g.data() + g.size()};
    }

    std::vector<ClassProbabilities> outputs() const {
        std::vector<ClassProbabilities> out(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < kNumClasses && c < m.cfg.classes; ++c)
                out[b][c] = probs(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
        return out;
    }
};

}  // namespace

RnnModel init_rnn(const RnnConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim == 0 || cfg.mlp_hidden == 0 || cfg.mlp_out == 0 || cfg.lstm_units == 0 ||
        cfg.head_hidden == 0 || cfg.head_out == 0 || cfg.classes != kNumClasses || cfg.batch == 0)
        throw ArgumentError("rnn: invalid configuration");
    RnnModel m;
    m.cfg = cfg;
    m.layout = rnn_layout(cfg);
    m.params.assign(m.layout.back().offset + m.layout.back().size(), 0.0);
    Rng rng(seed);
    for (const auto& t : m.layout) {
        MMap v(m.params.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
        if (t.is_weight()) {
            const double lim = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
            for (Eigen::Index i = 0; i < v.rows(); ++i)
                for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.uniform(-lim, lim);
        } else if (t.name.starts_with("lstm")) {
            const auto H = static_cast<Eigen::Index>(cfg.lstm_units);
            v.block(0, H, 1, H).setOnes();
        }
    }
    m.input_mean.assign(cfg.input_dim, 0.0);
    m.input_std.assign(cfg.input_dim, 1.0);
    return m;
}

PaddedBatch make_batch(std::span<const Sequence* const> seqs, std::span<const int> labels) {
    if (seqs.empty()) throw ArgumentError("rnn: empty batch");
    if (!labels.empty() && labels.size() != seqs.size()) throw ShapeError("rnn: label count differs from batch size");
    PaddedBatch pb;
    pb.B = seqs.size();
    const auto D = seqs[0]->cols();
    for (const auto* s : seqs) {
        if (s->cols() != D) throw ShapeError("rnn: sequences differ in feature width");
        pb.T = std::max(pb.T, static_cast<std::size_t>(s->rows()));
    }
    if (pb.T == 0) throw ArgumentError("rnn: empty sequence");
    pb.x = RowMatrix::Zero(static_cast<Eigen::Index>(pb.T * pb.B), D);
    pb.mask.assign(pb.T * pb.B, 0);
    for (std::size_t b = 0; b < pb.B; ++b)
        for (Eigen::Index t = 0; t < seqs[b]->rows(); ++t) {
            const auto row = static_cast<std::size_t>(t) * pb.B + b;
            pb.x.row(static_cast<Eigen::Index>(row)) = seqs[b]->row(t);
            pb.mask[row] = 1;
        }
    pb.labels.assign(labels.begin(), labels.end());
    return pb;
}

LstmStep lstm_cell(const Eigen::VectorXd& x, const Eigen::VectorXd& h, const Eigen::VectorXd& c,
                   const Eigen::MatrixXd& W, const Eigen::MatrixXd& U, const Eigen::VectorXd& b) {
    const auto H = h.size();
    if (c.size() != H || W.rows() != x.size() || W.cols() != 4 * H || U.rows() != H || U.cols() != 4 * H ||
        b.size() != 4 * H)
        throw ShapeError("lstm_cell: shape mismatch");
    const Eigen::VectorXd z = W.transpose() * x + U.transpose() * h + b;
    LstmStep s{Eigen::VectorXd(H), Eigen::VectorXd(H)};
    for (Eigen::Index j = 0; j < H; ++j) {
        const double ig = sigmoid(z(j)), fg = sigmoid(z(H + j)), gg = std::tanh(z(2 * H + j)),
                     og = sigmoid(z(3 * H + j));
        s.c(j) = fg * c(j) + ig * gg;
        s.h(j) = og * std::tanh(s.c(j));
    }
    return s;
}

std::vector<ClassProbabilities> forward_batch(const RnnModel& m, const PaddedBatch& batch) {
    Net net(m, batch);
    net.run(std::nullopt);
    return net.outputs();
}

ClassProbabilities forward(const RnnModel& m, const Sequence& seq) {
    const Sequence* p = &seq;
    return forward_batch(m, make_batch(std::span<const Sequence* const>(&p, 1)))[0];
}

ClassProbabilities forward_masked(const RnnModel& m, const Sequence& seq, const std::vector<char>& mask) {
    if (mask.size() != static_cast<std::size_t>(seq.rows())) throw ShapeError("rnn: mask length differs from sequence");
    const Sequence* p = &seq;
    auto pb = make_batch(std::span<const Sequence* const>(&p, 1));
    pb.mask = mask;
    return forward_batch(m, pb)[0];
}

std::vector<ClassProbabilities> predict_rnn(const RnnModel& m, std::span<const Sequence> seqs) {
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return seqs[a].rows() < seqs[b].rows(); });
    std::vector<ClassProbabilities> out(seqs.size());
    for (std::size_t s = 0; s < order.size(); s += m.cfg.batch) {
        const std::size_t e = std::min(order.size(), s + m.cfg.batch);
        std::vector<const Sequence*> ptrs;
        for (std::size_t i = s; i < e; ++i) ptrs.push_back(&seqs[order[i]]);
        const auto probs = forward_batch(m, make_batch(ptrs));
        for (std::size_t i = s; i < e; ++i) out[order[i]] = probs[i - s];
    }
    return out;
}

double cross_entropy(const ClassProbabilities& p, int label) {
    return -std::log(std::clamp(p[static_cast<std::size_t>(label)], 1e-9, 1.0 - 1e-9));
}

LossGrad loss_and_gradients(const RnnModel& m, const PaddedBatch& batch, double l2,
                            std::optional<std::uint64_t> dropout_seed) {
    if (batch.B == 0) throw ArgumentError("rnn: empty batch");
    if (batch.labels.size() != batch.B) throw ShapeError("rnn: batch labels missing");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= m.cfg.classes) throw ArgumentError("rnn: label out of range");
    Net net(m, batch);
    net.run(dropout_seed);
    LossGrad out;
    const auto probs = net.outputs();
    for (std::size_t b = 0; b < batch.B; ++b) out.cross_entropy += cross_entropy(probs[b], batch.labels[b]);
    out.cross_entropy /= static_cast<double>(batch.B);
    out.grad = net.backward();
    double reg = 0.0;
    for (const auto& t : m.layout) {
        if (!t.is_weight()) continue;
        for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
            reg += m.params[i] * m.params[i];
            out.grad[i] += 2.0 * l2 * m.params[i];
        }
    }
    out.loss = out.cross_entropy + l2 * reg;
    return out;
}

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& st, long t, double lr) {
    if (t < 1) throw ArgumentError("adam_step: t must be >= 1");
    if (grads.size() != params.size()) throw ShapeError("adam_step: gradient size mismatch");
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * grads[i];
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * grads[i] * grads[i];
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        params[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    st.t = t;
}

double scheduled_lr(const RnnConfig& cfg, int k) { return cfg.lr0 * std::pow(2.0, cfg.lr_decay_log2 * k); }

RnnTrainResult train_rnn(std::span<const Sequence> seqs, std::span<const int> labels, const RnnConfig& cfg,
                         std::uint64_t seed) {
    if (seqs.size() != labels.size()) throw ShapeError("train_rnn: label count differs from sequence count");
    std::vector<std::vector<std::size_t>> by_class(cfg.classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= cfg.classes)
            throw ArgumentError("train_rnn: label out of range");
        if (seqs[i].rows() == 0) throw ArgumentError("train_rnn: empty sequence");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    std::size_t present = 0;
    for (const auto& c : by_class) {
        if (c.size() == 1) throw DegenerateDataError("train_rnn: a class has a single example");
        present += c.empty() ? 0 : 1;
    }
    if (present < 2) throw DegenerateDataError("train_rnn: fewer than 2 classes");

    Rng rng(seed);
    RnnTrainResult res;
    auto& log = res.log;
    for (auto c : by_class) {
        if (c.empty()) continue;
        rng.shuffle(c.begin(), c.end());
        auto nval = static_cast<std::size_t>(std::lround(cfg.val_frac * static_cast<double>(c.size())));
        nval = std::clamp<std::size_t>(nval, 1, c.size() - 1);
        log.val_index.insert(log.val_index.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(nval));
        log.train_index.insert(log.train_index.end(), c.begin() + static_cast<std::ptrdiff_t>(nval), c.end());
    }
    std::sort(log.val_index.begin(), log.val_index.end());
    std::sort(log.train_index.begin(), log.train_index.end());

    RnnModel model = init_rnn(cfg, rng.next());
    {
        std::vector<double> sum(cfg.input_dim, 0.0), sq(cfg.input_dim, 0.0);
        double count = 0.0;
        for (std::size_t i : log.train_index) {
            const auto& s = seqs[i];
            if (static_cast<std::size_t>(s.cols()) != cfg.input_dim) throw ShapeError("train_rnn: wrong feature width");
            for (Eigen::Index t = 0; t < s.rows(); ++t) {
                for (std::size_t j = 0; j < cfg.input_dim; ++j) sum[j] += s(t, static_cast<Eigen::Index>(j));
                count += 1.0;
            }
        }
        for (std::size_t j = 0; j < cfg.input_dim; ++j) model.input_mean[j] = sum[j] / count;
        for (std::size_t i : log.train_index) {
            const auto& s = seqs[i];
            for (Eigen::Index t = 0; t < s.rows(); ++t)
                for (std::size_t j = 0; j < cfg.input_dim; ++j) {
                    const double d = s(t, static_cast<Eigen::Index>(j)) - model.input_mean[j];
                    sq[j] += d * d;
                }
        }
        for (std::size_t j = 0; j < cfg.input_dim; ++j) {
            const double sd = std::sqrt(sq[j] / count);
            model.input_std[j] = sd > 1e-12 ? sd : 1.0;
        }
    }

    auto chunk = [&](std::vector<std::size_t> idx) {
        std::vector<std::vector<std::size_t>> out;
        for (std::size_t s = 0; s < idx.size(); s += cfg.batch)
            out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                             idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), s + cfg.batch)));
        return out;
    };
    auto build = [&](const std::vector<std::size_t>& idx) {
        std::vector<const Sequence*> ptrs;
        std::vector<int> ys;
        for (std::size_t i : idx) {
            ptrs.push_back(&seqs[i]);
            ys.push_back(labels[i]);
        }
        return make_batch(ptrs, ys);
    };
    auto bucket = [&](std::size_t i) { return static_cast<std::size_t>(seqs[i].rows()) / std::max<std::size_t>(1, cfg.bucket_width); };

    std::vector<std::size_t> val_sorted = log.val_index;
    std::stable_sort(val_sorted.begin(), val_sorted.end(),
                     [&](std::size_t a, std::size_t b) { return seqs[a].rows() < seqs[b].rows(); });
    std::vector<PaddedBatch> val_batches;
    for (const auto& c : chunk(val_sorted)) val_batches.push_back(build(c));

    AdamState adam;
    long step = 0;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_params = model.params;
    int since_best = 0, since_decay = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = scheduled_lr(cfg, log.plateau_events);
        std::vector<std::size_t> order = log.train_index;
        rng.shuffle(order.begin(), order.end());
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bucket(a) < bucket(b); });
        auto batches = chunk(order);
        rng.shuffle(batches.begin(), batches.end());
        double train_loss = 0.0;
        for (const auto& idx : batches) {
            const auto pb = build(idx);
            const auto lg = loss_and_gradients(model, pb, cfg.l2, rng.next());
            adam_step(model.params, lg.grad, adam, ++step, lr);
            train_loss += lg.cross_entropy * static_cast<double>(idx.size());
        }
        train_loss /= static_cast<double>(log.train_index.size());

        double val_loss = 0.0, correct = 0.0;
        for (const auto& pb : val_batches) {
            const auto probs = forward_batch(model, pb);
            for (std::size_t b = 0; b < pb.B; ++b) {
                val_loss += cross_entropy(probs[b], pb.labels[b]);
                correct += static_cast<int>(index_of(probs[b].argmax())) == pb.labels[b] ? 1.0 : 0.0;
            }
        }
        const double nval = static_cast<double>(log.val_index.size());
        log.epochs.push_back({epoch, train_loss, val_loss / nval, correct / nval, lr});
        log.stopped_epoch = epoch;

        if (val_loss / nval < best) {
            best = val_loss / nval;
            best_params = model.params;
            log.best_epoch = epoch;
            since_best = 0;
            since_decay = 0;
        } else {
            ++since_best;
            ++since_decay;
            if (since_decay >= cfg.plateau_patience) {
                ++log.plateau_events;
                since_decay = 0;
            }
            if (since_best >= cfg.early_stop) break;
        }
    }
    model.params = std::move(best_params);
    res.model = std::move(model);
    return res;
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

nlohmann::json config_json(const RnnConfig& c) {
    return {{"input_dim", c.input_dim},       {"mlp_hidden", c.mlp_hidden},   {"mlp_out", c.mlp_out},
            {"lstm_units", c.lstm_units},     {"head_hidden", c.head_hidden}, {"head_out", c.head_out},
            {"classes", c.classes},           {"l2", c.l2},                   {"dropout_rate", c.dropout_rate},
            {"batch", c.batch},               {"lr0", c.lr0},                 {"lr_decay_log2", c.lr_decay_log2},
            {"plateau_patience", c.plateau_patience}, {"early_stop", c.early_stop}, {"val_frac", c.val_frac},
            {"max_epochs", c.max_epochs},     {"bucket_width", c.bucket_width}};
}

RnnConfig config_from(const nlohmann::json& j) {
    RnnConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.mlp_out = j.at("mlp_out").get<std::size_t>();
    c.lstm_units = j.at("lstm_units").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    c.head_out = j.at("head_out").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.l2 = j.at("l2").get<double>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.batch = j.at("batch").get<std::size_t>();
    c.lr0 = j.at("lr0").get<double>();
    c.lr_decay_log2 = j.at("lr_decay_log2").get<double>();
    c.plateau_patience = j.at("plateau_patience").get<int>();
    c.early_stop = j.at("early_stop").get<int>();
    c.val_frac = j.at("val_frac").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.bucket_width = j.at("bucket_width").get<std::size_t>();
    return c;
}

}  // namespace

std::string rnn_to_bytes(const RnnModel& m) {
    nlohmann::json h;
    h["format"] = "ecgr-rnn";
    h["version"] = 1;
    h["dtype"] = "float64-le";
    h["config"] = config_json(m.cfg);
    h["tensors"] = nlohmann::json::array();
    for (const auto& t : m.layout)
        h["tensors"].push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
    h["param_count"] = m.params.size();
    h["input_mean"] = m.input_mean;
    h["input_std"] = m.input_std;
    std::string out = h.dump();
    out += '\n';
    const std::size_t off = out.size();
    out.resize(off + m.params.size() * sizeof(double));
    std::memcpy(out.data() + off, m.params.data(), m.params.size() * sizeof(double));
    return out;
}

RnnModel rnn_from_bytes(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw FormatError("rnn model: missing header line");
    RnnModel m;
    try {
        const auto h = nlohmann::json::parse(bytes.substr(0, nl));
        if (h.at("format").get<std::string>() != "ecgr-rnn" || h.at("version").get<int>() != 1)
            throw FormatError("rnn model: unsupported format or version");
        m.cfg = config_from(h.at("config"));
        m.layout = rnn_layout(m.cfg);
        const auto& ts = h.at("tensors");
        if (ts.size() != m.layout.size()) throw FormatError("rnn model: tensor table mismatch");
        for (std::size_t i = 0; i < ts.size(); ++i)
            if (ts[i].at("name").get<std::string>() != m.layout[i].name ||
                ts[i].at("rows").get<std::size_t>() != m.layout[i].rows ||
                ts[i].at("cols").get<std::size_t>() != m.layout[i].cols)
                throw FormatError("rnn model: tensor table mismatch");
        const auto n = h.at("param_count").get<std::size_t>();
        if (n != m.layout.back().offset + m.layout.back().size())
            throw FormatError("rnn model: parameter count mismatch");
        if (bytes.size() - nl - 1 != n * sizeof(double)) throw FormatError("rnn model: truncated parameter blob");
        m.params.resize(n);
        std::memcpy(m.params.data(), bytes.data() + nl + 1, n * sizeof(double));
        m.input_mean = h.at("input_mean").get<std::vector<double>>();
        m.input_std = h.at("input_std").get<std::vector<double>>();
        if (m.input_mean.size() != m.cfg.input_dim || m.input_std.size() != m.cfg.input_dim)
            throw FormatError("rnn model: standardisation vectors have the wrong length");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("rnn model: ") + e.what());
    }
    return m;
}

void save_rnn(const std::filesystem::path& path, const RnnModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    const auto b = rnn_to_bytes(m);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!os) throw IoError("cannot write " + path.string());
}

RnnModel load_rnn(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return rnn_from_bytes(ss.str());
}

}  // namespace ecgr
