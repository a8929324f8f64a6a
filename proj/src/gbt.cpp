#include "ecgr/gbt.hpp"

#include "ecgr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ecgr {

double GbtTree::predict(std::span<const double> x) const {
    int k = 0;
    while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
        const auto& nd = nodes[static_cast<std::size_t>(k)];
        const double v = x[static_cast<std::size_t>(nd.feature)];
        const bool left = std::isfinite(v) ? v < nd.threshold : nd.default_left;
        k = left ? nd.left : nd.right;
    }
    return nodes[static_cast<std::size_t>(k)].leaf;
}

int GbtTree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        best = std::max(best, d[k]);
        if (!nodes[k].is_leaf()) {
            d[static_cast<std::size_t>(nodes[k].left)] = d[k] + 1;
            d[static_cast<std::size_t>(nodes[k].right)] = d[k] + 1;
        }
    }
    return best;
}

std::array<double, kNumClasses> GbtModel::scores(std::span<const double> x) const {
    std::array<double, kNumClasses> s{};
    for (const auto& round : rounds)
        for (std::size_t c = 0; c < kNumClasses; ++c) s[c] += round[c].predict(x);
    return s;
}

double leaf_weight(double G, double H, double lambda) { return -G / (H + lambda); }

double split_gain(double GL, double HL, double GR, double HR, double lambda, double gamma) {
    return 0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) - (GL + GR) * (GL + GR) / (HL + HR + lambda)) -
           gamma;
}

namespace {

struct Candidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

// Level-wise exact greedy tree growth over globally presorted columns.
GbtTree grow_tree(const FeatureMatrix& X, const std::vector<std::vector<std::uint32_t>>& order,
                  const std::vector<double>& g, const std::vector<double>& h, const std::vector<bool>& in_sample,
                  const std::vector<int>& features, const GbtHyperparams& hp) {
    const std::size_t n = X.size();
    GbtTree tree;
    std::vector<int> node_of(n, -1);
    double G0 = 0.0, H0 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (in_sample[i]) {
            node_of[i] = 0;
            G0 += g[i];
            H0 += h[i];
        }
    tree.nodes.push_back({});
    std::vector<double> G{G0}, H{H0};
    std::vector<int> frontier{0};

    for (int depth = 0; depth < hp.max_depth && !frontier.empty(); ++depth) {
        const int max_node = static_cast<int>(tree.nodes.size());
        std::vector<Candidate> best(static_cast<std::size_t>(max_node));
        std::vector<double> gl(static_cast<std::size_t>(max_node)), hl(static_cast<std::size_t>(max_node));
        std::vector<double> last(static_cast<std::size_t>(max_node));
        std::vector<char> seen(static_cast<std::size_t>(max_node));
        std::vector<char> active(static_cast<std::size_t>(max_node), 0);
        for (int k : frontier) active[static_cast<std::size_t>(k)] = 1;

        for (int f : features) {
            std::fill(gl.begin(), gl.end(), 0.0);
            std::fill(hl.begin(), hl.end(), 0.0);
            std::fill(seen.begin(), seen.end(), 0);
            for (std::uint32_t row : order[static_cast<std::size_t>(f)]) {
                const int k = node_of[row];
                if (k < 0 || !active[static_cast<std::size_t>(k)]) continue;
                const auto ku = static_cast<std::size_t>(k);
                const double v = X[row][static_cast<std::size_t>(f)];
                if (seen[ku] && v > last[ku]) {
                    const double GR = G[ku] - gl[ku], HR = H[ku] - hl[ku];
                    if (hl[ku] >= hp.min_child_weight && HR >= hp.min_child_weight) {
                        const double gain = split_gain(gl[ku], hl[ku], GR, HR, hp.lambda, hp.gamma);
                        if (gain > best[ku].gain) {
                            double thr = 0.5 * (last[ku] + v);
                            if (!(thr > last[ku])) thr = v;
                            best[ku] = {gain, f, thr};
                        }
                    }
                }
                gl[ku] += g[row];
                hl[ku] += h[row];
                last[ku] = v;
                seen[ku] = 1;
            }
        }

        std::vector<int> next;
        std::vector<int> left_of(static_cast<std::size_t>(max_node), -1);
        for (int k : frontier) {
            const auto ku = static_cast<std::size_t>(k);
            if (best[ku].feature < 0) continue;
            auto& nd = tree.nodes[ku];
            nd.feature = best[ku].feature;
            nd.threshold = best[ku].threshold;
            nd.gain = best[ku].gain;
            nd.left = static_cast<int>(tree.nodes.size());
            nd.right = nd.left + 1;
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            G.resize(tree.nodes.size(), 0.0);
            H.resize(tree.nodes.size(), 0.0);
            left_of[ku] = nd.left;
            next.push_back(nd.left);
            next.push_back(nd.left + 1);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const int k = node_of[i];
            if (k < 0 || k >= max_node || left_of[static_cast<std::size_t>(k)] < 0) continue;
            const auto& nd = tree.nodes[static_cast<std::size_t>(k)];
            const int child = X[i][static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
            node_of[i] = child;
            G[static_cast<std::size_t>(child)] += g[i];
            H[static_cast<std::size_t>(child)] += h[i];
        }
        frontier = std::move(next);
    }

    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
        auto& nd = tree.nodes[k];
        nd.cover = H[k];
        if (nd.is_leaf()) nd.leaf = hp.eta * leaf_weight(G[k], H[k], hp.lambda);
    }
    return tree;
}

double log_loss(const std::vector<std::array<double, kNumClasses>>& scores, std::span<const ClassLabel> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto p = softmax(scores[i]);
        s -= std::log(std::max(p[index_of(y[i])], 1e-300));
    }
    return s / static_cast<double>(scores.size());
}

}  // namespace

GbtModel train_gbt(const FeatureMatrix& X, std::span<const ClassLabel> y, const GbtHyperparams& hp,
                   std::uint64_t seed, GbtTrainLog* log) {
    const std::size_t n = X.size();
    if (n == 0) throw DegenerateDataError("train_gbt: empty data");
    if (y.size() != n) throw ShapeError("train_gbt: label count differs from row count");
    const std::size_t F = X[0].size();
    if (F == 0) throw ShapeError("train_gbt: zero features");
    for (const auto& row : X) {
        if (row.size() != F) throw ShapeError("train_gbt: ragged feature rows");
        for (double v : row)
            if (!std::isfinite(v)) throw ArgumentError("train_gbt: non-finite feature value");
    }
    if (hp.max_depth < 1 || hp.rounds < 0 || !(hp.lambda > 0.0) || !(hp.eta > 0.0) || !(hp.subsample > 0.0) ||
        !(hp.colsample_bytree > 0.0))
        throw ArgumentError("train_gbt: invalid hyperparameters");

    std::vector<std::vector<std::uint32_t>> order(F);
    for (std::size_t f = 0; f < F; ++f) {
        auto& o = order[f];
        o.resize(n);
        std::iota(o.begin(), o.end(), 0U);
        std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return X[a][f] < X[b][f]; });
    }

    GbtModel m;
    m.hp = hp;
    m.num_features = F;
    Rng rng(seed);
    std::vector<std::array<double, kNumClasses>> scores(n, std::array<double, kNumClasses>{});
    std::vector<double> g(n), h(n);
    std::vector<bool> in_sample(n);
    const auto n_cols = static_cast<std::size_t>(
        std::clamp<long>(std::lround(hp.colsample_bytree * static_cast<double>(F)), 1L, static_cast<long>(F)));

    for (int round = 0; round < hp.rounds; ++round) {
        std::vector<ClassProbabilities> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = softmax(scores[i]);
        for (std::size_t i = 0; i < n; ++i) in_sample[i] = hp.subsample >= 1.0 || rng.uniform() < hp.subsample;

        std::array<GbtTree, kNumClasses> trees;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                const double pc = p[i][c];
                g[i] = pc - (index_of(y[i]) == c ? 1.0 : 0.0);
                h[i] = pc * (1.0 - pc);
            }
            std::vector<int> cols(F);
            std::iota(cols.begin(), cols.end(), 0);
            if (n_cols < F) {
                for (std::size_t k = 0; k < n_cols; ++k) std::swap(cols[k], cols[k + rng.below(F - k)]);
                cols.resize(n_cols);
                std::sort(cols.begin(), cols.end());
            }
            trees[c] = grow_tree(X, order, g, h, in_sample, cols, hp);
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < kNumClasses; ++c) scores[i][c] += trees[c].predict(X[i]);
        m.rounds.push_back(std::move(trees));
        if (log) log->train_loss.push_back(log_loss(scores, y));
    }
    return m;
}

ClassProbabilities predict_gbt(const GbtModel& m, std::span<const double> x) {
    if (x.size() != m.num_features) throw ShapeError("predict_gbt: feature vector has the wrong length");
    return softmax(m.scores(x));
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json tree_json(const GbtTree& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t k = 0; k < t.nodes.size(); ++k) {
        const auto& nd = t.nodes[k];
        nlohmann::json j;
        j["id"] = k;
        if (nd.is_leaf()) {
            j["leaf"] = nd.leaf;
        } else {
            j["feature"] = nd.feature;
            j["threshold"] = nd.threshold;
            j["default_left"] = nd.default_left;
            j["left"] = nd.left;
            j["right"] = nd.right;
            j["gain"] = nd.gain;
        }
        j["cover"] = nd.cover;
        nodes.push_back(j);
    }
    return {{"nodes", nodes}};
}

GbtTree tree_from(const nlohmann::json& j, std::size_t num_features) {
    GbtTree t;
    const auto& nodes = j.at("nodes");
    t.nodes.resize(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto& nj = nodes[k];
        auto& nd = t.nodes[k];
        nd.cover = nj.value("cover", 0.0);
        if (nj.contains("leaf")) {
            nd.leaf = nj.at("leaf").get<double>();
            continue;
        }
        nd.feature = nj.at("feature").get<int>();
        nd.threshold = nj.at("threshold").get<double>();
        nd.default_left = nj.value("default_left", true);
        nd.left = nj.at("left").get<int>();
        nd.right = nj.at("right").get<int>();
        nd.gain = nj.value("gain", 0.0);
        const auto sz = static_cast<int>(nodes.size());
        if (nd.feature < 0 || static_cast<std::size_t>(nd.feature) >= num_features || nd.left <= static_cast<int>(k) ||
            nd.right <= static_cast<int>(k) || nd.left >= sz || nd.right >= sz)
            throw FormatError("gbt model: malformed node");
    }
    if (t.nodes.empty()) throw FormatError("gbt model: empty tree");
    return t;
}

}  // namespace

std::string gbt_to_json(const GbtModel& m) {
    nlohmann::json j;
    j["version"] = 1;
    j["classes"] = kNumClasses;
    j["num_features"] = m.num_features;
    j["hp"] = {{"max_depth", m.hp.max_depth},
               {"eta", m.hp.eta},
               {"gamma", m.hp.gamma},
               {"colsample_bytree", m.hp.colsample_bytree},
               {"min_child_weight", m.hp.min_child_weight},
               {"subsample", m.hp.subsample},
               {"rounds", m.hp.rounds},
               {"lambda", m.hp.lambda}};
    j["trees"] = nlohmann::json::array();
    for (const auto& round : m.rounds) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& t : round) r.push_back(tree_json(t));
        j["trees"].push_back(r);
    }
    return j.dump();
}

GbtModel gbt_from_json(const std::string& text) {
    GbtModel m;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("version").get<int>() != 1) throw FormatError("gbt model: unsupported version");
        if (j.at("classes").get<std::size_t>() != kNumClasses) throw FormatError("gbt model: expected 4 classes");
        m.num_features = j.at("num_features").get<std::size_t>();
        const auto& hp = j.at("hp");
        m.hp.max_depth = hp.at("max_depth").get<int>();
        m.hp.eta = hp.at("eta").get<double>();
        m.hp.gamma = hp.at("gamma").get<double>();
        m.hp.colsample_bytree = hp.at("colsample_bytree").get<double>();
        m.hp.min_child_weight = hp.at("min_child_weight").get<double>();
        m.hp.subsample = hp.at("subsample").get<double>();
        m.hp.rounds = hp.at("rounds").get<int>();
        m.hp.lambda = hp.at("lambda").get<double>();
        for (const auto& r : j.at("trees")) {
            if (r.size() != kNumClasses) throw FormatError("gbt model: round without 4 trees");
            std::array<GbtTree, kNumClasses> round;
            for (std::size_t c = 0; c < kNumClasses; ++c) round[c] = tree_from(r[c], m.num_features);
            m.rounds.push_back(std::move(round));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("gbt model: ") + e.what());
    }
    return m;
}

}  // namespace ecgr
