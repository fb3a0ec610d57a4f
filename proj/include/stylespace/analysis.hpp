#pragma once

// Latent-space analysis: embedding export, PCA, exact t-SNE, k-NN artist
// classification and latent interpolation.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylespace/data.hpp"
#include "stylespace/errors.hpp"
#include "stylespace/image_io.hpp"
#include "stylespace/train.hpp"

namespace stylespace {

// ---- embeddings --------------------------------------------------------------

struct StyleEmbedding {
    std::string id;
    std::string artist;
    ModelVariant variant = ModelVariant::vae_triplet;
    std::vector<float> vector;
};

struct EmbedError {
    std::string id;
    std::string message;
};

struct EmbedResult {
    std::vector<StyleEmbedding> embeddings;
    std::vector<EmbedError> errors;
};

// One embedding per readable manifest image; unreadable images are reported
// and skipped.
inline EmbedResult embed_dataset(const StyleModel<float>& model, const Manifest& manifest) {
    EmbedResult out;
    ImageStore store;
    std::vector<const ImageRecord*> ok;
    for (const auto& r : manifest) {
        try {
            store.add(r);
            ok.push_back(&r);
        } catch (const DataError& e) {
            out.errors.push_back({r.id, e.what()});
        }
    }
    std::vector<std::string> ids;
    for (const auto* r : ok) ids.push_back(r->id);
    auto vectors = embed_ids(model, store, ids);
    for (std::size_t i = 0; i < ok.size(); ++i) {
        out.embeddings.push_back({ok[i]->id, ok[i]->artist, model.variant, std::move(vectors[i])});
    }
    return out;
}

inline void save_embeddings(const fs::path& file, const std::vector<StyleEmbedding>& embeddings) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& e : embeddings) {
        json j = {{"id", e.id}, {"variant", to_string(e.variant)}, {"vector", e.vector}, {"artist", e.artist}};
        out << j.dump() << '\n';
    }
}

inline std::vector<StyleEmbedding> load_embeddings(const fs::path& file) {
    std::vector<StyleEmbedding> out;
    detail::for_each_json_line(file, [&](const json& j) {
        StyleEmbedding e;
        e.id = j.at("id").get<std::string>();
        e.variant = parse_variant(j.at("variant").get<std::string>());
        e.vector = j.at("vector").get<std::vector<float>>();
        e.artist = j.value("artist", std::string());
        if (!out.empty() && e.vector.size() != out.front().vector.size()) {
            throw DimensionError(file.string() + ": embedding '" + e.id + "' has length " +
                                 std::to_string(e.vector.size()) + ", expected " +
                                 std::to_string(out.front().vector.size()));
        }
        out.push_back(std::move(e));
    });
    return out;
}

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) throw ContractError("no rows");
    Eigen::MatrixXd X(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw DimensionError("rows differ in length");
        for (std::size_t j = 0; j < rows[i].size(); ++j) X(i, j) = rows[i][j];
    }
    return X;
}

inline Eigen::MatrixXd to_matrix(const std::vector<StyleEmbedding>& e) {
    std::vector<std::vector<float>> rows;
    for (const auto& x : e) rows.push_back(x.vector);
    return to_matrix(rows);
}

// ---- PCA -------------------------------------------------------------------------

struct PcaResult {
    Eigen::MatrixXd components;  // k x d, orthonormal rows
    Eigen::MatrixXd projected;   // n x k
    Eigen::VectorXd explained_variance;
    Eigen::RowVectorXd mean;
};

// Eigendecomposition of the covariance; when d > n the n x n Gram matrix is
// decomposed instead (same nonzero spectrum, far smaller). Each component's
// largest-magnitude coordinate is made positive.
inline PcaResult pca(const Eigen::MatrixXd& X, std::size_t k) {
    const auto n = static_cast<std::size_t>(X.rows()), d = static_cast<std::size_t>(X.cols());
    if (n < 2) throw ContractError("pca needs at least 2 rows");
    if (k < 1 || k > std::min(n, d)) {
        throw ContractError("pca: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n, d)) + "]");
    }
    PcaResult r;
    r.mean = X.colwise().mean();
    Eigen::MatrixXd C = X.rowwise() - r.mean;
    const double denom = static_cast<double>(n - 1);
    r.components.resize(k, d);
    r.explained_variance.resize(k);
    if (d <= n) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((C.transpose() * C) / denom);
        for (std::size_t i = 0; i < k; ++i) {
            auto col = static_cast<Eigen::Index>(d - 1 - i);  // eigenvalues ascend
            r.components.row(i) = es.eigenvectors().col(col).transpose();
            r.explained_variance(i) = std::max(0.0, es.eigenvalues()(col));
        }
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((C * C.transpose()) / denom);
        for (std::size_t i = 0; i < k; ++i) {
            auto col = static_cast<Eigen::Index>(n - 1 - i);
            double lambda = std::max(0.0, es.eigenvalues()(col));
            Eigen::RowVectorXd v = (C.transpose() * es.eigenvectors().col(col)).transpose();
            double norm = v.norm();
            if (norm > 0) {
                v /= norm;
            } else {
                // null direction: any unit vector orthogonal to the ones found so far
                v = Eigen::RowVectorXd::Zero(d);
                for (std::size_t j = 0; j < d && v.norm() == 0; ++j) {
                    Eigen::RowVectorXd e = Eigen::RowVectorXd::Unit(d, j);
                    for (std::size_t p = 0; p < i; ++p) e -= e.dot(r.components.row(p)) * r.components.row(p);
                    if (e.norm() > 1e-6) v = e / e.norm();
                }
            }
            r.components.row(i) = v;
            r.explained_variance(i) = lambda;
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::Index arg;
        r.components.row(i).cwiseAbs().maxCoeff(&arg);
        if (r.components(i, arg) < 0) r.components.row(i) *= -1.0;
    }
    r.projected = C * r.components.transpose();
    return r;
}

// ---- t-SNE -----------------------------------------------------------------------

struct TsneConfig {
    double perplexity = 30;
    std::size_t iterations = 1000;
    double exaggeration = 12;
    std::size_t exaggeration_iters = 250;
    double learning_rate = 200;
    double momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 0;
};

struct Affinities {
    Eigen::MatrixXd conditional;  // row i: p_{j|i}
    Eigen::VectorXd entropy_bits;
    Eigen::MatrixXd joint;        // symmetrised, sums to 1
};

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& X) {
    Eigen::VectorXd sq = X.rowwise().squaredNorm();
    Eigen::MatrixXd D = (-2.0 * X * X.transpose()).colwise() + sq;
    D.rowwise() += sq.transpose();
    D = D.cwiseMax(0.0);
    D.diagonal().setZero();
    return D;
}

// Per-point precision found by bisection until the conditional distribution's
// Shannon entropy is within `tol` bits of log2(perplexity).
inline Affinities tsne_affinities(const Eigen::MatrixXd& X, double perplexity, double tol = 1e-6) {
    const auto n = X.rows();
    if (!(perplexity > 0) || !(static_cast<double>(n) > 3 * perplexity)) {
        throw ContractError("t-SNE perplexity " + std::to_string(perplexity) + " needs more than " +
                            std::to_string(3 * perplexity) + " points, got " + std::to_string(n));
    }
    auto D = squared_distances(X);
    const double target = std::log2(perplexity);
    Affinities a;
    a.conditional = Eigen::MatrixXd::Zero(n, n);
    a.entropy_bits.resize(n);
    Eigen::VectorXd row(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double lo = 0, hi = std::numeric_limits<double>::infinity(), beta = 1;
        // distances relative to the nearest neighbour keep exp() in range
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i) dmin = std::min(dmin, D(i, j));
        double h = 0;
        for (int it = 0; it < 500; ++it) {
            double sum = 0, dot = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                row(j) = j == i ? 0.0 : std::exp(-beta * (D(i, j) - dmin));
                sum += row(j);
                dot += row(j) * (D(i, j) - dmin);
            }
            // H = log(sum) + beta * E[d], in nats
            h = (std::log(sum) + beta * dot / sum) / std::log(2.0);
            row /= sum;
            if (std::abs(h - target) < tol) break;
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            } else {
                hi = beta;
                beta = (beta + lo) / 2;
            }
        }
        a.conditional.row(i) = row.transpose();
        a.entropy_bits(i) = h;
    }
    a.joint = (a.conditional + a.conditional.transpose()) / (2.0 * static_cast<double>(n));
    return a;
}

inline double tsne_kl(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Y) {
    auto D = squared_distances(Y);
    Eigen::MatrixXd num = (1.0 + D.array()).inverse().matrix();
    num.diagonal().setZero();
    double z = num.sum();
    double kl = 0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        for (Eigen::Index j = 0; j < P.cols(); ++j) {
            if (i == j || P(i, j) <= 0) continue;
            kl += P(i, j) * std::log(P(i, j) / std::max(num(i, j) / z, 1e-300));
        }
    }
    return kl;
}

struct TsneResult {
    Eigen::MatrixXd Y;  // n x 2
    Affinities affinities;
    double initial_kl = 0;
    double final_kl = 0;
};

// Exact O(n^2) t-SNE with early exaggeration, momentum and per-coordinate gains.
inline TsneResult tsne(const Eigen::MatrixXd& X, const TsneConfig& cfg) {
    TsneResult r;
    r.affinities = tsne_affinities(X, cfg.perplexity);
    const auto n = X.rows();
    const Eigen::MatrixXd& P = r.affinities.joint;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> g(0.0, 1e-4);
    r.Y.resize(n, 2);
    for (Eigen::Index i = 0; i < r.Y.size(); ++i) r.Y.data()[i] = g(rng);
    r.initial_kl = tsne_kl(P, r.Y);

    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        double ex = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        double mom = it < cfg.momentum_switch ? cfg.momentum : cfg.final_momentum;
        auto D = squared_distances(r.Y);
        Eigen::MatrixXd num = (1.0 + D.array()).inverse().matrix();
        num.diagonal().setZero();
        double z = num.sum();
        // dC/dy_i = 4 sum_j (ex*p_ij - q_ij) * num_ij * (y_i - y_j)
        Eigen::MatrixXd W = ((ex * P).array() - num.array() / z).matrix().cwiseProduct(num);
        Eigen::MatrixXd grad = 4.0 * (W.rowwise().sum().asDiagonal() * r.Y - W * r.Y);
        for (Eigen::Index i = 0; i < grad.size(); ++i) {
            double& gain = gains.data()[i];
            bool same_sign = (grad.data()[i] > 0) == (update.data()[i] > 0);
            gain = same_sign ? gain * 0.8 : gain + 0.2;
            gain = std::max(gain, 0.01);
            update.data()[i] = mom * update.data()[i] - cfg.learning_rate * gain * grad.data()[i];
        }
        r.Y += update;
        r.Y.rowwise() -= r.Y.colwise().mean();
    }
    r.final_kl = tsne_kl(P, r.Y);
    return r;
}

// PCA to min(d, 50) dimensions, then t-SNE. Perplexity is taken as given.
inline TsneResult project_2d(const Eigen::MatrixXd& X, const TsneConfig& cfg) {
    std::size_t k = std::min<std::size_t>({static_cast<std::size_t>(X.cols()), 50, static_cast<std::size_t>(X.rows())});
    return tsne(pca(X, k).projected, cfg);
}

inline void save_projection_csv(const fs::path& file, const std::vector<StyleEmbedding>& points,
                                const Eigen::MatrixXd& Y) {
    if (static_cast<std::size_t>(Y.rows()) != points.size()) throw DimensionError("projection size mismatch");
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    out << "id,artist,x,y\n";
    out.precision(9);
    for (std::size_t i = 0; i < points.size(); ++i) {
        out << csv_field(points[i].id) << ',' << csv_field(points[i].artist) << ',' << Y(i, 0) << ',' << Y(i, 1)
            << '\n';
    }
}

// The `count` most frequent labels, by descending count then label.
inline std::vector<std::string> top_labels(const std::vector<std::string>& labels, std::size_t count) {
    std::map<std::string, std::size_t> freq;
    for (const auto& l : labels) ++freq[l];
    std::vector<std::pair<std::string, std::size_t>> v(freq.begin(), freq.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < std::min(count, v.size()); ++i) out.push_back(v[i].first);
    return out;
}

// ---- k-NN --------------------------------------------------------------------------

// Majority vote among the k nearest training rows; vote ties go to the label
// with the smaller mean neighbour distance, then the lexicographically smaller
// label. Equal distances are ordered by training index.
inline std::vector<std::string> knn_classify(const Eigen::MatrixXd& train, const std::vector<std::string>& labels,
                                             const Eigen::MatrixXd& test, std::size_t k) {
    if (k < 1) throw ContractError("k must be >= 1");
    if (train.rows() == 0) throw ContractError("k-NN needs a non-empty training set");
    if (static_cast<std::size_t>(train.rows()) != labels.size()) {
        throw DimensionError("k-NN: " + std::to_string(train.rows()) + " training rows but " +
                             std::to_string(labels.size()) + " labels");
    }
    if (test.rows() > 0 && test.cols() != train.cols()) {
        throw DimensionError("k-NN: embedding length " + std::to_string(test.cols()) + " vs training " +
                             std::to_string(train.cols()));
    }
    const std::size_t kk = std::min<std::size_t>(k, train.rows());
    std::vector<std::string> out;
    out.reserve(test.rows());
    std::vector<std::pair<double, std::size_t>> dist(train.rows());
    for (Eigen::Index t = 0; t < test.rows(); ++t) {
        for (Eigen::Index j = 0; j < train.rows(); ++j) dist[j] = {(train.row(j) - test.row(t)).squaredNorm(), j};
        std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
        std::map<std::string, std::pair<std::size_t, double>> votes;  // count, summed distance
        for (std::size_t i = 0; i < kk; ++i) {
            auto& v = votes[labels[dist[i].second]];
            ++v.first;
            v.second += std::sqrt(dist[i].first);
        }
        const std::string* best = nullptr;
        std::size_t best_count = 0;
        double best_mean = 0;
        for (const auto& [label, v] : votes) {  // map order gives the lexicographic tie-break
            double m = v.second / v.first;
            if (!best || v.first > best_count || (v.first == best_count && m < best_mean)) {
                best = &label;
                best_count = v.first;
                best_mean = m;
            }
        }
        out.push_back(*best);
    }
    return out;
}

inline double accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth) {
    if (predicted.size() != truth.size()) throw DimensionError("accuracy: length mismatch");
    if (truth.empty()) throw ContractError("accuracy of an empty set");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
    return static_cast<double>(ok) / static_cast<double>(truth.size());
}

// ---- interpolation -------------------------------------------------------------------

struct Interpolation {
    std::vector<double> t;
    std::vector<std::vector<float>> latents;
    std::vector<Image> frames;
};

inline Image to_image(const BasicTensor<float>& batch1) {
    if (batch1.rank() != 4 || batch1.dim(0) != 1) throw DimensionError("to_image expects a single-image batch");
    Image img{batch1.dim(1), batch1.dim(2), batch1.dim(3), batch1.to_vector()};
    return img;
}

inline BasicTensor<float> image_tensor(const Image& img) {
    return BasicTensor<float>::from_data({1, img.channels, img.height, img.width}, img.pixels);
}

// z_t = (1 - t) z_src + t z_tgt on encoder means, each frame decoded alone.
inline Interpolation interpolate(const StyleModel<float>& model, const Image& source, const Image& target,
                                 std::size_t steps) {
    if (!model.vae) throw ContractError(to_string(model.variant) + " has no decoder to interpolate with");
    if (steps < 2) throw ContractError("interpolation needs at least 2 steps");
    auto vae = model.vae->cast<float>(false);
    auto zs = vae.encode(image_tensor(source)).mean.to_vector();
    auto zt = vae.encode(image_tensor(target)).mean.to_vector();
    Interpolation out;
    for (std::size_t s = 0; s < steps; ++s) {
        double t = static_cast<double>(s) / static_cast<double>(steps - 1);
        std::vector<float> z(zs.size());
        if (s == 0) {
            z = zs;
        } else if (s + 1 == steps) {
            z = zt;
        } else {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>((1 - t) * zs[i] + t * zt[i]);
        }
        auto frame = vae.decode(BasicTensor<float>::from_data({1, z.size()}, z));
        out.t.push_back(t);
        out.latents.push_back(std::move(z));
        out.frames.push_back(to_image(frame));
    }
    return out;
}

inline std::string frame_name(std::size_t index, double t) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "frame_%zu_%.3f.png", index, t);
    return buf;
}

}  // namespace stylespace
