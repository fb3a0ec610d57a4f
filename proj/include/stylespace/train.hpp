#pragma once

// Training loop for the four model variants, checkpoints and triplet
// satisfaction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylespace/checkpoint.hpp"
#include "stylespace/data.hpp"
#include "stylespace/errors.hpp"
#include "stylespace/losses.hpp"
#include "stylespace/nets.hpp"
#include "stylespace/optim.hpp"

namespace stylespace {

struct TrainConfig {
    ModelVariant variant = ModelVariant::vae_triplet;
    LossWeights weights;
    std::size_t latent_dim = kDefaultLatentDim;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t epochs = 40;
    std::size_t batch_size = 8;  // triplets per step (3x images for plain vae batches)
    std::uint64_t seed = 0;

    void validate() const {
        weights.validate();
        if (latent_dim == 0) throw ContractError("latent_dim must be positive");
        if (batch_size == 0) throw ContractError("batch_size must be >= 1");
        if (!(lr > 0) || !std::isfinite(lr)) throw ContractError("lr must be positive");
        detail::validate_adam(adam());
    }

    AdamConfig adam() const { return {lr, beta1, beta2, 1e-8}; }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"variant", to_string(c.variant)},
            {"latent_dim", c.latent_dim},
            {"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"weights",
             {{"kl", c.weights.kl},
              {"recon", c.weights.recon},
              {"triplet", c.weights.triplet},
              {"percep", c.weights.percep},
              {"margin", c.weights.margin}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& w = j.at("weights");
    c.weights = {w.at("kl").get<double>(), w.at("recon").get<double>(), w.at("triplet").get<double>(),
                 w.at("percep").get<double>(), w.at("margin").get<double>()};
    return c;
}

struct Checkpoint {
    TrainConfig config;
    std::size_t epoch = 0;
    std::uint64_t rng_summary = 0;
    StyleModel<float> model;
};

inline Checkpoint initial_checkpoint(const TrainConfig& config) {
    config.validate();
    return {config, 0, 0, StyleModel<float>::create(config.variant, config.latent_dim, config.seed)};
}

// ---- checkpoint files ------------------------------------------------------

inline constexpr const char* kMetaTensor = "meta.config";

// Every parameter (frozen net included) plus a metadata tensor holding the
// UTF-8 JSON of config/epoch/rng summary, one byte per float.
inline TensorFile checkpoint_tensors(const Checkpoint& ckpt) {
    TensorFile file;
    nlohmann::json meta = {{"config", to_json(ckpt.config)},
                           {"epoch", ckpt.epoch},
                           {"rng_summary", std::to_string(ckpt.rng_summary)}};
    std::string text = meta.dump();
    std::vector<float> bytes;
    for (unsigned char ch : text) bytes.push_back(static_cast<float>(ch));
    file.tensors.push_back({kMetaTensor, {bytes.size()}, std::move(bytes)});
    for (const auto& [name, t] : ckpt.model.all_parameters()) {
        file.tensors.push_back({name, t.shape(), t.to_vector()});
    }
    return file;
}

inline Checkpoint checkpoint_from_tensors(const TensorFile& file) {
    const auto* meta_t = file.find(kMetaTensor);
    if (!meta_t) throw FormatError("checkpoint has no " + std::string(kMetaTensor) + " tensor");
    std::string text;
    for (float v : meta_t->data) {
        if (!(v >= 0 && v <= 255) || v != std::floor(v)) throw FormatError("checkpoint metadata is not byte text");
        text.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    }
    Checkpoint ckpt;
    try {
        auto meta = nlohmann::json::parse(text);
        ckpt.config = train_config_from_json(meta.at("config"));
        ckpt.epoch = meta.at("epoch").get<std::size_t>();
        ckpt.rng_summary = std::stoull(meta.at("rng_summary").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata unreadable: ") + e.what());
    }
    ckpt.model = StyleModel<float>::create(ckpt.config.variant, ckpt.config.latent_dim, ckpt.config.seed);
    for (auto& [name, t] : ckpt.model.all_parameters()) {
        const auto* stored = file.find(name);
        if (!stored) throw FormatError("checkpoint is missing tensor '" + name + "'");
        if (stored->shape != t.shape()) {
            throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(stored->shape) +
                              ", model expects " + shape_str(t.shape()));
        }
        auto dst = t.mutable_data();
        std::copy(stored->data.begin(), stored->data.end(), dst.begin());
    }
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_tensor_file(path, checkpoint_tensors(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_tensors(read_tensor_file(path)); }

// ---- metric log ------------------------------------------------------------

// Per-epoch means over steps; components a variant does not use are NaN and
// are written as empty fields.
struct EpochMetrics {
    std::size_t epoch = 0;
    double kl = std::numeric_limits<double>::quiet_NaN();
    double recon = std::numeric_limits<double>::quiet_NaN();
    double triplet = std::numeric_limits<double>::quiet_NaN();
    double percep = std::numeric_limits<double>::quiet_NaN();
    double total = 0;
    std::size_t n_plus = 0;  // summed over the epoch
};

inline constexpr const char* kMetricLogHeader = "epoch,kl,recon,triplet,percep,total,n_plus";

inline void write_metric_log(const std::string& path, const std::vector<EpochMetrics>& log) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    auto field = [](double v) {
        if (std::isnan(v)) return std::string();
        std::ostringstream os;
        os << std::setprecision(9) << v;
        return os.str();
    };
    out << kMetricLogHeader << '\n';
    for (const auto& m : log) {
        out << m.epoch << ',' << field(m.kl) << ',' << field(m.recon) << ',' << field(m.triplet) << ','
            << field(m.percep) << ',' << field(m.total) << ',' << m.n_plus << '\n';
    }
}

inline std::vector<EpochMetrics> read_metric_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    auto rows = parse_csv(in);
    if (rows.empty()) throw FormatError(path + ": empty metric log");
    std::vector<EpochMetrics> out;
    auto num = [](const std::string& s) {
        return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
    };
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() != 7) throw FormatError(path + ": metric row " + std::to_string(i) + " has wrong arity");
        out.push_back({std::stoul(r[0]), num(r[1]), num(r[2]), num(r[3]), num(r[4]), num(r[5]), std::stoul(r[6])});
    }
    return out;
}

// ---- embeddings --------------------------------------------------------------

// Style embeddings (mu, 4096 features or 1024 head output) for `ids`, in order.
inline std::vector<std::vector<float>> embed_ids(const StyleModel<float>& model, const ImageStore& store,
                                                 const std::vector<std::string>& ids, std::size_t chunk = 32) {
    auto frozen = model.cast<float>(false);  // no graph bookkeeping for parameters
    std::vector<std::vector<float>> out;
    out.reserve(ids.size());
    for (std::size_t b = 0; b < ids.size(); b += chunk) {
        std::vector<std::string> part(ids.begin() + b, ids.begin() + std::min(ids.size(), b + chunk));
        auto e = frozen.embed(store.batch(part));
        std::size_t d = e.dim(1);
        auto data = e.data();
        for (std::size_t i = 0; i < part.size(); ++i) out.emplace_back(data.begin() + i * d, data.begin() + (i + 1) * d);
    }
    return out;
}

// ---- training ----------------------------------------------------------------

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> log;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

namespace detail {

inline std::uint64_t rng_digest(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    auto s = os.str();
    return fnv1a(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

inline std::vector<BasicTensor<float>> param_handles(const NamedTensors<float>& named) {
    std::vector<BasicTensor<float>> out;
    for (const auto& p : named) out.push_back(p.second);
    return out;
}

struct StepValues {
    double kl = std::numeric_limits<double>::quiet_NaN();
    double recon = std::numeric_limits<double>::quiet_NaN();
    double triplet = std::numeric_limits<double>::quiet_NaN();
    double percep = std::numeric_limits<double>::quiet_NaN();
    double total = 0;
    std::size_t n_plus = 0;
};

class EpochAccumulator {
   public:
    void add(const StepValues& s) {
        auto acc = [](double& sum, std::size_t& n, double v) {
            if (std::isnan(v)) return;
            sum += v;
            ++n;
        };
        acc(kl_, nkl_, s.kl);
        acc(recon_, nrecon_, s.recon);
        acc(triplet_, ntriplet_, s.triplet);
        acc(percep_, npercep_, s.percep);
        total_ += s.total;
        n_plus_ += s.n_plus;
        ++steps_;
    }
    EpochMetrics finish(std::size_t epoch) const {
        auto mean = [](double sum, std::size_t n) { return n ? sum / n : std::numeric_limits<double>::quiet_NaN(); };
        return {epoch,         mean(kl_, nkl_),           mean(recon_, nrecon_), mean(triplet_, ntriplet_),
                mean(percep_, npercep_), steps_ ? total_ / steps_ : 0.0, n_plus_};
    }

   private:
    double kl_ = 0, recon_ = 0, triplet_ = 0, percep_ = 0, total_ = 0;
    std::size_t nkl_ = 0, nrecon_ = 0, ntriplet_ = 0, npercep_ = 0, steps_ = 0;
    std::size_t n_plus_ = 0;
};

inline StepValues step_values(const LossComponents<float>& parts, const BasicTensor<float>& total, std::size_t n_plus) {
    auto val = [](const BasicTensor<float>& t) {
        return t.defined() ? static_cast<double>(t.item()) : std::numeric_limits<double>::quiet_NaN();
    };
    return {val(parts.kl), val(parts.recon), val(parts.triplet), val(parts.percep), val(total), n_plus};
}

inline BasicTensor<float> standard_normal(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.f, 1.f);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return BasicTensor<float>::from_data(std::move(shape), std::move(v));
}

}  // namespace detail

// Trains `config.variant` on the images of `train` using `labels` (ignored by
// the plain vae). frozen_net trains nothing and returns an empty log.
inline TrainResult train_model(const TrainConfig& config, const ImageStore& store, const Manifest& train,
                               const std::vector<TripletLabel>& labels, const EpochCallback& on_epoch = {}) {
    TrainResult result{initial_checkpoint(config), {}};
    auto& model = result.checkpoint.model;
    const auto variant = config.variant;
    if (uses_triplets(variant) && labels.empty()) {
        throw ContractError(to_string(variant) + " needs a non-empty label set");
    }
    if (variant == ModelVariant::vae && train.empty()) throw ContractError("vae training needs images");
    if (variant == ModelVariant::frozen_net) return result;

    // Separate stream from model initialisation (which also derives from seed).
    std::mt19937_64 rng(config.seed ^ 0x5eedc0ffee123457ULL);
    auto params = detail::param_handles(model.trainable_parameters());
    AdamState<float> adam;
    const auto adam_cfg = config.adam();
    const float margin = static_cast<float>(config.weights.margin);

    // frozen_net_triplet works on fixed 4096-d features computed once.
    std::map<std::string, std::vector<float>> features;
    if (variant == ModelVariant::frozen_net_triplet) {
        std::set<std::string> needed;
        for (const auto& l : labels) needed.insert({l.anchor, l.positive, l.negative});
        std::vector<std::string> ids(needed.begin(), needed.end());
        StyleModel<float> bare = model;
        bare.head.reset();
        auto feats = embed_ids(bare, store, ids);
        for (std::size_t i = 0; i < ids.size(); ++i) features[ids[i]] = std::move(feats[i]);
    }
    auto feature_rows = [&](const std::vector<const std::string*>& ids) {
        std::vector<float> flat;
        flat.reserve(ids.size() * kFeatureDim);
        for (const auto* id : ids) {
            const auto& f = features.at(*id);
            flat.insert(flat.end(), f.begin(), f.end());
        }
        return BasicTensor<float>::from_data({ids.size(), kFeatureDim}, std::move(flat));
    };

    std::vector<std::size_t> order(variant == ModelVariant::vae ? train.size() : labels.size());
    const std::size_t per_step = variant == ModelVariant::vae ? 3 * config.batch_size : config.batch_size;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        detail::EpochAccumulator acc;
        std::size_t step = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += per_step, ++step) {
            std::size_t end = std::min(order.size(), begin + per_step);
            std::size_t n = end - begin;
            LossComponents<float> parts;
            std::size_t n_plus = 0;
            try {
                if (variant == ModelVariant::frozen_net_triplet) {
                    std::vector<const std::string*> a, p, ng;
                    for (std::size_t i = begin; i < end; ++i) {
                        const auto& l = labels[order[i]];
                        a.push_back(&l.anchor);
                        p.push_back(&l.positive);
                        ng.push_back(&l.negative);
                    }
                    const auto& head = *model.head;
                    auto res = triplet_loss<float>({head(feature_rows(a)), head(feature_rows(p)), head(feature_rows(ng))},
                                                   margin);
                    parts.triplet = res.loss;
                    n_plus = res.n_plus;
                } else {
                    std::vector<std::string> ids;
                    if (variant == ModelVariant::vae) {
                        for (std::size_t i = begin; i < end; ++i) ids.push_back(train[order[i]].id);
                    } else {
                        // anchors, then positives, then negatives
                        for (int role = 0; role < 3; ++role) {
                            for (std::size_t i = begin; i < end; ++i) {
                                const auto& l = labels[order[i]];
                                ids.push_back(role == 0 ? l.anchor : role == 1 ? l.positive : l.negative);
                            }
                        }
                    }
                    auto images = store.batch(ids);
                    const auto& vae = *model.vae;
                    auto code = vae.encode(images);
                    auto z = reparameterize(code, detail::standard_normal(code.mean.shape(), rng));
                    auto recon = vae.decode(z);
                    parts.kl = kl_loss(code);
                    parts.recon = recon_loss(images, recon);
                    if (config.weights.percep > 0) parts.percep = perceptual_loss(model.perceptual, images, recon);
                    if (variant == ModelVariant::vae_triplet) {
                        auto res = triplet_loss<float>({slice_rows(code.mean, 0, n), slice_rows(code.mean, n, 2 * n),
                                                        slice_rows(code.mean, 2 * n, 3 * n)},
                                                       margin);
                        parts.triplet = res.loss;
                        n_plus = res.n_plus;
                    }
                }
                auto total = total_loss(config.weights, parts);
                if (!std::isfinite(total.item())) throw NumericError("total loss is not finite");
                for (auto& p : params) p.zero_grad();
                total.backward();
                adam_step(params, adam, adam_cfg);
                acc.add(detail::step_values(parts, total, n_plus));
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                                   e.what());
            }
        }
        auto metrics = acc.finish(epoch);
        result.log.push_back(metrics);
        if (on_epoch) on_epoch(metrics);
    }
    for (auto& p : params) p.zero_grad();
    result.checkpoint.epoch = config.epochs;
    result.checkpoint.rng_summary = detail::rng_digest(rng);
    return result;
}

// ---- triplet satisfaction ------------------------------------------------------

// Fraction of labels with |e_a - e_p|^2 - |e_a - e_n|^2 + margin <= 0.
inline double satisfaction_rate(const std::map<std::string, std::vector<float>>& embeddings,
                                const std::vector<TripletLabel>& labels, double margin) {
    if (labels.empty()) throw ContractError("triplet satisfaction needs at least one label");
    auto get = [&](const std::string& id) -> const std::vector<float>& {
        auto it = embeddings.find(id);
        if (it == embeddings.end()) throw ContractError("no embedding for image '" + id + "'");
        return it->second;
    };
    std::size_t ok = 0;
    for (const auto& l : labels) {
        const auto &a = get(l.anchor), &p = get(l.positive), &n = get(l.negative);
        if (a.size() != p.size() || a.size() != n.size()) throw DimensionError("embeddings differ in length");
        double dp = 0, dn = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            double u = static_cast<double>(a[i]) - p[i], v = static_cast<double>(a[i]) - n[i];
            dp += u * u;
            dn += v * v;
        }
        if (dp - dn + margin <= 0) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

inline double eval_triplet_satisfaction(const StyleModel<float>& model, const ImageStore& store,
                                        const std::vector<TripletLabel>& labels, double margin) {
    if (labels.empty()) throw ContractError("triplet satisfaction needs at least one label");
    std::set<std::string> needed;
    for (const auto& l : labels) needed.insert({l.anchor, l.positive, l.negative});
    std::vector<std::string> ids(needed.begin(), needed.end());
    auto emb = embed_ids(model, store, ids);
    std::map<std::string, std::vector<float>> table;
    for (std::size_t i = 0; i < ids.size(); ++i) table[ids[i]] = std::move(emb[i]);
    return satisfaction_rate(table, labels, margin);
}

}  // namespace stylespace
