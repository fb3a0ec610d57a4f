#pragma once

// Network definitions: the convolutional VAE, the frozen perceptual feature
// network and the two-layer style head that sits on its 4096-d features.
// Everything operates on N x 3 x 64 x 64 images with values in [0, 1].

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stylespace/errors.hpp"
#include "stylespace/tensor.hpp"

namespace stylespace {

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kFeatureDim = 4096;
inline constexpr std::size_t kStyleDim = 1024;
inline constexpr std::size_t kDefaultLatentDim = 128;
inline constexpr std::uint64_t kPerceptualSeed = 7;

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

enum class ModelVariant { vae, vae_triplet, frozen_net, frozen_net_triplet };

inline std::string to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::vae: return "vae";
        case ModelVariant::vae_triplet: return "vae_triplet";
        case ModelVariant::frozen_net: return "frozen_net";
        case ModelVariant::frozen_net_triplet: return "frozen_net_triplet";
    }
    return "unknown";
}

inline ModelVariant parse_variant(const std::string& s) {
    if (s == "vae") return ModelVariant::vae;
    if (s == "vae_triplet") return ModelVariant::vae_triplet;
    if (s == "frozen_net") return ModelVariant::frozen_net;
    if (s == "frozen_net_triplet") return ModelVariant::frozen_net_triplet;
    throw ContractError("unknown model variant '" + s + "'");
}

inline bool has_decoder(ModelVariant v) { return v == ModelVariant::vae || v == ModelVariant::vae_triplet; }
inline bool uses_triplets(ModelVariant v) {
    return v == ModelVariant::vae_triplet || v == ModelVariant::frozen_net_triplet;
}

namespace detail {

template <typename T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng, bool requires_grad) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng));
    return BasicTensor<T>::from_data(std::move(shape), std::move(data), requires_grad);
}

inline void check_images(const Shape& s, const char* who) {
    if (s.size() != 4 || s[1] != kImageChannels || s[2] != kImageSize || s[3] != kImageSize) {
        throw DimensionError(std::string(who) + ": expected N x 3 x 64 x 64 images, got " + shape_str(s));
    }
}

}  // namespace detail

template <typename T>
struct Linear {
    BasicTensor<T> weight;  // [in, out]
    BasicTensor<T> bias;    // [out]

    static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng, bool trainable = true) {
        return {detail::he_normal<T>({in, out}, in, rng, trainable), BasicTensor<T>::zeros({out}, trainable)};
    }

    BasicTensor<T> operator()(const BasicTensor<T>& x) const {
        if (x.rank() != 2 || x.dim(1) != weight.dim(0)) {
            throw DimensionError("linear layer expects [N x " + std::to_string(weight.dim(0)) + "], got " +
                                 shape_str(x.shape()));
        }
        return add(matmul(x, weight), bias);
    }

    void collect(const std::string& prefix, NamedTensors<T>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }

    template <typename U>
    Linear<U> cast(bool trainable) const {
        return {weight.template cast<U>(trainable), bias.template cast<U>(trainable)};
    }
};

template <typename T>
struct Conv2d {
    BasicTensor<T> weight;  // [F, C, k, k]
    BasicTensor<T> bias;    // [F, 1, 1]
    std::size_t stride = 1;
    std::size_t pad = 0;

    static Conv2d init(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad,
                       std::mt19937_64& rng, bool trainable = true) {
        return {detail::he_normal<T>({out, in, k, k}, in * k * k, rng, trainable),
                BasicTensor<T>::zeros({out, 1, 1}, trainable), stride, pad};
    }

    BasicTensor<T> operator()(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(const std::string& prefix, NamedTensors<T>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }

    template <typename U>
    Conv2d<U> cast(bool trainable) const {
        return {weight.template cast<U>(trainable), bias.template cast<U>(trainable), stride, pad};
    }
};

// Encoder output for a batch: one (mean, logvar) row per image.
template <typename T>
struct LatentBatch {
    BasicTensor<T> mean;    // [N, latent_dim]
    BasicTensor<T> logvar;  // [N, latent_dim]
};

// A single image's latent Gaussian.
struct LatentCode {
    std::vector<float> mean;
    std::vector<float> logvar;
};

// z = mean + exp(logvar / 2) * noise, differentiable in mean and logvar.
template <typename T>
BasicTensor<T> reparameterize(const LatentBatch<T>& code, const BasicTensor<T>& noise) {
    if (noise.shape() != code.mean.shape() || code.logvar.shape() != code.mean.shape()) {
        throw DimensionError("reparameterize: noise " + shape_str(noise.shape()) + " vs latent " +
                             shape_str(code.mean.shape()));
    }
    return add(code.mean, mul(exp(scale(code.logvar, T(0.5))), noise));
}

inline std::vector<float> reparameterize(const LatentCode& code, const std::vector<float>& noise) {
    if (noise.size() != code.mean.size() || code.logvar.size() != code.mean.size()) {
        throw DimensionError("reparameterize: noise length " + std::to_string(noise.size()) + " vs latent length " +
                             std::to_string(code.mean.size()));
    }
    std::vector<float> z(noise.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = code.mean[i] + std::exp(code.logvar[i] / 2) * noise[i];
    return z;
}

// Four stride-2 conv blocks (3->32->64->128->256) with linear mean/logvar
// heads; the decoder mirrors it with nearest upsampling followed by 3x3 convs.
template <typename T>
class VaeModel {
   public:
    static constexpr std::size_t kBlocks = 4;
    static constexpr std::array<std::size_t, kBlocks + 1> kChannels = {3, 32, 64, 128, 256};
    static constexpr std::size_t kBottleneck = 4;  // spatial size after the encoder

    VaeModel() = default;

    static VaeModel init(std::size_t latent_dim, std::uint64_t seed) {
        if (latent_dim == 0) throw ContractError("latent_dim must be positive");
        std::mt19937_64 rng(seed);
        VaeModel m;
        m.latent_dim_ = latent_dim;
        for (std::size_t i = 0; i < kBlocks; ++i) {
            m.enc_[i] = Conv2d<T>::init(kChannels[i], kChannels[i + 1], 4, 2, 1, rng);
        }
        std::size_t flat = kChannels[kBlocks] * kBottleneck * kBottleneck;
        m.mean_head_ = Linear<T>::init(flat, latent_dim, rng);
        m.logvar_head_ = Linear<T>::init(flat, latent_dim, rng);
        // Small logvar weights so the initial posterior stays near unit variance.
        for (auto& w : m.logvar_head_.weight.mutable_data()) w *= T(0.1);
        m.dec_fc_ = Linear<T>::init(latent_dim, flat, rng);
        for (std::size_t i = 0; i < kBlocks; ++i) {
            m.dec_[i] = Conv2d<T>::init(kChannels[kBlocks - i], kChannels[kBlocks - i - 1], 3, 1, 1, rng);
        }
        return m;
    }

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t encoder_blocks() const { return kBlocks; }

    // Activation after encoder block `upto` (0 returns the input itself).
    BasicTensor<T> encoder_trunk(const BasicTensor<T>& images, std::size_t upto) const {
        detail::check_images(images.shape(), "encode");
        if (upto > kBlocks) throw ContractError("encoder has only " + std::to_string(kBlocks) + " blocks");
        BasicTensor<T> h = images;
        for (std::size_t i = 0; i < upto; ++i) h = relu(enc_[i](h));
        return h;
    }

    // Finish encoding from the activation produced by `encoder_trunk(x, from)`.
    LatentBatch<T> encode_from(const BasicTensor<T>& activation, std::size_t from) const {
        BasicTensor<T> h = activation;
        for (std::size_t i = from; i < kBlocks; ++i) h = relu(enc_[i](h));
        auto flat = flatten(h);
        return {mean_head_(flat), logvar_head_(flat)};
    }

    LatentBatch<T> encode(const BasicTensor<T>& images) const { return encode_from(encoder_trunk(images, 0), 0); }

    BasicTensor<T> decode(const BasicTensor<T>& z) const {
        if (z.rank() != 2 || z.dim(1) != latent_dim_) {
            throw DimensionError("decode: expected [N x " + std::to_string(latent_dim_) + "] latents, got " +
                                 shape_str(z.shape()));
        }
        std::size_t n = z.dim(0);
        auto h = reshape(relu(dec_fc_(z)), {n, kChannels[kBlocks], kBottleneck, kBottleneck});
        for (std::size_t i = 0; i < kBlocks; ++i) {
            h = dec_[i](upsample2x(h));
            if (i + 1 < kBlocks) h = relu(h);
        }
        return sigmoid(h);
    }

    NamedTensors<T> named_parameters(const std::string& prefix = "vae") const {
        NamedTensors<T> out;
        for (std::size_t i = 0; i < kBlocks; ++i) enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
        mean_head_.collect(prefix + ".mean", out);
        logvar_head_.collect(prefix + ".logvar", out);
        dec_fc_.collect(prefix + ".dec_fc", out);
        for (std::size_t i = 0; i < kBlocks; ++i) dec_[i].collect(prefix + ".dec" + std::to_string(i), out);
        return out;
    }

    template <typename U>
    VaeModel<U> cast(bool trainable = true) const {
        VaeModel<U> m;
        m.latent_dim_ = latent_dim_;
        for (std::size_t i = 0; i < kBlocks; ++i) {
            m.enc_[i] = enc_[i].template cast<U>(trainable);
            m.dec_[i] = dec_[i].template cast<U>(trainable);
        }
        m.mean_head_ = mean_head_.template cast<U>(trainable);
        m.logvar_head_ = logvar_head_.template cast<U>(trainable);
        m.dec_fc_ = dec_fc_.template cast<U>(trainable);
        return m;
    }

   private:
    template <typename>
    friend class VaeModel;

    std::size_t latent_dim_ = 0;
    std::array<Conv2d<T>, kBlocks> enc_;
    Linear<T> mean_head_, logvar_head_, dec_fc_;
    std::array<Conv2d<T>, kBlocks> dec_;
};

template <typename T>
struct PerceptualOutput {
    std::vector<BasicTensor<T>> taps;  // one per tap layer, in order
    BasicTensor<T> features;           // [N, 4096]; undefined when not requested
};

// Frozen feature network: five 3x3 conv blocks (strides 2,2,2,2,1) with taps
// after blocks 2 and 4, then a linear layer to 4096 features. Parameters never
// require gradients, so only the image branch is differentiated.
template <typename T>
class PerceptualNet {
   public:
    static constexpr std::size_t kBlocks = 5;
    static constexpr std::array<std::size_t, kBlocks + 1> kChannels = {3, 16, 32, 64, 64, 64};
    static constexpr std::array<std::size_t, kBlocks> kStrides = {2, 2, 2, 2, 1};
    static constexpr std::array<std::size_t, 2> kTapBlocks = {2, 4};
    static constexpr std::size_t kFinalSpatial = 4;

    PerceptualNet() = default;

    static PerceptualNet init(std::uint64_t seed = kPerceptualSeed) {
        std::mt19937_64 rng(seed);
        PerceptualNet net;
        for (std::size_t i = 0; i < kBlocks; ++i) {
            net.blocks_[i] = Conv2d<T>::init(kChannels[i], kChannels[i + 1], 3, kStrides[i], 1, rng, false);
        }
        net.fc_ = Linear<T>::init(kChannels[kBlocks] * kFinalSpatial * kFinalSpatial, kFeatureDim, rng, false);
        return net;
    }

    std::size_t blocks() const { return kBlocks; }
    std::vector<std::size_t> tap_layers() const { return {kTapBlocks.begin(), kTapBlocks.end()}; }

    BasicTensor<T> trunk(const BasicTensor<T>& images, std::size_t upto) const {
        detail::check_images(images.shape(), "perceptual_features");
        if (upto > kBlocks) throw ContractError("perceptual net has only " + std::to_string(kBlocks) + " blocks");
        BasicTensor<T> h = images;
        for (std::size_t i = 0; i < upto; ++i) h = relu(blocks_[i](h));
        return h;
    }

    BasicTensor<T> features_from(const BasicTensor<T>& activation, std::size_t from) const {
        BasicTensor<T> h = activation;
        for (std::size_t i = from; i < kBlocks; ++i) h = relu(blocks_[i](h));
        return relu(fc_(flatten(h)));
    }

    PerceptualOutput<T> forward(const BasicTensor<T>& images, bool with_features = true) const {
        detail::check_images(images.shape(), "perceptual_features");
        PerceptualOutput<T> out;
        BasicTensor<T> h = images;
        std::size_t last = with_features ? kBlocks : kTapBlocks.back();
        for (std::size_t i = 0; i < last; ++i) {
            h = relu(blocks_[i](h));
            if (std::find(kTapBlocks.begin(), kTapBlocks.end(), i + 1) != kTapBlocks.end()) out.taps.push_back(h);
        }
        if (with_features) out.features = relu(fc_(flatten(h)));
        return out;
    }

    NamedTensors<T> named_parameters(const std::string& prefix = "percep") const {
        NamedTensors<T> out;
        for (std::size_t i = 0; i < kBlocks; ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
        fc_.collect(prefix + ".fc", out);
        return out;
    }

    // FNV-1a over every parameter byte; used to prove the net never changes.
    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [name, t] : named_parameters()) {
            auto bytes = reinterpret_cast<const unsigned char*>(t.data().data());
            for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }

    template <typename U>
    PerceptualNet<U> cast() const {
        PerceptualNet<U> net;
        for (std::size_t i = 0; i < kBlocks; ++i) net.blocks_[i] = blocks_[i].template cast<U>(false);
        net.fc_ = fc_.template cast<U>(false);
        return net;
    }

   private:
    template <typename>
    friend class PerceptualNet;

    std::array<Conv2d<T>, kBlocks> blocks_;
    Linear<T> fc_;
};

enum class HeadActivation { relu, identity };

// Two linear layers mapping 4096 perceptual features to a 1024-d style embedding.
template <typename T>
class StyleEncoderHead {
   public:
    StyleEncoderHead() = default;

    static StyleEncoderHead init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        StyleEncoderHead h;
        h.fc1_ = Linear<T>::init(kFeatureDim, kStyleDim, rng);
        h.fc2_ = Linear<T>::init(kStyleDim, kStyleDim, rng);
        return h;
    }

    void set_activation(HeadActivation a) { activation_ = a; }

    BasicTensor<T> operator()(const BasicTensor<T>& features) const {
        if (features.rank() != 2 || features.dim(1) != kFeatureDim) {
            throw DimensionError("style head expects [N x 4096] features, got " + shape_str(features.shape()));
        }
        auto h = fc1_(features);
        if (activation_ == HeadActivation::relu) h = relu(h);
        return fc2_(h);
    }

    NamedTensors<T> named_parameters(const std::string& prefix = "head") const {
        NamedTensors<T> out;
        fc1_.collect(prefix + ".fc1", out);
        fc2_.collect(prefix + ".fc2", out);
        return out;
    }

    template <typename U>
    StyleEncoderHead<U> cast(bool trainable = true) const {
        StyleEncoderHead<U> h;
        h.fc1_ = fc1_.template cast<U>(trainable);
        h.fc2_ = fc2_.template cast<U>(trainable);
        h.activation_ = activation_;
        return h;
    }

   private:
    template <typename>
    friend class StyleEncoderHead;

    Linear<T> fc1_, fc2_;
    HeadActivation activation_ = HeadActivation::relu;
};

template <typename T>
PerceptualOutput<T> perceptual_features(const PerceptualNet<T>& net, const BasicTensor<T>& images) {
    return net.forward(images, true);
}

inline std::vector<float> style_embed(const StyleEncoderHead<float>& head, const std::vector<float>& feature) {
    if (feature.size() != kFeatureDim) {
        throw DimensionError("style_embed expects a 4096-length feature, got " + std::to_string(feature.size()));
    }
    return head(Tensor::from_data({1, kFeatureDim}, feature)).to_vector();
}

// The bundle for one model variant: the frozen net is always present; the VAE
// exists for VAE variants and the head for frozen_net_triplet.
template <typename T>
struct StyleModel {
    ModelVariant variant = ModelVariant::vae_triplet;
    std::optional<VaeModel<T>> vae;
    PerceptualNet<T> perceptual;
    std::optional<StyleEncoderHead<T>> head;

    static StyleModel create(ModelVariant variant, std::size_t latent_dim, std::uint64_t seed) {
        StyleModel m;
        m.variant = variant;
        m.perceptual = PerceptualNet<T>::init();
        if (has_decoder(variant)) m.vae = VaeModel<T>::init(latent_dim, seed);
        if (variant == ModelVariant::frozen_net_triplet) m.head = StyleEncoderHead<T>::init(seed);
        return m;
    }

    std::size_t embedding_dim() const {
        if (vae) return vae->latent_dim();
        return head ? kStyleDim : kFeatureDim;
    }

    // Number of convolutional blocks before flattening in the embedding path.
    std::size_t conv_blocks() const { return vae ? vae->encoder_blocks() : perceptual.blocks(); }

    BasicTensor<T> trunk(const BasicTensor<T>& images, std::size_t upto) const {
        return vae ? vae->encoder_trunk(images, upto) : perceptual.trunk(images, upto);
    }

    // Style embedding from a trunk activation: encoder mean for VAE variants,
    // perceptual features (optionally through the head) otherwise.
    BasicTensor<T> embed_from(const BasicTensor<T>& activation, std::size_t from) const {
        if (vae) return vae->encode_from(activation, from).mean;
        auto features = perceptual.features_from(activation, from);
        return head ? (*head)(features) : features;
    }

    BasicTensor<T> embed(const BasicTensor<T>& images) const { return embed_from(trunk(images, 0), 0); }

    // Trainable tensors for this variant.
    NamedTensors<T> trainable_parameters() const {
        if (vae) return vae->named_parameters();
        if (head) return head->named_parameters();
        return {};
    }

    NamedTensors<T> all_parameters() const {
        auto out = trainable_parameters();
        for (auto& p : perceptual.named_parameters()) out.push_back(p);
        return out;
    }

    template <typename U>
    StyleModel<U> cast(bool trainable = true) const {
        StyleModel<U> m;
        m.variant = variant;
        m.perceptual = perceptual.template cast<U>();
        if (vae) m.vae = vae->template cast<U>(trainable);
        if (head) m.head = head->template cast<U>(trainable);
        return m;
    }
};

}  // namespace stylespace
