#pragma once

// Grad-CAM style maps of where the triplet loss looks in each image.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "stylespace/errors.hpp"
#include "stylespace/image_io.hpp"
#include "stylespace/losses.hpp"
#include "stylespace/nets.hpp"

namespace stylespace {

struct ActivationMap {
    std::string image_id;
    std::size_t target_layer = 0;
    std::size_t height = 0, width = 0;
    std::vector<double> values;  // row-major, in [0,1]
};

template <typename T>
struct GradCamResult {
    std::array<ActivationMap, 3> maps;            // anchor, positive, negative
    std::array<std::vector<double>, 3> weights;   // per-channel spatial mean of dL/dA
    std::array<BasicTensor<T>, 3> activations;    // A at the target layer, [1 x K x H' x W']
    double loss = 0;
    bool inactive = false;
};

// Triplet loss on one (anchor, positive, negative) computed from target-layer
// activations; shared by grad_cam and its finite-difference oracle.
template <typename T>
BasicTensor<T> triplet_from_activations(const StyleModel<T>& model, const std::array<BasicTensor<T>, 3>& acts,
                                        std::size_t layer, double margin) {
    return triplet_loss<T>({model.embed_from(acts[0], layer), model.embed_from(acts[1], layer),
                            model.embed_from(acts[2], layer)},
                           static_cast<T>(margin))
        .loss;
}

// `images` are [1 x 3 x 64 x 64]. `layer` counts conv blocks of the embedding
// path (1..conv_blocks()); 0 picks the last one. All three activations are
// leaves of one graph, so a single backward pass yields each image's own
// gradient.
template <typename T>
GradCamResult<T> grad_cam(const StyleModel<T>& trained, const std::array<BasicTensor<T>, 3>& images,
                          std::size_t layer, double margin, const std::array<std::string, 3>& ids = {}) {
    auto model = trained.template cast<T>(false);
    if (layer == 0) layer = model.conv_blocks();
    if (layer > model.conv_blocks()) {
        throw ContractError("target layer " + std::to_string(layer) + " exceeds the " +
                            std::to_string(model.conv_blocks()) + " conv blocks of " + to_string(model.variant));
    }
    if (margin < 0) throw ContractError("margin must be >= 0");
    GradCamResult<T> r;
    for (int i = 0; i < 3; ++i) {
        if (images[i].rank() != 4 || images[i].dim(0) != 1) {
            throw DimensionError("grad_cam expects single-image batches, got " + shape_str(images[i].shape()));
        }
        r.activations[i] = model.trunk(images[i], layer).detach(true);
    }
    auto loss = triplet_from_activations(model, r.activations, layer, margin);
    r.loss = static_cast<double>(loss.item());
    r.inactive = !(r.loss > 0);
    if (!r.inactive) loss.backward();

    for (int i = 0; i < 3; ++i) {
        const auto& A = r.activations[i];
        std::size_t K = A.dim(1), H = A.dim(2), W = A.dim(3), hw = H * W;
        auto& map = r.maps[i];
        map.image_id = ids[i];
        map.target_layer = layer;
        map.height = H;
        map.width = W;
        map.values.assign(hw, 0.0);
        r.weights[i].assign(K, 0.0);
        if (r.inactive || !A.has_grad()) continue;
        auto g = A.grad();
        auto a = A.data();
        for (std::size_t k = 0; k < K; ++k) {
            double s = 0;
            for (std::size_t p = 0; p < hw; ++p) s += static_cast<double>(g[k * hw + p]);
            r.weights[i][k] = s / static_cast<double>(hw);
        }
        for (std::size_t p = 0; p < hw; ++p) {
            double v = 0;
            for (std::size_t k = 0; k < K; ++k) v += r.weights[i][k] * static_cast<double>(a[k * hw + p]);
            map.values[p] = std::max(v, 0.0);
        }
        double mx = *std::max_element(map.values.begin(), map.values.end());
        if (mx > 0) {
            for (auto& v : map.values) v /= mx;
        }
    }
    return r;
}

// Bilinear resize with half-pixel centres (edge samples clamp).
inline std::vector<double> upsample_bilinear(const std::vector<double>& src, std::size_t h, std::size_t w,
                                             std::size_t out_h, std::size_t out_w) {
    if (src.size() != h * w || h == 0 || w == 0) throw DimensionError("upsample_bilinear: size mismatch");
    std::vector<double> out(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        double sy = std::clamp((y + 0.5) * static_cast<double>(h) / out_h - 0.5, 0.0, static_cast<double>(h - 1));
        std::size_t y0 = static_cast<std::size_t>(sy), y1 = std::min(y0 + 1, h - 1);
        double fy = sy - y0;
        for (std::size_t x = 0; x < out_w; ++x) {
            double sx =
                std::clamp((x + 0.5) * static_cast<double>(w) / out_w - 0.5, 0.0, static_cast<double>(w - 1));
            std::size_t x0 = static_cast<std::size_t>(sx), x1 = std::min(x0 + 1, w - 1);
            double fx = sx - x0;
            double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
            double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
            out[y * out_w + x] = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

inline Image map_image(const ActivationMap& map, std::size_t size = kImageSize) {
    auto up = upsample_bilinear(map.values, map.height, map.width, size, size);
    Image img{1, size, size, std::vector<float>(up.begin(), up.end())};
    return img;
}

// Blue-to-red ramp of the map blended over `source` at 40% opacity.
inline Image overlay(const Image& source, const Image& map) {
    if (source.channels != 3 || map.channels != 1 || source.height != map.height || source.width != map.width) {
        throw DimensionError("overlay needs an RGB source and a same-sized single-channel map");
    }
    Image out = source;
    for (std::size_t y = 0; y < map.height; ++y) {
        for (std::size_t x = 0; x < map.width; ++x) {
            float v = std::clamp(map.at(0, y, x), 0.f, 1.f);
            std::array<float, 3> color = {std::clamp(1.5f - std::abs(4 * v - 3), 0.f, 1.f),
                                          std::clamp(1.5f - std::abs(4 * v - 2), 0.f, 1.f),
                                          std::clamp(1.5f - std::abs(4 * v - 1), 0.f, 1.f)};
            for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = 0.6f * source.at(c, y, x) + 0.4f * color[c];
        }
    }
    return out;
}

// Share of the (upsampled) map's total value inside `mask` (> 0.5).
inline double mass_fraction(const Image& map, const Image& mask) {
    if (map.pixels.size() != mask.pixels.size()) throw DimensionError("mass_fraction: size mismatch");
    double in = 0, total = 0;
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        total += map.pixels[i];
        if (mask.pixels[i] > 0.5f) in += map.pixels[i];
    }
    return total > 0 ? in / total : 0.0;
}

}  // namespace stylespace
