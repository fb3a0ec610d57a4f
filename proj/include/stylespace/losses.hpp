#pragma once

// Training objectives. Every loss returns a scalar tensor so the combined
// objective can be differentiated end to end.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stylespace/errors.hpp"
#include "stylespace/nets.hpp"
#include "stylespace/tensor.hpp"

namespace stylespace {

struct LossWeights {
    double kl = 1e-3;       // lambda_1
    double recon = 1.0;     // lambda_2
    double triplet = 1.0;   // single triplet coefficient, applied once
    double percep = 1e-2;   // perceptual coefficient
    double margin = 0.2;    // alpha

    void validate() const {
        for (double w : {kl, recon, triplet, percep, margin}) {
            if (!std::isfinite(w) || w < 0) throw ContractError("loss weights and margin must be finite and >= 0");
        }
    }
};

// Mean over the batch of the closed-form KL(N(mean, exp(logvar)) || N(0, I)),
// summed over latent coordinates.
template <typename T>
BasicTensor<T> kl_loss(const LatentBatch<T>& code) {
    if (code.mean.shape() != code.logvar.shape() || code.mean.rank() != 2) {
        throw DimensionError("kl_loss: mean " + shape_str(code.mean.shape()) + " vs logvar " +
                             shape_str(code.logvar.shape()));
    }
    auto per_coord = sub(add(square(code.mean), exp(code.logvar)), add_scalar(code.logvar, T(1)));
    return scale(sum(per_coord), T(0.5) / static_cast<T>(code.mean.dim(0)));
}

// Per-image sum of squared pixel differences, averaged over the batch.
template <typename T>
BasicTensor<T> recon_loss(const BasicTensor<T>& input, const BasicTensor<T>& recon) {
    if (input.shape() != recon.shape() || input.rank() == 0) {
        throw DimensionError("recon_loss: shapes " + shape_str(input.shape()) + " and " + shape_str(recon.shape()));
    }
    return scale(sum(square(sub(recon, input))), T(1) / static_cast<T>(input.dim(0)));
}

// Sum over tap layers of the mean squared activation difference. The frozen
// net's parameters carry no gradient; only `recon` (and `input`, if it
// requires one) receive gradients.
template <typename T>
BasicTensor<T> perceptual_loss(const PerceptualNet<T>& net, const BasicTensor<T>& input, const BasicTensor<T>& recon) {
    if (input.shape() != recon.shape()) {
        throw DimensionError("perceptual_loss: shapes " + shape_str(input.shape()) + " and " +
                             shape_str(recon.shape()));
    }
    auto a = net.forward(input, false);
    auto b = net.forward(recon, false);
    BasicTensor<T> total;
    for (std::size_t i = 0; i < a.taps.size(); ++i) {
        auto term = mean(square(sub(b.taps[i], a.taps[i])));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// Aligned anchor/positive/negative embeddings, one row per triplet.
template <typename T>
struct TripletBatch {
    BasicTensor<T> anchors;
    BasicTensor<T> positives;
    BasicTensor<T> negatives;

    std::size_t size() const { return anchors.dim(0); }
};

template <typename T>
TripletBatch<T> make_triplet_batch(const std::vector<std::vector<T>>& anchors,
                                   const std::vector<std::vector<T>>& positives,
                                   const std::vector<std::vector<T>>& negatives) {
    if (anchors.empty()) throw ContractError("triplet batch is empty");
    if (positives.size() != anchors.size() || negatives.size() != anchors.size()) {
        throw DimensionError("triplet batch lists have different lengths");
    }
    std::size_t dim = anchors[0].size();
    auto pack = [&](const std::vector<std::vector<T>>& rows) {
        std::vector<T> flat;
        for (const auto& r : rows) {
            if (r.size() != dim) throw DimensionError("triplet batch rows have different lengths");
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return BasicTensor<T>::from_data({rows.size(), dim}, std::move(flat));
    };
    return {pack(anchors), pack(positives), pack(negatives)};
}

template <typename T>
struct TripletLossResult {
    BasicTensor<T> loss;
    std::size_t n_plus = 0;  // triplets whose hinge argument is strictly positive
};

// weight / max(N+, 1) * sum_i [ |a-p|^2 - |a-n|^2 + margin ]_+
template <typename T>
TripletLossResult<T> triplet_loss(const TripletBatch<T>& batch, T margin, T weight = T(1)) {
    const auto& s = batch.anchors.shape();
    if (s.size() != 2 || batch.positives.shape() != s || batch.negatives.shape() != s) {
        throw DimensionError("triplet_loss: anchors " + shape_str(s) + ", positives " +
                             shape_str(batch.positives.shape()) + ", negatives " +
                             shape_str(batch.negatives.shape()));
    }
    if (margin < T(0)) throw ContractError("triplet margin must be >= 0");
    auto d_pos = sum_last(square(sub(batch.anchors, batch.positives)));
    auto d_neg = sum_last(square(sub(batch.anchors, batch.negatives)));
    auto hinge_arg = add_scalar(sub(d_pos, d_neg), margin);
    std::size_t n_plus = 0;
    for (T v : hinge_arg.data()) n_plus += v > T(0) ? 1 : 0;
    auto total = sum(relu(hinge_arg));
    return {scale(total, weight / static_cast<T>(std::max<std::size_t>(n_plus, 1))), n_plus};
}

// Component losses for the combined objective; undefined members are absent.
template <typename T>
struct LossComponents {
    BasicTensor<T> kl;
    BasicTensor<T> recon;
    BasicTensor<T> triplet;  // unweighted: computed with weight 1
    BasicTensor<T> percep;
};

// lambda_1 * kl + lambda_2 * recon + lambda_triplet * triplet + lambda_percep * percep.
// Zero-weight and absent terms are dropped from the graph entirely.
template <typename T>
BasicTensor<T> total_loss(const LossWeights& weights, const LossComponents<T>& parts) {
    weights.validate();
    BasicTensor<T> total;
    auto accumulate = [&](const BasicTensor<T>& term, double w, const char* name) {
        if (!term.defined()) return;
        if (term.numel() != 1) throw DimensionError(std::string("total_loss: component ") + name + " is not a scalar");
        if (!std::isfinite(static_cast<double>(term.item()))) {
            throw NumericError(std::string("total_loss: component ") + name + " is not finite");
        }
        if (w == 0.0) return;
        auto weighted = scale(term, static_cast<T>(w));
        total = total.defined() ? add(total, weighted) : weighted;
    };
    accumulate(parts.kl, weights.kl, "kl");
    accumulate(parts.recon, weights.recon, "recon");
    accumulate(parts.triplet, weights.triplet, "triplet");
    accumulate(parts.percep, weights.percep, "percep");
    if (!total.defined()) total = BasicTensor<T>::scalar(T(0));
    return total;
}

}  // namespace stylespace
