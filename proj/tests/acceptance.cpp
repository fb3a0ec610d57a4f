// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [WORKDIR] [--only GROUP...]
//
// Groups: losses, gradients, kl, baseline, tsne, gradcam, checkpoint,
// annotate, e2e. The end-to-end group trains for 40 epochs and dominates the
// runtime; its checkpoint also feeds the trained-model interpolation and
// Grad-CAM checks.

#include <atomic>
#include <cstring>
#include <optional>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "loss_oracles.hpp"
#include "stylespace/analysis.hpp"
#include "stylespace/data.hpp"
#include "stylespace/explain.hpp"
#include "stylespace/losses.hpp"
#include "stylespace/train.hpp"
#include "stylespace/annotate.hpp"
#include "tmpdir.hpp"

using namespace stylespace;
using namespace stylespace::testing;

namespace {

using SteadyClock = std::chrono::steady_clock;

double seconds_since(SteadyClock::time_point t0) { return std::chrono::duration<double>(SteadyClock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
}

void info(const std::string& name, const std::string& detail) { std::cout << "INFO " << name << ": " << detail << std::endl; }

// Runs `body`; an exception counts as a failure of `name`.
template <typename F>
void guarded(const std::string& name, F&& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(name, false, std::string("threw: ") + e.what());
    }
}

// ---- losses ---------------------------------------------------------------------

void loss_oracle() {
    guarded("triplet loss matches brute force", [] {
        auto t0 = SteadyClock::now();
        std::mt19937_64 rng(2024);
        double worst = 0;
        std::size_t n_plus_mismatch = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            std::size_t n = 1 + rng() % 16, d = 1 + rng() % 8;
            auto a = random_rows(n, d, rng), p = random_rows(n, d, rng), q = random_rows(n, d, rng);
            double margin = (rng() % 100) / 100.0, weight = 0.1 + (rng() % 200) / 100.0;
            auto got = triplet_loss(make_triplet_batch(a, p, q), margin, weight);
            auto want = triplet_oracle(a, p, q, margin, weight);
            worst = std::max(worst, std::abs(got.loss.item() - want.loss));
            n_plus_mismatch += got.n_plus != want.n_plus;
        }
        double secs = seconds_since(t0);
        report("triplet loss matches brute force", worst <= 1e-6 && n_plus_mismatch == 0,
               fmt("1000 batches, max |diff| %.3g (tol 1e-6), N+ mismatches %zu", worst, n_plus_mismatch));
        report("triplet loss oracle runtime", secs < 5.0, fmt("%.3f s (limit 5 s)", secs));
    });

    guarded("triplet loss duplication invariance", [] {
        std::mt19937_64 rng(77);
        double worst = 0;
        for (int trial = 0; trial < 300; ++trial) {
            std::size_t n = 1 + rng() % 16, d = 1 + rng() % 8;
            auto a = random_rows(n, d, rng), p = random_rows(n, d, rng), q = random_rows(n, d, rng);
            double base = triplet_loss(make_triplet_batch(a, p, q), 0.2).loss.item();
            for (std::size_t k : {2u, 5u}) {
                Rows ak, pk, qk;
                for (std::size_t c = 0; c < k; ++c) {
                    ak.insert(ak.end(), a.begin(), a.end());
                    pk.insert(pk.end(), p.begin(), p.end());
                    qk.insert(qk.end(), q.begin(), q.end());
                }
                worst = std::max(worst, std::abs(triplet_loss(make_triplet_batch(ak, pk, qk), 0.2).loss.item() - base));
            }
        }
        report("triplet loss duplication invariance", worst <= 1e-6,
               fmt("k in {2,5} over 300 batches, max |diff| %.3g (tol 1e-6)", worst));
    });

    guarded("all-inactive batch gives zero", [] {
        std::mt19937_64 rng(78);
        std::size_t nonzero = 0;
        for (int trial = 0; trial < 300; ++trial) {
            std::size_t n = 1 + rng() % 16, d = 1 + rng() % 8;
            auto a = random_rows(n, d, rng), p = random_rows(n, d, rng, -0.01, 0.01);
            Rows pos(n), neg(n);
            for (std::size_t i = 0; i < n; ++i) {
                pos[i] = a[i];
                neg[i] = a[i];
                for (std::size_t j = 0; j < d; ++j) pos[i][j] += p[i][j];
                neg[i][0] += 10.0;  // hinge argument <= 0.0004 - 100 + 0.2 < 0
            }
            auto r = triplet_loss(make_triplet_batch(a, pos, neg), 0.2);
            nonzero += !(r.loss.item() == 0.0 && r.n_plus == 0);
        }
        report("all-inactive batch gives zero", nonzero == 0, fmt("300 batches, %zu non-zero", nonzero));
    });
}

void gradient_suite() {
    guarded("loss gradients match finite differences", [] {
        auto t0 = SteadyClock::now();
        LossGradientSuite suite;
        struct Row {
            const char* name;
            double (LossGradientSuite::*fn)(std::uint64_t) const;
        };
        bool all = true;
        for (auto row : {Row{"kl_loss", &LossGradientSuite::kl}, Row{"recon_loss", &LossGradientSuite::recon},
                         Row{"perceptual_loss", &LossGradientSuite::perceptual},
                         Row{"triplet_loss", &LossGradientSuite::triplet}, Row{"total_loss", &LossGradientSuite::total}}) {
            double worst = 0;
            for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, (suite.*row.fn)(1000 + seed));
            bool ok = worst < 1e-4;
            all = all && ok;
            report(std::string("gradient check ") + row.name, ok,
                   fmt("100 instances, max rel. err. %.3g (tol 1e-4)", worst));
        }
        double secs = seconds_since(t0);
        report("gradient suite runtime", secs < 60.0, fmt("%.1f s (limit 60 s)", secs));
    });
}

void kl_properties() {
    guarded("kl properties", [] {
        std::mt19937_64 rng(5);
        double lowest = 1e300;
        for (int trial = 0; trial < 1000; ++trial) {
            std::size_t n = 1 + rng() % 8, d = 1 + rng() % 16;
            auto m = random_rows(n, d, rng, -3, 3), lv = random_rows(n, d, rng, -5, 5);
            lowest = std::min(lowest, kl_loss(LatentBatch<double>{rows_tensor(m), rows_tensor(lv)}).item());
        }
        report("kl_loss is non-negative", lowest >= 0.0, fmt("1000 random codes, minimum %.3g", lowest));
        auto zero = kl_loss(LatentBatch<double>{DTensor::zeros({4, 16}), DTensor::zeros({4, 16})}).item();
        auto zero_f = kl_loss(LatentBatch<float>{Tensor::zeros({4, 16}), Tensor::zeros({4, 16})}).item();
        report("kl_loss(0, 0) is exactly 0", zero == 0.0 && zero_f == 0.0f, fmt("double %g, float %g", zero, zero_f));
        auto spot = kl_loss(LatentBatch<double>{DTensor::from_data({1, 1}, {1.0}), DTensor::zeros({1, 1})}).item();
        auto spot_f = kl_loss(LatentBatch<float>{Tensor::from_data({1, 1}, {1.0f}), Tensor::zeros({1, 1})}).item();
        report("kl_loss(mu=[1], logvar=[0]) = 0.5", std::abs(spot - 0.5) <= 1e-6 && std::abs(spot_f - 0.5) <= 1e-6,
               fmt("double %.9g, float %.9g (tol 1e-6)", spot, static_cast<double>(spot_f)));
    });
}

// ---- analysis ---------------------------------------------------------------------

void baseline_943() {
    guarded("943-class chance baseline", [] {
        const std::size_t classes = 943, trials = 50, dim = 16;
        std::mt19937_64 rng(943);
        std::normal_distribution<double> g;
        std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
        double sum = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            Eigen::MatrixXd train(classes, dim), test(classes, dim);
            for (Eigen::Index i = 0; i < train.size(); ++i) train.data()[i] = g(rng);
            for (Eigen::Index i = 0; i < test.size(); ++i) test.data()[i] = g(rng);
            std::vector<std::string> labels(classes), truth(classes);
            for (std::size_t i = 0; i < classes; ++i) labels[i] = "artist_" + std::to_string(i);
            std::shuffle(labels.begin(), labels.end(), rng);
            for (auto& l : truth) l = "artist_" + std::to_string(pick(rng));
            sum += accuracy(knn_classify(train, labels, test, 1), truth);
        }
        double p = 1.0 / classes, mean = sum / trials;
        double sigma = std::sqrt(p * (1 - p) / (classes * trials));
        report("943-class chance baseline", std::abs(mean - p) <= 3 * sigma,
               fmt("mean accuracy %.5f%% over %zu trials, 1/943 = %.5f%%, 3 sigma = %.5f%%", 100 * mean, trials, 100 * p,
                   300 * sigma));
        // the usual quoted figure is .106%
        report("chance baseline agrees with the published .106%", std::abs(100 * p - 0.106) < 5e-4,
               fmt("100/943 = %.5f", 100 * p));
    });
}

// Best accuracy of a threshold along the direction joining the class means.
double linear_separability(const Eigen::MatrixXd& Y, const std::vector<int>& label) {
    Eigen::Vector2d m0 = Eigen::Vector2d::Zero(), m1 = Eigen::Vector2d::Zero();
    int n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
        if (label[i]) {
            m1 += Y.row(i).transpose();
            ++n1;
        } else {
            m0 += Y.row(i).transpose();
            ++n0;
        }
    }
    Eigen::Vector2d dir = m1 / n1 - m0 / n0;
    std::vector<std::pair<double, int>> proj;
    for (Eigen::Index i = 0; i < Y.rows(); ++i) proj.push_back({Y.row(i).dot(dir), label[i]});
    std::sort(proj.begin(), proj.end());
    // threshold between positions k-1 and k: below is class 0
    int best = 0;
    int ones_below = 0;
    for (std::size_t k = 0; k <= proj.size(); ++k) {
        int zeros_below = static_cast<int>(k) - ones_below;
        best = std::max(best, zeros_below + (n1 - ones_below));
        if (k < proj.size()) ones_below += proj[k].second;
    }
    return static_cast<double>(best) / static_cast<double>(Y.rows());
}

void tsne_properties() {
    guarded("t-SNE", [] {
        std::mt19937_64 rng(60);
        std::normal_distribution<double> g;
        // fixtures: two separated blobs, one isotropic cloud, one noisy line
        std::vector<std::pair<std::string, Eigen::MatrixXd>> fixtures;
        Eigen::MatrixXd blobs(60, 10);
        std::vector<int> blob_label(60);
        for (int i = 0; i < 60; ++i) {
            blob_label[i] = i % 2;
            for (int j = 0; j < 10; ++j) blobs(i, j) = g(rng) + (i % 2 ? 8.0 : 0.0);
        }
        fixtures.push_back({"blobs", blobs});
        Eigen::MatrixXd cloud(50, 5);
        for (Eigen::Index i = 0; i < cloud.size(); ++i) cloud.data()[i] = g(rng);
        fixtures.push_back({"cloud", cloud});
        Eigen::MatrixXd line(40, 3);
        for (int i = 0; i < 40; ++i)
            for (int j = 0; j < 3; ++j) line(i, j) = 0.1 * i * (j + 1) + 0.01 * g(rng);
        fixtures.push_back({"line", line});

        double worst_entropy = 0;
        bool descent = true;
        std::string kls;
        Eigen::MatrixXd blob_Y;
        for (const auto& [name, X] : fixtures) {
            for (double perp : {5.0, 10.0}) {
                auto aff = tsne_affinities(X, perp);
                for (double h : aff.entropy_bits) worst_entropy = std::max(worst_entropy, std::abs(h - std::log2(perp)));
            }
            TsneConfig cfg;
            cfg.perplexity = 10;
            cfg.seed = 3;
            auto r = project_2d(X, cfg);
            descent = descent && r.final_kl < r.initial_kl;
            kls += fmt(" %s %.3f->%.3f", name.c_str(), r.initial_kl, r.final_kl);
            if (name == "blobs") blob_Y = r.Y;
        }
        report("t-SNE entropy matches log2(perplexity)", worst_entropy <= 1e-4,
               fmt("max |H - log2 perp| %.3g bits (tol 1e-4)", worst_entropy));
        report("t-SNE final KL below initial KL", descent, "KL" + kls);
        double sep = linear_separability(blob_Y, blob_label);
        report("t-SNE two-blob separability", sep >= 0.95, fmt("%.3f of 60 points on the right side (need 0.95)", sep));
    });
}

// ---- Grad-CAM -------------------------------------------------------------------

BasicTensor<double> synthetic_image(std::uint64_t seed, std::size_t index) {
    auto e = sample_synthetic(6, 3, seed)[index];
    auto img = render_synthetic(e.style, e.content).image;
    return BasicTensor<double>::from_data({1, 3, 64, 64}, std::vector<double>(img.pixels.begin(), img.pixels.end()));
}

// Central difference of the loss under a whole-channel shift, per unit area.
std::vector<double> channel_oracle(const StyleModel<double>& model, const std::array<BasicTensor<double>, 3>& acts,
                                   int which, std::size_t layer, double margin, double eps) {
    const auto& A = acts[which];
    std::size_t K = A.dim(1), hw = A.dim(2) * A.dim(3);
    std::vector<double> w(K);
    for (std::size_t k = 0; k < K; ++k) {
        auto shifted = [&](double delta) {
            auto copy = acts;
            copy[which] = A.detach();
            auto d = copy[which].mutable_data();
            for (std::size_t p = 0; p < hw; ++p) d[k * hw + p] += delta;
            return triplet_from_activations(model, copy, layer, margin).item();
        };
        w[k] = (shifted(eps) - shifted(-eps)) / (2 * eps * static_cast<double>(hw));
    }
    return w;
}

// Worst relative error of grad_cam's channel weights against the oracle over
// three images at one layer.
double gradcam_fd_error(const StyleModel<double>& model, const std::array<BasicTensor<double>, 3>& imgs,
                        std::size_t layer, double eps, bool* normalized = nullptr) {
    const double margin = 1e3;  // keeps the hinge active under the perturbations
    auto r = grad_cam<double>(model, imgs, layer, margin);
    if (r.inactive) throw std::runtime_error("hinge inactive at margin 1e3");
    double worst = 0;
    for (int i = 0; i < 3; ++i) {
        worst = std::max(worst, relative_error(r.weights[i], channel_oracle(model, r.activations, i, layer, margin, eps)));
        if (normalized) {
            double mx = *std::max_element(r.maps[i].values.begin(), r.maps[i].values.end());
            double mn = *std::min_element(r.maps[i].values.begin(), r.maps[i].values.end());
            *normalized = *normalized && mn >= 0.0 && mx <= 1.0 && (mx == 1.0 || mx == 0.0);
        }
    }
    return worst;
}

// Checks on one model; `label` names it in the report. The stated oracle
// (eps 1e-3) runs at the default target layer. Where relus lie between the
// target layer and the embedding, a 1e-3 whole-channel shift crosses their
// kinks and the central difference stops being a derivative, so every layer
// is also checked at eps 1e-6 and the 1e-3 numbers there are only reported.
void gradcam_checks(const StyleModel<float>& trained, const std::string& label) {
    auto model = trained.cast<double>(false);
    std::array<BasicTensor<double>, 3> imgs = {synthetic_image(11, 0), synthetic_image(11, 3), synthetic_image(11, 1)};

    auto inactive = grad_cam<double>(model, {imgs[0], imgs[0], imgs[1]}, 0, 0.0);
    bool zero = inactive.inactive && inactive.loss == 0.0;
    for (const auto& m : inactive.maps)
        for (double v : m.values) zero = zero && v == 0.0;
    report("Grad-CAM inactive triplet, " + label, zero, fmt("flag %d, loss %g", inactive.inactive, inactive.loss));

    const std::size_t last = model.conv_blocks();
    bool smooth_default = model.vae.has_value();  // the head's relus follow the frozen net's last block
    bool normalized = true;
    double at_default = gradcam_fd_error(model, imgs, last, 1e-3, &normalized);
    if (smooth_default) {
        report("Grad-CAM weights match channel finite differences, " + label, at_default <= 5e-3,
               fmt("default layer %zu, eps 1e-3, max rel. err. %.3g (tol 5e-3)", last, at_default));
    }
    double fine = 0;
    std::string coarse;
    for (std::size_t layer = 1; layer <= last; ++layer) {
        fine = std::max(fine, gradcam_fd_error(model, imgs, layer, 1e-6, &normalized));
        if (layer < last || !smooth_default) {
            coarse += fmt(" L%zu %.2g", layer, layer == last ? at_default : gradcam_fd_error(model, imgs, layer, 1e-3));
        }
    }
    report("Grad-CAM weights match fine finite differences on every layer, " + label, fine <= 5e-3,
           fmt("layers 1-%zu, eps 1e-6, max rel. err. %.3g (tol 5e-3)", last, fine));
    info("Grad-CAM eps 1e-3 across relu kinks, " + label, "rel. err." + coarse);
    report("Grad-CAM maps normalized to [0,1], " + label, normalized, "min >= 0, max in {0, 1} on every map");
}

// Heuristic, reported but not gated: a negative that
// differs from the anchor only in background should draw its map onto the
// background.
void gradcam_locality(const StyleModel<float>& model) {
    auto entries = sample_synthetic(60, 6, 31);
    std::string per_layer;
    int counted = 0;
    for (std::size_t layer = 1; layer <= model.conv_blocks(); ++layer) {
        double sum = 0;
        int above = 0;
        counted = 0;
        for (std::size_t i = 0; i + 6 < entries.size(); i += 3) {
            auto anchor = entries[i];
            auto positive = entries[i + 6];  // same class, other content
            auto negative = anchor;
            negative.style.background =
                static_cast<BackgroundKind>((static_cast<int>(anchor.style.background) + 1 + i % 2) % 3);
            auto ra = render_synthetic(anchor.style, anchor.content);
            auto rp = render_synthetic(positive.style, positive.content);
            auto rn = render_synthetic(negative.style, negative.content);
            auto r = grad_cam<float>(model, {image_tensor(ra.image), image_tensor(rp.image), image_tensor(rn.image)},
                                     layer, 0.2);
            if (r.inactive) continue;
            double frac = mass_fraction(map_image(r.maps[2]), rn.background_mask);
            sum += frac;
            above += frac >= 0.6;
            ++counted;
        }
        if (counted == 0) break;
        per_layer += fmt(" L%zu %.3f (%d >= 0.6)", layer, sum / counted, above);
    }
    if (counted == 0) {
        info("Grad-CAM background locality", "no active background-only triplets at margin 0.2");
        return;
    }
    info("Grad-CAM background locality",
         fmt("%d active triplets, mean background mass per layer:", counted) + per_layer);
}

// ---- checkpoint -------------------------------------------------------------------

void checkpoint_checks(const Checkpoint& ckpt, const fs::path& dir) {
    guarded("checkpoint round trip", [&] {
        auto path = (dir / "roundtrip.ckpt").string();
        save_checkpoint(ckpt, path);
        auto back = load_checkpoint(path);
        auto a = ckpt.model.all_parameters(), b = back.model.all_parameters();
        bool same = a.size() == b.size() && back.epoch == ckpt.epoch && back.rng_summary == ckpt.rng_summary;
        std::size_t values = 0;
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            auto x = a[i].second.data(), y = b[i].second.data();
            same = a[i].first == b[i].first && x.size() == y.size() &&
                   std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
            values += x.size();
        }
        report("checkpoint save/load is bitwise", same, fmt("%zu tensors, %zu values", a.size(), values));

        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto rejects = [&](std::string mutated, const char* name, const std::string& expect) {
            auto p = (dir / name).string();
            std::ofstream(p, std::ios::binary) << mutated;
            try {
                load_checkpoint(p);
            } catch (const FormatError& e) {
                return std::string(e.what()).find(expect) != std::string::npos;
            }
            return false;
        };
        std::mt19937_64 rng(9);
        int caught = 0;
        for (int t = 0; t < 20; ++t) {
            auto m = bytes;
            m[5 + rng() % (m.size() - 5)] ^= static_cast<char>(1 + rng() % 255);
            caught += rejects(m, "flip.ckpt", "");
        }
        report("checkpoint corrupted byte rejected", caught == 20, fmt("%d of 20 single-byte corruptions rejected", caught));
        auto v2 = bytes;
        v2[4] = 2;
        report("checkpoint format version gate", rejects(v2, "v2.ckpt", "version"), "version byte 2 rejected");
    });
}

// ---- annotation service -------------------------------------------------------------

int label_all(int port, const std::string& session) {
    httplib::Client cli("127.0.0.1", port);
    int stored = 0;
    for (;;) {
        auto res = cli.Get("/api/task?session=" + session);
        if (!res || res->status == 204) break;
        if (res->status != 200) return -1;
        auto task = nlohmann::json::parse(res->body);
        nlohmann::json body = {
            {"task_id", task["task_id"]}, {"choice", stored % 2 ? "left" : "right"}, {"annotator", session}};
        auto post = cli.Post("/api/label", body.dump(), "application/json");
        if (!post || post->status != 201) return -1;
        ++stored;
    }
    return stored;
}

void annotation_checks(const fs::path& dir) {
    auto serve = [&](const std::string& name, std::size_t n, int clients) {
        auto corpus = gen_synthetic(dir / name, n, 3, 8);
        auto queue = make_triplets(corpus.manifest, 8);
        auto labels = dir / (name + "_labels.jsonl");
        AnnotationService service(corpus.manifest, queue, labels, 8);
        AnnotationServer server(service);
        int port = server.bind("127.0.0.1", 0);
        std::thread thread([&] { server.serve(); });
        server.wait_until_ready();
        std::atomic<int> total{0};
        std::vector<std::thread> threads;
        for (int c = 0; c < clients; ++c) threads.emplace_back([&, c] { total += label_all(port, "c" + std::to_string(c)); });
        for (auto& t : threads) t.join();
        server.stop();
        thread.join();
        return std::make_tuple(corpus.manifest, labels, total.load());
    };

    guarded("annotation scripted client", [&] {
        auto [manifest, file, stored] = serve("ann50", 50, 1);
        auto labels = load_labels(file, &manifest);
        std::set<std::string> anchors;
        for (const auto& l : labels) anchors.insert(l.anchor);
        report("annotation scripted client labels 50", stored == 50 && labels.size() == 50 && anchors.size() == 50,
               fmt("%d stored, %zu loaded, %zu unique anchors", stored, labels.size(), anchors.size()));
    });
    guarded("annotation concurrent clients", [&] {
        auto [manifest, file, stored] = serve("ann4", 80, 4);
        std::ifstream in(file);
        std::size_t lines = 0, malformed = 0;
        for (std::string line; std::getline(in, line); ++lines) {
            auto j = nlohmann::json::parse(line, nullptr, false);
            try {
                if (j.is_discarded()) throw std::runtime_error("bad json");
                label_from_json(j);
            } catch (const std::exception&) {
                ++malformed;
            }
        }
        report("annotation 4 concurrent clients", malformed == 0 && lines == 80 && stored == 80,
               fmt("%d stored, %zu lines, %zu malformed", stored, lines, malformed));
    });
}

// ---- end to end ---------------------------------------------------------------------

void end_to_end(const fs::path& dir) {
    guarded("end-to-end synthetic run", [&] {
        const std::uint64_t seed = 1;
        auto t0 = SteadyClock::now();
        auto corpus = gen_synthetic(dir / "corpus", 600, 6, seed);
        auto [train, test] = split(corpus.manifest, 0.15, seed);
        std::vector<TripletLabel> train_labels, held_out;
        for (const auto& t : make_triplets(train, seed)) train_labels.push_back(oracle_label(t, corpus.params));
        for (const auto& t : make_triplets(test, seed + 1)) held_out.push_back(oracle_label(t, corpus.params));
        ImageStore store(corpus.manifest);
        TrainConfig cfg;
        cfg.variant = ModelVariant::vae_triplet;
        cfg.seed = seed;
        cfg.epochs = 40;
        std::cout << "     training vae_triplet on " << train.size() << " images, " << train_labels.size()
                  << " triplets, " << held_out.size() << " held-out triplets" << std::endl;
        auto result = train_model(cfg, store, train, train_labels, [&](const EpochMetrics& m) {
            std::cout << fmt("     epoch %2zu total %.4f triplet %.4f n+ %zu (%.0f s)", m.epoch, m.total, m.triplet,
                             m.n_plus, seconds_since(t0))
                      << std::endl;
        });
        double train_secs = seconds_since(t0);
        write_metric_log((dir / "e2e_metrics.csv").string(), result.log);
        save_checkpoint(result.checkpoint, (dir / "e2e.ckpt").string());
        const auto& model = result.checkpoint.model;

        const auto& log = result.log;
        report("end-to-end final total loss below initial", log.size() == 40 && log.back().total < log.front().total,
               fmt("epoch 1 %.4f, epoch %zu %.4f", log.front().total, log.size(), log.back().total));

        double sat = eval_triplet_satisfaction(model, store, held_out, 0.2);
        double sat0 = eval_triplet_satisfaction(model, store, held_out, 0.0);
        report("end-to-end held-out triplet satisfaction", sat >= 0.75,
               fmt("%.4f at margin 0.2 (%.4f at margin 0) over %zu triplets, need 0.75", sat, sat0, held_out.size()));

        std::vector<std::string> train_ids, test_ids, train_art, test_art;
        for (const auto& r : train) train_ids.push_back(r.id), train_art.push_back(r.artist);
        for (const auto& r : test) test_ids.push_back(r.id), test_art.push_back(r.artist);
        auto pred = knn_classify(to_matrix(embed_ids(model, store, train_ids)), train_art,
                                 to_matrix(embed_ids(model, store, test_ids)), 1);
        double acc = accuracy(pred, test_art);
        report("end-to-end 1-NN class accuracy", acc >= 0.5,
               fmt("%.4f on %zu held-out images, need 0.50 (chance %.3f)", acc, test.size(), 1.0 / 6));
        double secs = seconds_since(t0);
        report("end-to-end runtime", secs < 1800,
               fmt("%.0f s total, %.0f s training (target 1800 s)", secs, train_secs));

        guarded("interpolation endpoints", [&] {
            auto src = read_png(train[0].path), tgt = read_png(train[1].path);
            auto interp = interpolate(model, src, tgt, 5);
            auto vae = model.vae->cast<float>(false);
            auto direct = [&](const Image& img) { return to_image(vae.decode(vae.encode(image_tensor(img)).mean)); };
            bool ends = interp.frames.front().pixels == direct(src).pixels &&
                        interp.frames.back().pixels == direct(tgt).pixels;
            report("interpolation endpoints are bitwise reconstructions", ends, "t=0 and t=1 frames vs decode(mean)");
            const auto &zs = interp.latents.front(), &zt = interp.latents.back(), &zm = interp.latents[2];
            double worst = 0;
            for (std::size_t i = 0; i < zm.size(); ++i) {
                worst = std::max(worst, std::abs(static_cast<double>(zm[i]) - 0.5 * (static_cast<double>(zs[i]) + zt[i])));
            }
            report("interpolation mid-latent linearity", interp.t[2] == 0.5 && worst <= 1e-7,
                   fmt("t=%.2f, max |z - mean| %.3g (tol 1e-7)", interp.t[2], worst));
        });
        guarded("Grad-CAM on the trained checkpoint", [&] {
            gradcam_checks(model, "trained vae_triplet");
            gradcam_locality(model);
        });
        checkpoint_checks(result.checkpoint, dir);
    });
}

}  // namespace

int main(int argc, char** argv) {
    std::optional<fs::path> workdir;
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--only") {
            while (i + 1 < argc && argv[i + 1][0] != '-') only.insert(argv[++i]);
        } else {
            workdir = a;
        }
    }
    std::optional<TempDir> tmp;
    if (!workdir) {
        tmp.emplace("acceptance");
        workdir = tmp->path();
    }
    fs::create_directories(*workdir);
    auto want = [&](const char* group) { return only.empty() || only.count(group); };
    auto t0 = SteadyClock::now();

    if (want("losses")) loss_oracle();
    if (want("gradients")) gradient_suite();
    if (want("kl")) kl_properties();
    if (want("baseline")) baseline_943();
    if (want("tsne")) tsne_properties();
    if (want("gradcam")) {
        guarded("Grad-CAM", [] {
            gradcam_checks(StyleModel<float>::create(ModelVariant::vae_triplet, 128, 5), "initial vae_triplet");
        });
    }
    if (want("gradcam")) {
        guarded("Grad-CAM", [] {
            gradcam_checks(StyleModel<float>::create(ModelVariant::frozen_net_triplet, 128, 5),
                           "initial frozen_net_triplet");
        });
    }
    if (want("checkpoint")) checkpoint_checks(initial_checkpoint(TrainConfig{}), *workdir);
    if (want("annotate")) annotation_checks(*workdir);
    if (want("e2e")) end_to_end(*workdir);

    std::cout << fmt("%d failing, %.0f s", failures, seconds_since(t0)) << std::endl;
    return failures == 0 ? 0 : 1;
}
