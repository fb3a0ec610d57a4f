#pragma once

// The `stylespace` command line: one binary, one subcommand per pipeline step.
// run_cli takes its output streams as arguments so tests can drive it in-process.

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "stylespace/analysis.hpp"
#include "stylespace/data.hpp"
#include "stylespace/errors.hpp"
#include "stylespace/explain.hpp"
#include "stylespace/train.hpp"
// annotate.hpp pulls in httplib and must come after the Eigen users
#include "stylespace/annotate.hpp"

#include <CLI11.hpp>

namespace stylespace {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace cli {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

// Closest candidate within a third of the word's length (at least 2 edits).
inline std::string suggest(const std::string& word, const std::vector<std::string>& candidates) {
    std::string best;
    std::size_t best_d = std::max<std::size_t>(2, word.size() / 3) + 1;
    for (const auto& c : candidates) {
        auto d = edit_distance(word, c);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

// Summary line: `key=value` pairs on one line of stdout.
class Summary {
   public:
    template <typename V>
    Summary& add(const std::string& key, const V& value) {
        std::ostringstream s;
        s << std::setprecision(9) << value;
        items_.emplace_back(key, s.str());
        return *this;
    }
    void print(std::ostream& out) const {
        for (std::size_t i = 0; i < items_.size(); ++i) out << (i ? " " : "") << items_[i].first << '=' << items_[i].second;
        out << '\n';
    }

   private:
    std::vector<std::pair<std::string, std::string>> items_;
};

struct Context {
    std::ostream& out;
    std::shared_ptr<spdlog::logger> log;
};

inline std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto log = std::make_shared<spdlog::logger>("stylespace", sink);
    log->set_pattern("[%l] %v");
    const char* env = std::getenv("STYLESPACE_LOG");
    std::string level = env ? env : "info";
    if (level == "error") {
        log->set_level(spdlog::level::err);
    } else if (level == "debug") {
        log->set_level(spdlog::level::debug);
    } else {
        log->set_level(spdlog::level::info);
        if (level != "info") log->warn("STYLESPACE_LOG={} is not one of error, info, debug; using info", level);
    }
    return log;
}

inline void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw DataError(std::string("missing ") + what + " file " + path);
}

inline void ensure_parent(const std::string& path) {
    auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

inline Image read_input_image(const std::string& path) {
    require_file(path, "image");
    auto img = read_png(path, kImageChannels);
    if (img.height != kImageSize || img.width != kImageSize) {
        throw DataError(path + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        ", expected 64x64");
    }
    return img;
}

inline ModelVariant variant_option(const std::string& s) {
    try {
        return parse_variant(s);
    } catch (const std::exception&) {
        throw ContractError("unknown variant '" + s + "' (vae, vae_triplet, frozen_net, frozen_net_triplet)");
    }
}

// Reads `key=value` lines; '#' starts a comment. Keys may be spelled
// `batch_size`, `batch-size` or `--batch-size`.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    require_file(path, "config");
    std::ifstream in(path);
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ContractError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = trim(line.substr(0, eq));
        key.erase(0, key.find_first_not_of('-'));
        std::replace(key.begin(), key.end(), '_', '-');
        out.emplace_back(key, trim(line.substr(eq + 1)));
    }
    return out;
}

// Expands `--config FILE` into `--key=value` arguments placed before the
// explicit ones; keys given on the command line win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    auto given = [&](const std::string& key) {
        for (std::size_t i = 1; i < args.size(); ++i) {
            if (args[i] == "--" + key || args[i].rfind("--" + key + "=", 0) == 0) return true;
        }
        return false;
    };
    std::vector<std::string> injected;
    for (const auto& [key, value] : read_config_file(path)) {
        if (key != "config" && !given(key)) injected.push_back("--" + key + "=" + value);
    }
    args.insert(args.begin() + 1, injected.begin(), injected.end());
    return args;
}

inline std::vector<std::string> option_names(const CLI::App& app) {
    std::vector<std::string> names;
    for (const auto* opt : app.get_options()) {
        for (const auto& n : opt->get_lnames()) names.push_back("--" + n);
    }
    return names;
}

// Blocks SIGINT/SIGTERM in this thread (and threads it starts) and waits for one.
class SignalWaiter {
   public:
    SignalWaiter() {
        sigemptyset(&set_);
        sigaddset(&set_, SIGINT);
        sigaddset(&set_, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set_, &old_);
    }
    ~SignalWaiter() { pthread_sigmask(SIG_SETMASK, &old_, nullptr); }
    int wait() {
        int sig = 0;
        sigwait(&set_, &sig);
        return sig;
    }

   private:
    sigset_t set_{}, old_{};
};

// ---- subcommands ------------------------------------------------------------

struct SynthData {
    std::size_t n = 600, classes = 6;
    std::string out;
    void run(Context& cx, std::uint64_t seed) const {
        auto corpus = gen_synthetic(out, n, classes, seed);
        cx.log->info("wrote {} images in {} classes to {}", corpus.manifest.size(), classes, out);
        Summary()
            .add("images", corpus.manifest.size())
            .add("classes", classes)
            .add("manifest", (fs::path(out) / "manifest.jsonl").string())
            .add("params", (fs::path(out) / "params.jsonl").string())
            .print(cx.out);
    }
};

struct Ingest {
    std::string images, metadata, out;
    void run(Context& cx) const {
        if (!fs::is_directory(images)) throw DataError("missing image directory " + images);
        require_file(metadata, "metadata");
        auto r = ingest(images, metadata);
        for (const auto& w : r.warnings) cx.log->warn("{}", w);
        ensure_parent(out);
        save_manifest(out, r.manifest);
        Summary().add("images", r.manifest.size()).add("skipped", r.warnings.size()).add("manifest", out).print(cx.out);
    }
};

struct Split {
    std::string manifest, out_train, out_test;
    double test_fraction = 0.15;
    void run(Context& cx, std::uint64_t seed) const {
        require_file(manifest, "manifest");
        auto [train, test] = split(load_manifest(manifest), test_fraction, seed);
        ensure_parent(out_train);
        ensure_parent(out_test);
        save_manifest(out_train, train);
        save_manifest(out_test, test);
        Summary().add("train", train.size()).add("test", test.size()).print(cx.out);
    }
};

struct MakeTriplets {
    std::string manifest, out;
    void run(Context& cx, std::uint64_t seed) const {
        require_file(manifest, "manifest");
        auto triplets = make_triplets(load_manifest(manifest), seed);
        ensure_parent(out);
        save_triplets(out, triplets);
        Summary().add("triplets", triplets.size()).add("out", out).print(cx.out);
    }
};

struct OracleLabel {
    std::string triplets, params, out;
    void run(Context& cx) const {
        require_file(triplets, "triplets");
        require_file(params, "params");
        auto table = load_params(params);
        std::vector<TripletLabel> labels;
        for (const auto& t : load_triplets(triplets)) labels.push_back(oracle_label(t, table));
        ensure_parent(out);
        save_labels(out, labels);
        Summary().add("labels", labels.size()).add("out", out).print(cx.out);
    }
};

struct AnnotateServe {
    std::string manifest, triplets, labels, host = "127.0.0.1", static_dir;
    int port = kDefaultAnnotatePort;
    void run(Context& cx, std::uint64_t seed) const {
        require_file(manifest, "manifest");
        require_file(triplets, "triplets");
        if (!static_dir.empty() && !fs::is_directory(static_dir)) throw DataError("missing static directory " + static_dir);
        ensure_parent(labels);
        AnnotationService service(load_manifest(manifest), load_triplets(triplets), labels, seed);
        SignalWaiter signals;  // before the server thread starts, so it inherits the mask
        AnnotationServer server(service, static_dir);
        int bound = server.bind(host, port);
        std::thread thread([&] { server.serve(); });
        server.wait_until_ready();
        auto p = service.progress();
        cx.log->info("serving {} triplets ({} already labeled) on http://{}:{}/", p.total, p.labeled, host, bound);
        Summary().add("host", host).add("port", bound).add("labeled", p.labeled).add("total", p.total).print(cx.out);
        cx.out.flush();
        int sig = signals.wait();
        cx.log->info("signal {} received, shutting down", sig);
        server.stop();
        thread.join();
        p = service.progress();
        Summary().add("labeled", p.labeled).add("total", p.total).print(cx.out);
    }
};

struct Train {
    std::string manifest, labels, variant = "vae_triplet", out, log_path;
    TrainConfig config;
    void run(Context& cx, std::uint64_t seed) {
        require_file(manifest, "manifest");
        config.variant = variant_option(variant);
        config.seed = seed;
        config.validate();
        auto train = load_manifest(manifest);
        std::vector<TripletLabel> kept;
        if (!labels.empty()) {
            require_file(labels, "labels");
            auto all = load_labels(labels);
            kept = labels_within(all, train);
            if (kept.size() < all.size()) {
                cx.log->info("{} of {} labels reference images outside the manifest and are ignored",
                             all.size() - kept.size(), all.size());
            }
        }
        if (uses_triplets(config.variant) && kept.empty()) {
            throw ContractError(variant + " needs --labels with at least one triplet inside the manifest");
        }
        ImageStore store(train);
        cx.log->info("training {} on {} images, {} labels, {} epochs", variant, train.size(), kept.size(),
                     config.epochs);
        auto result = train_model(config, store, train, kept, [&](const EpochMetrics& m) {
            cx.log->info("epoch {}/{} total={:.6g} n_plus={}", m.epoch, config.epochs, m.total, m.n_plus);
        });
        ensure_parent(out);
        save_checkpoint(result.checkpoint, out);
        if (!log_path.empty()) {
            ensure_parent(log_path);
            write_metric_log(log_path, result.log);
        }
        Summary s;
        s.add("variant", variant).add("epochs", result.log.size());
        if (!result.log.empty()) {
            s.add("initial_total", result.log.front().total)
                .add("final_total", result.log.back().total)
                .add("final_n_plus", result.log.back().n_plus);
        }
        s.add("checkpoint", out).print(cx.out);
    }
};

struct EvalTriplets {
    std::string checkpoint, manifest, labels;
    double margin = 0.2;
    void run(Context& cx) const {
        require_file(checkpoint, "checkpoint");
        require_file(manifest, "manifest");
        require_file(labels, "labels");
        auto ckpt = load_checkpoint(checkpoint);
        auto m = load_manifest(manifest);
        auto l = load_labels(labels, &m);
        ImageStore store(m);
        double rate = eval_triplet_satisfaction(ckpt.model, store, l, margin);
        Summary().add("satisfaction", rate).add("labels", l.size()).add("margin", margin).print(cx.out);
    }
};

struct Embed {
    std::string checkpoint, manifest, out;
    void run(Context& cx) const {
        require_file(checkpoint, "checkpoint");
        require_file(manifest, "manifest");
        auto ckpt = load_checkpoint(checkpoint);
        auto r = embed_dataset(ckpt.model, load_manifest(manifest));
        for (const auto& e : r.errors) cx.log->warn("skipped {}: {}", e.id, e.message);
        ensure_parent(out);
        save_embeddings(out, r.embeddings);
        Summary()
            .add("embeddings", r.embeddings.size())
            .add("errors", r.errors.size())
            .add("dim", r.embeddings.empty() ? 0 : r.embeddings.front().vector.size())
            .add("out", out)
            .print(cx.out);
    }
};

struct Project {
    std::string embeddings, out;
    double perplexity = 30;
    std::size_t iterations = 1000, top_artists = 0;
    void run(Context& cx, std::uint64_t seed) const {
        require_file(embeddings, "embeddings");
        auto points = load_embeddings(embeddings);
        if (top_artists > 0) {
            std::vector<std::string> artists;
            for (const auto& p : points) artists.push_back(p.artist);
            auto keep = top_labels(artists, top_artists);
            std::erase_if(points, [&](const StyleEmbedding& p) {
                return std::find(keep.begin(), keep.end(), p.artist) == keep.end();
            });
        }
        if (points.size() < 4) throw DataError("t-SNE needs at least 4 embeddings, got " + std::to_string(points.size()));
        TsneConfig cfg;
        cfg.iterations = iterations;
        cfg.seed = seed;
        // strictly below (n-1)/3 so that n > 3 * perplexity holds
        double limit = std::nextafter(static_cast<double>(points.size() - 1) / 3.0, 0.0);
        cfg.perplexity = std::min(perplexity, limit);
        if (cfg.perplexity < perplexity) {
            cx.log->warn("perplexity {} is too large for {} points; using {:.4g}", perplexity, points.size(),
                         cfg.perplexity);
        }
        auto r = project_2d(to_matrix(points), cfg);
        ensure_parent(out);
        save_projection_csv(out, points, r.Y);
        Summary()
            .add("points", points.size())
            .add("perplexity", cfg.perplexity)
            .add("initial_kl", r.initial_kl)
            .add("final_kl", r.final_kl)
            .add("out", out)
            .print(cx.out);
    }
};

struct Classify {
    std::string train, test, predictions;
    std::size_t k = 1;
    void run(Context& cx) const {
        require_file(train, "train embeddings");
        require_file(test, "test embeddings");
        auto a = load_embeddings(train), b = load_embeddings(test);
        if (a.empty() || b.empty()) throw DataError("classify needs non-empty train and test embeddings");
        std::vector<std::string> labels, truth;
        for (const auto& e : a) labels.push_back(e.artist);
        for (const auto& e : b) truth.push_back(e.artist);
        auto predicted = knn_classify(to_matrix(a), labels, to_matrix(b), k);
        if (!predictions.empty()) {
            ensure_parent(predictions);
            std::ofstream p(predictions);
            if (!p) throw DataError("cannot write " + predictions);
            p << "id,artist,predicted\n";
            for (std::size_t i = 0; i < b.size(); ++i) {
                p << csv_field(b[i].id) << ',' << csv_field(truth[i]) << ',' << csv_field(predicted[i]) << '\n';
            }
        }
        Summary().add("accuracy", accuracy(predicted, truth)).add("n_test", b.size()).add("k", k).print(cx.out);
    }
};

struct Interpolate {
    std::string checkpoint, source, target, out;
    std::size_t steps = 8;
    void run(Context& cx) const {
        require_file(checkpoint, "checkpoint");
        auto src = read_input_image(source), tgt = read_input_image(target);
        auto ckpt = load_checkpoint(checkpoint);
        auto r = interpolate(ckpt.model, src, tgt, steps);
        fs::create_directories(out);
        for (std::size_t i = 0; i < r.frames.size(); ++i) {
            write_png((fs::path(out) / frame_name(i, r.t[i])).string(), r.frames[i]);
        }
        Summary().add("frames", r.frames.size()).add("out", out).print(cx.out);
    }
};

struct Cam {
    std::string checkpoint, anchor, positive, negative, out;
    std::size_t layer = 0;
    double margin = 0.2;
    void run(Context& cx) const {
        require_file(checkpoint, "checkpoint");
        std::array<std::string, 3> paths = {anchor, positive, negative};
        std::array<Image, 3> images;
        std::array<BasicTensor<float>, 3> tensors;
        std::array<std::string, 3> ids;
        for (int i = 0; i < 3; ++i) {
            images[i] = read_input_image(paths[i]);
            tensors[i] = image_tensor(images[i]);
            ids[i] = fs::path(paths[i]).stem().string();
        }
        auto ckpt = load_checkpoint(checkpoint);
        auto r = grad_cam<float>(ckpt.model, tensors, layer, margin, ids);
        if (r.inactive) cx.log->info("the triplet's hinge is inactive; maps are all zero");
        fs::create_directories(out);
        const char* roles[3] = {"anchor", "positive", "negative"};
        for (int i = 0; i < 3; ++i) {
            auto map = map_image(r.maps[i]);
            write_png((fs::path(out) / (std::string(roles[i]) + "_map.png")).string(), map);
            write_png((fs::path(out) / (std::string(roles[i]) + "_overlay.png")).string(), overlay(images[i], map));
        }
        Summary()
            .add("loss", r.loss)
            .add("inactive", r.inactive ? "true" : "false")
            .add("layer", r.maps[0].target_layer)
            .add("out", out)
            .print(cx.out);
    }
};

}  // namespace cli

// Runs one subcommand; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    using namespace cli;
    auto log = make_logger(err);
    Context cx{out, log};

    CLI::App app{"Learned style embeddings: data preparation, training and analysis.", "stylespace"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough(false);

    std::uint64_t seed = 0;
    std::string config;
    auto sub = [&](const char* name, const char* help) {
        auto* s = app.add_subcommand(name, help);
        s->add_option("--seed", seed, "Seed for all randomness");
        s->add_option("--config", config, "key=value file of flag defaults; explicit flags win");
        return s;
    };

    SynthData synth;
    auto* s_synth = sub("synth-data", "Generate the synthetic portrait corpus");
    s_synth->add_option("--n", synth.n, "Number of images");
    s_synth->add_option("--classes", synth.classes, "Number of style classes");
    s_synth->add_option("--out", synth.out, "Output directory")->required();

    Ingest ing;
    auto* s_ingest = sub("ingest", "Build a manifest from images and an id,path,artist,date CSV");
    s_ingest->add_option("--images", ing.images, "Image directory")->required();
    s_ingest->add_option("--metadata", ing.metadata, "Metadata CSV")->required();
    s_ingest->add_option("--out", ing.out, "Output manifest (JSONL)")->required();

    Split spl;
    auto* s_split = sub("split", "Split a manifest into train and test images");
    s_split->add_option("--manifest", spl.manifest, "Input manifest")->required();
    s_split->add_option("--test-fraction", spl.test_fraction, "Share of images held out");
    s_split->add_option("--out-train", spl.out_train, "Train manifest")->required();
    s_split->add_option("--out-test", spl.out_test, "Test manifest")->required();

    MakeTriplets mk;
    auto* s_mk = sub("make-triplets", "One unlabeled triplet per image as anchor");
    s_mk->add_option("--manifest", mk.manifest, "Input manifest")->required();
    s_mk->add_option("--out", mk.out, "Output triplets (JSONL)")->required();

    OracleLabel orc;
    auto* s_orc = sub("oracle-label", "Label synthetic triplets from their generating parameters");
    s_orc->add_option("--triplets", orc.triplets, "Unlabeled triplets")->required();
    s_orc->add_option("--params", orc.params, "params.jsonl from synth-data")->required();
    s_orc->add_option("--out", orc.out, "Output labels (JSONL)")->required();

    AnnotateServe srv;
    auto* s_srv = sub("annotate-serve", "Serve triplets to human annotators over HTTP until interrupted");
    s_srv->add_option("--manifest", srv.manifest, "Manifest with the images")->required();
    s_srv->add_option("--triplets", srv.triplets, "Triplet queue")->required();
    s_srv->add_option("--labels", srv.labels, "Label file to append to")->required();
    s_srv->add_option("--host", srv.host, "Bind address");
    s_srv->add_option("--port", srv.port, "Port (0 picks a free one)");
    s_srv->add_option("--static", srv.static_dir, "Directory with the annotation UI");

    Train tr;
    auto& w = tr.config.weights;
    auto* s_tr = sub("train", "Train a model variant and write a checkpoint");
    s_tr->add_option("--manifest", tr.manifest, "Train manifest")->required();
    s_tr->add_option("--labels", tr.labels, "Triplet labels (required by triplet variants)");
    s_tr->add_option("--variant", tr.variant, "vae, vae_triplet, frozen_net or frozen_net_triplet");
    s_tr->add_option("--epochs", tr.config.epochs, "Epochs");
    s_tr->add_option("--batch-size", tr.config.batch_size, "Triplets per step");
    s_tr->add_option("--latent-dim", tr.config.latent_dim, "VAE latent size");
    s_tr->add_option("--lr", tr.config.lr, "Adam learning rate");
    s_tr->add_option("--beta1", tr.config.beta1, "Adam beta1");
    s_tr->add_option("--beta2", tr.config.beta2, "Adam beta2");
    s_tr->add_option("--kl-weight", w.kl, "KL weight");
    s_tr->add_option("--recon-weight", w.recon, "Reconstruction weight");
    s_tr->add_option("--triplet-weight", w.triplet, "Triplet weight");
    s_tr->add_option("--percep-weight", w.percep, "Perceptual weight");
    s_tr->add_option("--margin", w.margin, "Triplet margin");
    s_tr->add_option("--out", tr.out, "Output checkpoint")->required();
    s_tr->add_option("--log", tr.log_path, "Per-epoch metric CSV");

    EvalTriplets ev;
    auto* s_ev = sub("eval-triplets", "Share of labeled triplets a checkpoint satisfies");
    s_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
    s_ev->add_option("--manifest", ev.manifest, "Manifest with the labeled images")->required();
    s_ev->add_option("--labels", ev.labels, "Triplet labels")->required();
    s_ev->add_option("--margin", ev.margin, "Margin a triplet must clear");

    Embed emb;
    auto* s_emb = sub("embed", "Export one style embedding per manifest image");
    s_emb->add_option("--checkpoint", emb.checkpoint, "Checkpoint")->required();
    s_emb->add_option("--manifest", emb.manifest, "Manifest")->required();
    s_emb->add_option("--out", emb.out, "Output embeddings (JSONL)")->required();

    Project prj;
    auto* s_prj = sub("project", "PCA + t-SNE projection of embeddings to 2-D");
    s_prj->add_option("--embeddings", prj.embeddings, "Embeddings (JSONL)")->required();
    s_prj->add_option("--perplexity", prj.perplexity, "t-SNE perplexity, clamped below (n-1)/3");
    s_prj->add_option("--iterations", prj.iterations, "t-SNE iterations");
    s_prj->add_option("--top-artists", prj.top_artists, "Keep only the most frequent artists (0 keeps all)");
    s_prj->add_option("--out", prj.out, "Output CSV id,artist,x,y")->required();

    Classify cls;
    auto* s_cls = sub("classify", "k-NN artist classification of test embeddings");
    s_cls->add_option("--train", cls.train, "Labeled embeddings")->required();
    s_cls->add_option("--test", cls.test, "Query embeddings")->required();
    s_cls->add_option("--k", cls.k, "Neighbours");
    s_cls->add_option("--predictions", cls.predictions, "Optional CSV of predictions");

    Interpolate itp;
    auto* s_itp = sub("interpolate", "Decode a straight line between two images' latent means");
    s_itp->add_option("--checkpoint", itp.checkpoint, "VAE checkpoint")->required();
    s_itp->add_option("--source", itp.source, "Source PNG")->required();
    s_itp->add_option("--target", itp.target, "Target PNG")->required();
    s_itp->add_option("--steps", itp.steps, "Frames including both ends");
    s_itp->add_option("--out", itp.out, "Output directory")->required();

    Cam cam;
    auto* s_cam = sub("cam", "Grad-CAM maps of one triplet");
    s_cam->add_option("--checkpoint", cam.checkpoint, "Checkpoint")->required();
    s_cam->add_option("--anchor", cam.anchor, "Anchor PNG")->required();
    s_cam->add_option("--positive", cam.positive, "Positive PNG")->required();
    s_cam->add_option("--negative", cam.negative, "Negative PNG")->required();
    s_cam->add_option("--layer", cam.layer, "Conv block, counted from 1 (0 = last)");
    s_cam->add_option("--margin", cam.margin, "Triplet margin");
    s_cam->add_option("--out", cam.out, "Output directory")->required();

    std::vector<std::string> names;
    for (const auto* s : app.get_subcommands({})) names.push_back(s->get_name());

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (!args.empty() && args[0].rfind("-", 0) != 0 &&
            std::find(names.begin(), names.end(), args[0]) == names.end()) {
            err << "unknown subcommand '" << args[0] << "'";
            if (auto s = suggest(args[0], names); !s.empty()) err << "; did you mean '" << s << "'?";
            err << "\nRun with --help for the list of subcommands.\n";
            return kExitUsage;
        }
        if (!args.empty()) args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        // a misspelt flag often surfaces as a missing required one
        for (const auto* s : app.get_subcommands()) {
            auto candidates = option_names(*s);
            for (const auto& extra : s->remaining()) {
                std::string flag = extra.substr(0, extra.find('='));
                if (flag.rfind("-", 0) != 0) continue;
                err << "unknown flag '" << flag << "'";
                if (auto best = suggest(flag, candidates); !best.empty()) err << "; did you mean '" << best << "'?";
                err << '\n';
            }
        }
        return kExitUsage;
    } catch (const std::exception& e) {
        // config file problems
        log->error("{}", e.what());
        return dynamic_cast<const DataError*>(&e) ? kExitData : kExitUsage;
    }

    const auto* chosen = app.get_subcommands().front();
    const std::string name = chosen->get_name();
    log->debug("subcommand {} seed={}", name, seed);
    try {
        if (chosen == s_synth) synth.run(cx, seed);
        else if (chosen == s_ingest) ing.run(cx);
        else if (chosen == s_split) spl.run(cx, seed);
        else if (chosen == s_mk) mk.run(cx, seed);
        else if (chosen == s_orc) orc.run(cx);
        else if (chosen == s_srv) srv.run(cx, seed);
        else if (chosen == s_tr) tr.run(cx, seed);
        else if (chosen == s_ev) ev.run(cx);
        else if (chosen == s_emb) emb.run(cx);
        else if (chosen == s_prj) prj.run(cx, seed);
        else if (chosen == s_cls) cls.run(cx);
        else if (chosen == s_itp) itp.run(cx);
        else if (chosen == s_cam) cam.run(cx);
    } catch (const NumericError& e) {
        log->error("{}: {}", name, e.what());
        return kExitNumeric;
    } catch (const ContractError& e) {
        log->error("{}: {}", name, e.what());
        return kExitUsage;
    } catch (const DomainError& e) {
        log->error("{}: {}", name, e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        // DataError, FormatError, DimensionError, I/O and JSON failures
        log->error("{}: {}", name, e.what());
        return kExitData;
    }
    return kExitOk;
}

}  // namespace stylespace
