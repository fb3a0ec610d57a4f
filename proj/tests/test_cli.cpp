#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "stylespace/cli.hpp"
#include "tmpdir.hpp"

using namespace stylespace;
using stylespace::testing::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string out, err;

    std::map<std::string, std::string> summary() const {
        std::map<std::string, std::string> kv;
        std::istringstream lines(out);
        std::string last;
        for (std::string line; std::getline(lines, line);) last = line;
        std::istringstream words(last);
        for (std::string w; words >> w;) {
            auto eq = w.find('=');
            if (eq != std::string::npos) kv[w.substr(0, eq)] = w.substr(eq + 1);
        }
        return kv;
    }
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "stylespace");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kSubcommands = {"synth-data", "ingest",       "split",         "make-triplets",
                                               "oracle-label", "annotate-serve", "train",     "eval-triplets",
                                               "embed",      "project",      "classify",      "interpolate",
                                               "cam"};

// A tiny corpus pushed through the data steps once for the whole suite.
struct Pipeline {
    TempDir dir{"cli"};
    std::string p(const std::string& name) const { return (dir / name).string(); }

    Pipeline() {
        expect_ok({"synth-data", "--n", "24", "--classes", "3", "--seed", "2", "--out", p("corpus")});
        expect_ok({"split", "--manifest", p("corpus/manifest.jsonl"), "--test-fraction", "0.25", "--seed", "2",
                   "--out-train", p("train.jsonl"), "--out-test", p("test.jsonl")});
        expect_ok({"make-triplets", "--manifest", p("train.jsonl"), "--seed", "3", "--out", p("triplets.jsonl")});
        expect_ok({"oracle-label", "--triplets", p("triplets.jsonl"), "--params", p("corpus/params.jsonl"), "--out",
                   p("labels.jsonl")});
        expect_ok(train_args("vae_triplet", "model.ckpt"));
    }

    std::vector<std::string> train_args(const std::string& variant, const std::string& out) const {
        return {"train",        "--manifest", p("train.jsonl"), "--labels",  p("labels.jsonl"), "--variant",
                variant,        "--epochs",   "1",              "--latent-dim", "8",             "--batch-size",
                "6",            "--seed",     "4",              "--out",     p(out),            "--log",
                p(out + ".csv")};
    }

    static Run expect_ok(std::vector<std::string> args) {
        auto r = run(args);
        EXPECT_EQ(r.code, 0) << args[0] << ": " << r.err;
        return r;
    }
};

Pipeline& pipeline() {
    static Pipeline p;
    return p;
}

}  // namespace

TEST(Cli, EverySubcommandHasHelpWithDefaults) {
    for (const auto& name : kSubcommands) {
        auto r = run({name, "--help"});
        EXPECT_EQ(r.code, 0) << name;
        EXPECT_NE(r.out.find("--seed UINT [0]"), std::string::npos) << name << "\n" << r.out;
        EXPECT_NE(r.out.find("--config"), std::string::npos) << name;
    }
    auto top = run({"--help"});
    EXPECT_EQ(top.code, 0);
    for (const auto& name : kSubcommands) EXPECT_NE(top.out.find(name), std::string::npos) << name;
    auto train = run({"train", "--help"}).out;
    for (const char* flag : {"--epochs UINT [40]", "--lr FLOAT [0.001]", "--margin FLOAT [0.2]",
                             "--variant TEXT [vae_triplet]", "--batch-size UINT [8]"}) {
        EXPECT_NE(train.find(flag), std::string::npos) << flag;
    }
}

TEST(Cli, UsageErrorsSuggest) {
    auto sub = run({"trian"});
    EXPECT_EQ(sub.code, 1);
    EXPECT_NE(sub.err.find("did you mean 'train'"), std::string::npos) << sub.err;
    auto flag = run({"classify", "--trian", "a", "--test", "b"});
    EXPECT_EQ(flag.code, 1);
    EXPECT_NE(flag.err.find("did you mean '--train'"), std::string::npos) << flag.err;
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"synth-data"}).code, 1);  // --out is required
    EXPECT_EQ(run({"synth-data", "--n", "lots", "--out", "x"}).code, 1);
}

TEST(Cli, MissingInputsExitTwo) {
    TempDir dir("cli_missing");
    auto r = run({"make-triplets", "--manifest", (dir / "none.jsonl").string(), "--out", (dir / "t").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("none.jsonl"), std::string::npos);
    EXPECT_EQ(run({"classify", "--train", (dir / "a").string(), "--test", (dir / "b").string()}).code, 2);
    EXPECT_EQ(run({"embed", "--checkpoint", (dir / "c").string(), "--manifest", (dir / "m").string(), "--out",
                   (dir / "e").string()})
                  .code,
              2);
}

TEST(Cli, SynthDataCountsAndConfigFile) {
    TempDir dir("cli_synth");
    auto r = run({"synth-data", "--n", "12", "--classes", "3", "--out", (dir / "a").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.summary()["images"], "12");
    EXPECT_EQ(load_manifest(dir / "a" / "manifest.jsonl").size(), 12u);

    std::ofstream(dir / "cfg.txt") << "# corpus size\nn = 9\nclasses=2\n--seed=5\n";
    auto c = run({"synth-data", "--config", (dir / "cfg.txt").string(), "--classes", "3", "--out",
                  (dir / "b").string()});
    ASSERT_EQ(c.code, 0) << c.err;
    EXPECT_EQ(c.summary()["images"], "9");
    EXPECT_EQ(c.summary()["classes"], "3");  // the flag beats the file

    std::ofstream(dir / "bad.txt") << "nn=3\n";
    auto bad = run({"synth-data", "--config", (dir / "bad.txt").string(), "--out", (dir / "c").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("did you mean '--n'"), std::string::npos) << bad.err;
    EXPECT_EQ(run({"synth-data", "--config", (dir / "none.txt").string(), "--out", (dir / "d").string()}).code, 2);
}

TEST(Cli, SeedDefaultsToZeroAndDrivesOutput) {
    TempDir dir("cli_seed");
    auto m = [&](const std::string& name, std::vector<std::string> extra) {
        std::vector<std::string> args = {"synth-data", "--n", "6", "--classes", "2", "--out", (dir / name).string()};
        args.insert(args.end(), extra.begin(), extra.end());
        EXPECT_EQ(run(args).code, 0);
        return slurp(dir / name / "params.jsonl");
    };
    EXPECT_EQ(m("a", {}), m("b", {"--seed", "0"}));
    EXPECT_NE(m("a", {}), m("c", {"--seed", "1"}));
}

TEST(Cli, PipelineDataSteps) {
    auto& pl = pipeline();
    auto train = load_manifest(pl.p("train.jsonl"));
    auto test = load_manifest(pl.p("test.jsonl"));
    EXPECT_EQ(train.size(), 18u);
    EXPECT_EQ(test.size(), 6u);
    auto labels = load_labels(pl.p("labels.jsonl"), &train);
    EXPECT_EQ(labels.size(), train.size());
    for (const auto& l : labels) EXPECT_EQ(l.annotator, "oracle");
}

TEST(Cli, TrainIsDeterministicAndLogs) {
    auto& pl = pipeline();
    auto again = Pipeline::expect_ok(pl.train_args("vae_triplet", "again.ckpt"));
    EXPECT_EQ(slurp(pl.p("model.ckpt")), slurp(pl.p("again.ckpt")));
    EXPECT_EQ(again.summary()["epochs"], "1");
    EXPECT_EQ(read_metric_log(pl.p("model.ckpt.csv")).size(), 1u);
    auto ckpt = load_checkpoint(pl.p("model.ckpt"));
    EXPECT_EQ(ckpt.config.seed, 4u);
    EXPECT_EQ(ckpt.config.latent_dim, 8u);
}

TEST(Cli, TrainFailures) {
    auto& pl = pipeline();
    auto args = pl.train_args("vae_triplet", "nan.ckpt");
    args.insert(args.end(), {"--lr", "1e30"});
    auto nan = run(args);
    EXPECT_EQ(nan.code, 3) << nan.err;
    EXPECT_NE(nan.err.find("epoch 1 step"), std::string::npos) << nan.err;

    EXPECT_EQ(run(pl.train_args("cubist", "x.ckpt")).code, 1);
    auto nolabels = run({"train", "--manifest", pl.p("train.jsonl"), "--out", pl.p("y.ckpt")});
    EXPECT_EQ(nolabels.code, 1);
    auto neg = pl.train_args("vae", "z.ckpt");
    neg.insert(neg.end(), {"--margin", "-1"});
    EXPECT_EQ(run(neg).code, 1);
}

TEST(Cli, EvalEmbedClassifyProject) {
    auto& pl = pipeline();
    auto ev = Pipeline::expect_ok({"eval-triplets", "--checkpoint", pl.p("model.ckpt"), "--manifest",
                                   pl.p("train.jsonl"), "--labels", pl.p("labels.jsonl")});
    double rate = std::stod(ev.summary()["satisfaction"]);
    EXPECT_GE(rate, 0.0);
    EXPECT_LE(rate, 1.0);

    for (const char* part : {"train", "test"}) {
        auto e = Pipeline::expect_ok({"embed", "--checkpoint", pl.p("model.ckpt"), "--manifest",
                                      pl.p(std::string(part) + ".jsonl"), "--out", pl.p(std::string(part) + ".emb")});
        EXPECT_EQ(e.summary()["dim"], "8");
        EXPECT_EQ(e.summary()["errors"], "0");
    }
    auto c = Pipeline::expect_ok({"classify", "--train", pl.p("train.emb"), "--test", pl.p("test.emb"), "--k", "1",
                                  "--predictions", pl.p("pred.csv")});
    double acc = std::stod(c.summary()["accuracy"]);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(c.summary()["n_test"], "6");

    // 18 points cannot carry perplexity 30; the CLI clamps below (n-1)/3
    auto pr = Pipeline::expect_ok({"project", "--embeddings", pl.p("train.emb"), "--out", pl.p("proj.csv")});
    EXPECT_NEAR(std::stod(pr.summary()["perplexity"]), 17.0 / 3.0, 1e-6);
    EXPECT_LT(std::stod(pr.summary()["final_kl"]), std::stod(pr.summary()["initial_kl"]));
    EXPECT_NE(pr.err.find("too large"), std::string::npos);
    auto csv = slurp(pl.p("proj.csv"));
    EXPECT_EQ(csv.rfind("id,artist,x,y\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 19);

    auto top = Pipeline::expect_ok({"project", "--embeddings", pl.p("train.emb"), "--iterations", "300",
                                    "--top-artists", "2", "--out", pl.p("proj2.csv")});
    EXPECT_LT(std::stoi(top.summary()["points"]), 18);
}

TEST(Cli, InterpolateAndCam) {
    auto& pl = pipeline();
    auto train = load_manifest(pl.p("train.jsonl"));
    auto it = Pipeline::expect_ok({"interpolate", "--checkpoint", pl.p("model.ckpt"), "--source", train[0].path,
                                   "--target", train[1].path, "--steps", "4", "--out", pl.p("interp")});
    EXPECT_EQ(it.summary()["frames"], "4");
    EXPECT_TRUE(fs::exists(fs::path(pl.p("interp")) / frame_name(0, 0.0)));
    EXPECT_TRUE(fs::exists(fs::path(pl.p("interp")) / frame_name(3, 1.0)));
    EXPECT_EQ(run({"interpolate", "--checkpoint", pl.p("model.ckpt"), "--source", train[0].path, "--target",
                   train[1].path, "--steps", "1", "--out", pl.p("interp1")})
                  .code,
              1);

    auto cam = Pipeline::expect_ok({"cam", "--checkpoint", pl.p("model.ckpt"), "--anchor", train[0].path,
                                    "--positive", train[1].path, "--negative", train[2].path, "--margin", "100",
                                    "--out", pl.p("cam")});
    EXPECT_EQ(cam.summary()["inactive"], "false");
    EXPECT_EQ(cam.summary()["layer"], "4");
    for (const char* f : {"anchor_map.png", "positive_overlay.png", "negative_map.png"}) {
        EXPECT_TRUE(fs::exists(fs::path(pl.p("cam")) / f)) << f;
    }
    auto map = read_png((fs::path(pl.p("cam")) / "anchor_map.png").string(), 1);
    EXPECT_EQ(map.height, 64u);
    EXPECT_EQ(run({"cam", "--checkpoint", pl.p("model.ckpt"), "--anchor", train[0].path, "--positive", train[1].path,
                   "--negative", train[2].path, "--layer", "9", "--out", pl.p("cam9")})
                  .code,
              1);
}

TEST(Cli, FrozenNetHasNothingToInterpolate) {
    auto& pl = pipeline();
    auto r = Pipeline::expect_ok(pl.train_args("frozen_net", "frozen.ckpt"));
    EXPECT_EQ(r.summary()["epochs"], "0");
    auto train = load_manifest(pl.p("train.jsonl"));
    auto it = run({"interpolate", "--checkpoint", pl.p("frozen.ckpt"), "--source", train[0].path, "--target",
                   train[1].path, "--out", pl.p("nointerp")});
    EXPECT_EQ(it.code, 1);
    EXPECT_NE(it.err.find("no decoder"), std::string::npos);
    auto e = Pipeline::expect_ok({"embed", "--checkpoint", pl.p("frozen.ckpt"), "--manifest", pl.p("test.jsonl"),
                                  "--out", pl.p("frozen.emb")});
    EXPECT_EQ(e.summary()["dim"], std::to_string(kFeatureDim));  // raw features, no head
}

TEST(Cli, CorruptCheckpointExitsTwo) {
    auto& pl = pipeline();
    auto bytes = slurp(pl.p("model.ckpt"));
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(pl.p("bad.ckpt"), std::ios::binary) << bytes;
    auto r = run({"embed", "--checkpoint", pl.p("bad.ckpt"), "--manifest", pl.p("test.jsonl"), "--out",
                  pl.p("bad.emb")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST(Cli, LogLevelFromEnvironment) {
    TempDir dir("cli_log");
    ::setenv("STYLESPACE_LOG", "error", 1);
    auto quiet = run({"synth-data", "--n", "4", "--classes", "2", "--out", (dir / "a").string()});
    ::setenv("STYLESPACE_LOG", "debug", 1);
    auto loud = run({"synth-data", "--n", "4", "--classes", "2", "--out", (dir / "b").string()});
    ::unsetenv("STYLESPACE_LOG");
    EXPECT_EQ(quiet.err, "");
    EXPECT_NE(loud.err.find("[debug]"), std::string::npos);
    EXPECT_NE(loud.err.find("[info]"), std::string::npos);
}

TEST(Cli, IngestReportsSkippedRows) {
    auto& pl = pipeline();
    auto m = load_manifest(pl.p("test.jsonl"));
    TempDir dir("cli_ingest");
    fs::create_directories(dir / "img");
    std::ofstream csv(dir / "meta.csv");
    csv << "id,path,artist,date\n";
    for (const auto& r : m) {
        fs::copy_file(r.path, dir / "img" / fs::path(r.path).filename());
        csv << r.id << ',' << fs::path(r.path).filename().string() << ",Anon,c. 1890\n";
    }
    csv << "ghost,ghost.png,Nobody,1900\n";
    csv.close();
    auto r = run({"ingest", "--images", (dir / "img").string(), "--metadata", (dir / "meta.csv").string(), "--out",
                  (dir / "m.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.summary()["images"], std::to_string(m.size()));
    EXPECT_EQ(r.summary()["skipped"], "1");
}
