#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lcf/checkpoint.hpp"
#include "lcf/run_config.hpp"

using namespace lcf;
namespace fs = std::filesystem;

#ifndef LCFORMER_BIN
#error "LCFORMER_BIN must point at the lcformer executable"
#endif

// ---------------------------------------------------------------------------
// RunConfig

TEST(RunConfig, EveryKeyHasATypedDefault) {
    RunConfig rc;
    EXPECT_EQ(rc.size("data.num_utts"), 300u);
    EXPECT_EQ(rc.size("model.max_layers"), 8u);
    EXPECT_TRUE(rc.flag("model.share_params"));
    EXPECT_DOUBLE_EQ(rc.real("mask.ratio"), 0.15);
    EXPECT_EQ(rc.text("train.depth_mode"), "uniform");
    for (const auto& k : key_registry()) EXPECT_NO_THROW(rc.text(k.key)) << k.key;
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
    RunConfig rc;
    EXPECT_THROW(rc.set("model.depth", "3"), ConfigError);
    EXPECT_THROW(rc.set("nosection", "3"), ConfigError);
    EXPECT_THROW(rc.set("model.dim", "abc"), ConfigError);
    EXPECT_THROW(rc.set("model.dim", "-4"), ConfigError);
    EXPECT_THROW(rc.set("model.dim", "4.5"), ConfigError);
    EXPECT_THROW(rc.set("mask.ratio", "x"), ConfigError);
    EXPECT_THROW(rc.set("model.share_params", "maybe"), ConfigError);
    EXPECT_THROW(rc.set("train.depth_mode", "random"), ConfigError);
    EXPECT_THROW(rc.size("mask.ratio"), ContractError);  // reading with the wrong type is a caller bug
    EXPECT_THROW(rc.text("train.nope"), ConfigError);
}

TEST(RunConfig, ValuesAreCanonicalized) {
    RunConfig rc;
    rc.set("model.share_params", " False ");
    EXPECT_FALSE(rc.flag("model.share_params"));
    rc.set("model.dim", " 32 ");
    EXPECT_EQ(rc.size("model.dim"), 32u);
}

TEST(RunConfig, DeskPresetsPinDepthPolicy) {
    RunConfig rc;
    rc.apply_preset("desk-shared-u28");
    auto d = rc.depth();
    EXPECT_EQ(d.mode, DepthMode::uniform);
    EXPECT_EQ(d.min_layers, 2u);
    EXPECT_EQ(d.max_layers, 8u);
    EXPECT_TRUE(rc.model().share_params);

    RunConfig un;
    un.apply_preset("desk-unshared-8");
    d = un.depth();
    EXPECT_EQ(d.mode, DepthMode::fixed);
    EXPECT_EQ(d.fixed_depth, 8u);
    EXPECT_FALSE(un.model().share_params);
    EXPECT_THROW(un.apply_preset("desk"), ConfigError);
}

TEST(RunConfig, PaperPresetConstants) {
    RunConfig rc;
    rc.apply_preset("paper");
    const auto m = rc.model();
    EXPECT_EQ(m.model_dim, 512u);
    EXPECT_EQ(m.num_heads, 4u);
    EXPECT_EQ(m.ff_dim, 2048u);
    EXPECT_EQ(m.conv_kernel, 15u);
    EXPECT_EQ(m.max_layers, 8u);
    EXPECT_EQ(m.input_dim, 80u);
    EXPECT_EQ(rc.train().warmup_steps, 8000u);
    EXPECT_TRUE(rc.flag("train.emit_only"));
}

TEST(RunConfig, FileSyntaxWithSectionsAndComments) {
    RunConfig rc;
    rc.apply_text("# top comment\n[model]\ndim = 24   # inline\nheads=3\n\n[train]\nseed = 9\ndata.num_utts = 12\n");
    EXPECT_EQ(rc.size("model.dim"), 24u);
    EXPECT_EQ(rc.size("model.heads"), 3u);
    EXPECT_EQ(rc.size("train.seed"), 9u);
    EXPECT_EQ(rc.size("data.num_utts"), 12u);
    EXPECT_THROW(rc.apply_text("dim = 3\n"), ConfigError);
    EXPECT_THROW(rc.apply_text("[model\n"), ConfigError);
    EXPECT_THROW(rc.apply_text("[model]\ndim\n"), ConfigError);
    try {
        rc.apply_text("[model]\n\nwidth = 3\n", "run.ini");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run.ini:3"), std::string::npos) << e.what();
    }
}

TEST(RunConfig, EmitRoundTrips) {
    RunConfig rc;
    rc.apply_preset("desk-unshared-8");
    rc.set("mask.ratio", "0.2");
    rc.set("diag.utterance", "utt00007");
    RunConfig back;
    back.apply_text(rc.emit());
    EXPECT_EQ(back, rc);
    EXPECT_EQ(back.emit(), rc.emit());
}

TEST(RunConfig, OverridesAcceptFlagForm) {
    RunConfig rc;
    rc.apply_override("--model.dim=40");
    rc.apply_override("train.seed=3");
    EXPECT_EQ(rc.size("model.dim"), 40u);
    EXPECT_EQ(rc.size("train.seed"), 3u);
    EXPECT_THROW(rc.apply_override("--model.dim"), ConfigError);
    EXPECT_THROW(rc.apply_override("--model.bogus=1"), ConfigError);
}

TEST(RunConfig, ThreadsEnvironmentVariable) {
    RunConfig rc;
    ::setenv("LC_THREADS", "3", 1);
    apply_thread_env(rc);
    EXPECT_EQ(rc.train().threads, 3u);
    ::setenv("LC_THREADS", "many", 1);
    EXPECT_THROW(apply_thread_env(rc), ConfigError);
    ::unsetenv("LC_THREADS");
}

TEST(RunConfig, FixedDepthZeroMeansFullDepth) {
    RunConfig rc;
    rc.set("train.depth_mode", "fixed");
    rc.set("model.max_layers", "6");
    EXPECT_EQ(rc.depth().fixed_depth, 6u);
    rc.set("train.fixed_depth", "4");
    EXPECT_EQ(rc.depth().fixed_depth, 4u);
}

TEST(RunConfig, ValidationSplitTakesTrailingUtterances) {
    EXPECT_EQ(validation_split_point(300, 0.1), 270u);
    EXPECT_EQ(validation_split_point(5, 0.1), 4u);
    EXPECT_EQ(validation_split_point(2, 0.9), 1u);
    EXPECT_THROW(validation_split_point(1, 0.1), ContractError);
    EXPECT_THROW(validation_split_point(10, 1.0), ConfigError);
}

// ---------------------------------------------------------------------------
// Executable

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

class Cli : public ::testing::Test {
   protected:
    static fs::path root() { return fs::temp_directory_path() / "lcf_cli_tests"; }

    // Small model and corpus so every command finishes in well under a second.
    static std::string tiny() {
        return " --data.num_utts=12 --data.min_frames=20 --data.max_frames=30 --data.dim=8 --model.input_dim=8"
               " --model.dim=8 --model.heads=2 --model.ff_dim=16 --model.conv_kernel=3 --train.batch_size=2"
               " --train.warmup_steps=5 --train.validation_every=3 --train.log_wall_time=false"
               " --diag.grad_batch=2 --diag.probe_steps=50 --diag.frame_count=10";
    }

    static RunResult run(const std::string& args) {
        static int counter = 0;
        const auto out = root() / ("stdout" + std::to_string(counter) + ".txt");
        const auto err = root() / ("stderr" + std::to_string(counter++) + ".txt");
        const std::string cmd = std::string(LCFORMER_BIN) + " " + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    static void SetUpTestSuite() {
        fs::remove_all(root());
        fs::create_directories(root());
        const auto s = run("synth --out " + (root() / "corpus").string() + " --seed 5" + tiny());
        ASSERT_EQ(s.code, 0) << s.err;
        const auto p = run("pretrain --data " + data() + " --out " + (root() / "model").string() +
                           " --seed 5 --train.max_steps=6" + tiny());
        ASSERT_EQ(p.code, 0) << p.err;
    }

    static std::string data() { return (root() / "corpus" / "features.lcfb").string(); }
    static std::string labels() { return (root() / "corpus" / "labels.lclb").string(); }
    static std::string model() { return (root() / "model" / "final.ckpt").string(); }
    static std::string dir(const std::string& name) { return (root() / name).string(); }
};

}  // namespace

TEST_F(Cli, SynthIsDeterministicForASeed) {
    ASSERT_EQ(run("synth --out " + dir("s7a") + " --seed 7" + tiny()).code, 0);
    ASSERT_EQ(run("synth --out " + dir("s7b") + " --seed 7" + tiny()).code, 0);
    ASSERT_EQ(run("synth --out " + dir("s8") + " --seed 8" + tiny()).code, 0);
    EXPECT_EQ(slurp(dir("s7a") + "/features.lcfb"), slurp(dir("s7b") + "/features.lcfb"));
    EXPECT_EQ(slurp(dir("s7a") + "/labels.lclb"), slurp(dir("s7b") + "/labels.lclb"));
    EXPECT_NE(slurp(dir("s7a") + "/features.lcfb"), slurp(dir("s8") + "/features.lcfb"));
}

TEST_F(Cli, SynthDefaultsToThreeHundredUtterances) {
    const auto r = run("synth --out " + dir("default"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("utterances 300"), std::string::npos) << r.out;
    EXPECT_EQ(load_features(dir("default") + "/features.lcfb").size(), 300u);
}

TEST_F(Cli, SynthZeroUtterancesWarnsAndWritesEmptyCorpus) {
    const auto r = run("synth --out " + dir("empty") + " --num-utts 0" + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("warning"), std::string::npos);
    EXPECT_TRUE(load_features(dir("empty") + "/features.lcfb").empty());
    EXPECT_TRUE(load_labels(dir("empty") + "/labels.lclb").empty());
}

TEST_F(Cli, ResolvedConfigIsEchoedAndReproducesTheRun) {
    const auto echoed = dir("corpus") + "/config.ini";
    ASSERT_TRUE(fs::exists(echoed));
    ASSERT_EQ(run("synth --out " + dir("replay") + " --config " + echoed).code, 0);
    EXPECT_EQ(slurp(dir("replay") + "/features.lcfb"), slurp(data()));
    EXPECT_EQ(slurp(dir("replay") + "/config.ini"), slurp(echoed));
}

TEST_F(Cli, ConfigSubcommandAppliesPrecedence) {
    const auto ini = root() / "prec.ini";
    std::ofstream(ini) << "[model]\ndim = 24\n[train]\nseed = 3\n";
    const auto r = run("config --preset paper --config " + ini.string() + " --model.dim=40 --seed 11");
    ASSERT_EQ(r.code, 0) << r.err;
    RunConfig rc;
    rc.apply_text(r.out);
    EXPECT_EQ(rc.size("model.dim"), 40u);
    EXPECT_EQ(rc.size("model.ff_dim"), 2048u);
    EXPECT_EQ(rc.size("train.seed"), 11u);
}

TEST_F(Cli, UnknownKeyOrPresetIsExitTwo) {
    EXPECT_EQ(run("config --model.bogus=1").code, 2);
    EXPECT_EQ(run("config --preset nope").code, 2);
    EXPECT_EQ(run("config --model.dim=abc").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, PretrainWritesAllArtifacts) {
    for (const char* f : {"final.ckpt", "best.ckpt", "last.ckpt", "metrics.jsonl", "config.ini"}) {
        EXPECT_TRUE(fs::exists(root() / "model" / f)) << f;
    }
    EXPECT_EQ(count_lines(root() / "model" / "metrics.jsonl"), 6u);
    const auto ck = load_checkpoint(model());
    EXPECT_EQ(get_model_config(ck).model_dim, 8u);
}

TEST_F(Cli, PaperPresetOnlyEmitsConfig) {
    const auto r = run("pretrain --preset paper --out " + dir("paper"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("encoder parameters"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(dir("paper") + "/config.ini"));
    EXPECT_FALSE(fs::exists(dir("paper") + "/final.ckpt"));
}

TEST_F(Cli, ResumeContinuesMetricsAtSavedStep) {
    const std::string common = " --data " + data() + " --seed 5" + tiny();
    ASSERT_EQ(run("pretrain --out " + dir("straight") + " --train.max_steps=9" + common).code, 0);
    ASSERT_EQ(run("pretrain --out " + dir("split") + " --train.max_steps=6" + common).code, 0);
    const auto r = run("pretrain --out " + dir("split") + " --train.max_steps=9 --resume " + dir("split") + "/last.ckpt" + common);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("resuming at step 6"), std::string::npos);
    EXPECT_EQ(slurp(dir("split") + "/metrics.jsonl"), slurp(dir("straight") + "/metrics.jsonl"));
    EXPECT_EQ(slurp(dir("split") + "/final.ckpt"), slurp(dir("straight") + "/final.ckpt"));
}

TEST_F(Cli, DivergenceIsExitFourAndKeepsLastGoodState) {
    auto seqs = load_features(data());
    for (auto& s : seqs) s.frames(2, 1) = std::numeric_limits<float>::infinity();
    save_features(seqs, dir("bad.lcfb"));
    const auto r = run("pretrain --data " + dir("bad.lcfb") + " --out " + dir("diverged") + " --train.max_steps=4" + tiny());
    EXPECT_EQ(r.code, 4) << r.err;
    EXPECT_TRUE(fs::exists(dir("diverged") + "/last.ckpt"));
    EXPECT_FALSE(fs::exists(dir("diverged") + "/final.ckpt"));
}

TEST_F(Cli, MissingDataFileIsExitThree) {
    EXPECT_EQ(run("pretrain --data " + dir("nope.lcfb") + " --out " + dir("nodata") + tiny()).code, 3);
    EXPECT_EQ(run("synth --out /proc/lcf_forbidden" + tiny()).code, 3);
}

TEST_F(Cli, FlopsNeedsNoData) {
    const auto r = run("diagnose --which flops --out " + dir("flops") + " --preset desk-shared-u28");
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream js(dir("flops") + "/flops.jsonl");
    std::string line;
    std::getline(js, line);
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["sli_block_ratio"].get<double>(), 0.625);
    EXPECT_EQ(j["training_block_ratio"].get<double>(), 0.625);
}

TEST_F(Cli, TransitionsOnEightLayerModelGiveEightRows) {
    const auto r = run("diagnose --which transitions --checkpoint " + model() + " --data " + data() + " --out " +
                       dir("trans") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(dir("trans") + "/transitions.jsonl"), 8u);
    EXPECT_EQ(count_lines(dir("trans") + "/transitions.csv"), 9u);
}

TEST_F(Cli, GradsAndProjectionReports) {
    auto r = run("diagnose --which grads --checkpoint " + model() + " --data " + data() + " --out " + dir("grads") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(dir("grads") + "/grads.csv"), 9u);
    r = run("diagnose --which project --checkpoint " + model() + " --data " + data() + " --out " + dir("proj") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(dir("proj") + "/projection.jsonl"), 9u * 10u);
    r = run("diagnose --which project --checkpoint " + model() + " --data " + data() + " --out " + dir("proj2") +
            " --diag.utterance=missing" + tiny());
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, DimensionMismatchIsExitTwoWithExpectedAndFound) {
    ASSERT_EQ(run("synth --out " + dir("wide") + " --data.num_utts=4 --data.dim=10").code, 0);
    const auto r = run("diagnose --which transitions --checkpoint " + model() + " --data " + dir("wide") +
                       "/features.lcfb --out " + dir("mismatch"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("expected 8, found 10"), std::string::npos) << r.err;
}

TEST_F(Cli, ProbeRowsFollowLayerList) {
    const std::string base = "probe --checkpoint " + model() + " --data " + data() + " --labels " + labels();
    auto r = run(base + " --layers 8 --out " + dir("p8") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(dir("p8") + "/sweep.csv"), 2u);
    r = run(base + " --layers 5,6,7,8 --out " + dir("p5678") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(dir("p5678") + "/sweep.jsonl"), 4u);
    r = run(base + " --layers 6,6,5 --out " + dir("pdup") + tiny());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.err.find("duplicate layer 6"), std::string::npos);
    EXPECT_EQ(count_lines(dir("pdup") + "/sweep.jsonl"), 2u);
    EXPECT_EQ(run(base + " --layers 9 --out " + dir("p9") + tiny()).code, 2);
    EXPECT_EQ(run(base + " --layers x --out " + dir("px") + tiny()).code, 2);
}

TEST_F(Cli, ProbeWithMissingLabelsNamesTheUtterance) {
    auto labs = load_labels(labels());
    const std::string gone = labs[3].utterance_id;
    labs.erase(labs.begin() + 3);
    save_labels(labs, dir("partial.lclb"));
    const auto r = run("probe --checkpoint " + model() + " --data " + data() + " --labels " + dir("partial.lclb") +
                       " --layers 4 --out " + dir("pmiss") + tiny());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(gone), std::string::npos) << r.err;
}

TEST_F(Cli, CorruptCheckpointIsRejected) {
    auto bytes = slurp(model());
    bytes[bytes.size() / 2] ^= 0x5a;
    std::ofstream(dir("corrupt.ckpt"), std::ios::binary) << bytes.substr(0, bytes.size() - 7);
    const auto r = run("diagnose --which transitions --checkpoint " + dir("corrupt.ckpt") + " --data " + data() +
                       " --out " + dir("corrupt") + tiny());
    EXPECT_EQ(r.code, 2) << r.err;
}
