#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "sdaut/io.hpp"
#include "sdaut/kspace.hpp"
#include "sdaut/macs.hpp"
#include "sdaut/phantom.hpp"

using namespace sdaut;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh(const std::string& leaf) {
    auto dir = fs::temp_directory_path() / ("sdaut_cli_" + leaf);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Cli, RequiresSubcommandAndFlags) {
    EXPECT_NE(run({}).code, 0);
    EXPECT_NE(run({"bogus"}).code, 0);
    EXPECT_NE(run({"phantom-gen", "--n", "2"}).code, 0);  // --out missing
    EXPECT_NE(run({"mask-gen", "--kind", "spiral", "--out", "/tmp/x"}).code, 0);
    const auto r = run({"macs", "--preset", "KKDDKK-O-7"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("unknown preset"), std::string::npos);
}

TEST(Cli, PhantomAndMask) {
    const auto dir = fresh("pm");
    ASSERT_EQ(run({"phantom-gen", "--n", "3", "--size", "32", "--seed", "4", "--out", (dir / "d").string()}).code, 0);
    const auto images = load_dataset(dir / "d");
    ASSERT_EQ(images.size(), 3u);
    EXPECT_TRUE(bitwise_equal(images[2], [] {
        Tensor t = phantom_gen(4, 3, 32)[2].image.clone();
        for (auto& v : t.mutable_data()) v = static_cast<float>(v);
        return t;
    }()));
    EXPECT_TRUE(fs::exists(dir / "d" / "phantom_0000.pgm"));
    ASSERT_EQ(run({"phantom-gen", "--n", "0", "--out", (dir / "empty").string()}).code, 0);
    EXPECT_TRUE(load_dataset(dir / "empty").empty());

    const auto r = run({"mask-gen", "--kind", "gaussian1d", "--ratio", "0.3", "--size", "256", "--seed", "1", "--out",
                        (dir / "m.dtns").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(kspace::load_mask(dir / "m.dtns").kept_count(), 77 * 256);
    ASSERT_EQ(run({"mask-gen", "--kind", "radial", "--ratio", "0.1", "--size", "64", "--out", (dir / "r.dtns").string()}).code, 0);
    EXPECT_GE(kspace::load_mask(dir / "r.dtns").achieved_ratio(), 0.1);
}

TEST(Cli, UndersampleMatchesLibrary) {
    const auto dir = fresh("us");
    run({"phantom-gen", "--n", "1", "--size", "32", "--out", dir.string()});
    run({"mask-gen", "--size", "32", "--out", (dir / "m.dtns").string()});
    ASSERT_EQ(run({"undersample", "--image", (dir / "phantom_0000.dtns").string(), "--mask", (dir / "m.dtns").string(),
                   "--out", (dir / "zf.dtns").string()})
                  .code,
              0);
    const auto expect = kspace::undersample(load_tensor(dir / "phantom_0000.dtns"), kspace::load_mask(dir / "m.dtns"));
    EXPECT_LE(max_abs_diff(load_tensor(dir / "zf.dtns"), expect), 1e-6);
    EXPECT_NE(run({"undersample", "--image", (dir / "missing.dtns").string(), "--mask", (dir / "m.dtns").string(), "--out",
                   (dir / "o.dtns").string()})
                  .code,
              0);
}

TEST(Cli, MacsReportMatchesEstimator) {
    const auto dir = fresh("macs");
    const auto r = run({"macs", "--preset", "KKKKKK-NO-2", "--size", "256", "--report", (dir / "r.kv").string()});
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("total"), std::string::npos);
    const auto kv = KeyValueFile::load(dir / "r.kv");
    EXPECT_EQ(kv.get("total_macs"), std::to_string(macs_estimate(preset("KKKKKK-NO-2"), 256, 256).total));
    EXPECT_EQ(kv.get("preset"), "KKKKKK-NO-2");
    EXPECT_EQ(run({"macs", "--preset", "KKDDKK-O-1", "--size", "250"}).code, 1);
}

TEST(Cli, TrainReconstructEvaluateInspect) {
    const auto dir = fresh("flow");
    run({"phantom-gen", "--n", "2", "--size", "64", "--seed", "3", "--out", (dir / "data").string()});
    run({"mask-gen", "--size", "64", "--seed", "3", "--out", (dir / "m.dtns").string()});
    write_file_atomic(dir / "cfg", "steps = 3\nlog_every = 1\nseed = 2\n");
    const auto t = run({"train", "--config", (dir / "cfg").string(), "--data", (dir / "data").string(), "--out",
                        (dir / "run").string()});
    ASSERT_EQ(t.code, 0) << t.err;
    const auto log = read_file(dir / "run" / "train.log");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
    EXPECT_EQ(log.rfind("1, 0.0002, ", 0), 0u);
    for (const char* f : {"model.ckpt", "model.ckpt.manifest", "model.ckpt.config", "train.config", "mask.dtns"}) {
        EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
    }
    const std::string ckpt = (dir / "run" / "model.ckpt").string();
    ASSERT_EQ(run({"reconstruct", "--ckpt", ckpt, "--image", (dir / "data" / "phantom_0001.dtns").string(), "--mask",
                   (dir / "m.dtns").string(), "--out", (dir / "rec.pgm").string()})
                  .code,
              0);
    EXPECT_EQ(read_pgm(dir / "rec.pgm").shape(), (Shape{1, 64, 64}));
    const auto e = run({"evaluate", "--ckpt", ckpt, "--data", (dir / "data").string(), "--mask", (dir / "m.dtns").string(),
                        "--report", (dir / "eval.kv").string()});
    ASSERT_EQ(e.code, 0);
    EXPECT_NE(e.out.find("ZF PSNR"), std::string::npos);
    EXPECT_EQ(KeyValueFile::load(dir / "eval.kv").get("count"), "2");
    const auto i = run({"inspect", "--ckpt", ckpt, "--image", (dir / "data" / "phantom_0000.dtns").string(), "--block", "E3",
                        "--layer", "1", "--head", "2", "--query", "3,4", "--out", (dir / "insp").string()});
    ASSERT_EQ(i.code, 0) << i.err;
    EXPECT_TRUE(fs::exists(dir / "insp" / "heatmap_E3_L1_H2.pgm"));
    EXPECT_TRUE(fs::exists(dir / "insp" / "E3_L0.field.pgm"));
    EXPECT_EQ(run({"inspect", "--ckpt", ckpt, "--image", (dir / "data" / "phantom_0000.dtns").string(), "--block", "E3",
                   "--query", "16,0", "--out", (dir / "bad").string()})
                  .code,
              1);
    EXPECT_EQ(run({"inspect", "--ckpt", ckpt, "--image", (dir / "data" / "phantom_0000.dtns").string(), "--block", "Q1",
                   "--out", (dir / "bad").string()})
                  .code,
              1);
}
