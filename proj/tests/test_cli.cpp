#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <exchanger/data.hpp>
#include <exchanger/hash.hpp>
#include <exchanger/serialize.hpp>

#include "../tools/cli.hpp"
#include "support/tmpdir.hpp"

using namespace exchanger;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("exchanger");
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

const char* kGenConfig = R"({
  "synth": {"classes": 3, "channels": 2, "t_min": 8, "t_max": 12, "n_pix": 2,
             "grid_height": 4, "grid_width": 4, "parcels_min": 1, "parcels_max": 2},
  "pixel_train": 12, "pixel_val": 6, "grid_train": 3, "grid_val": 2
})";

std::string train_config(const std::string& data_dir, int epochs) {
    return std::string(R"({
  "data": {"train": ")") + data_dir + R"(/pixel_train.sits", "val": ")" + data_dir +
           R"(/pixel_val.sits"},
  "model": {"encoder": {"width": 8, "clusters": 2, "heads": 2, "stages": 1,
            "ffn_expansion": 2, "token_mlp_hidden": 3},
            "proj_hidden": 16, "proj_dim": 8},
  "train": {"epochs": )" + std::to_string(epochs) + R"(, "batch_size": 6, "lr0": 0.001, "seed": 3}
})";
}

}  // namespace

TEST_CASE("gen-data is byte-deterministic for a fixed seed") {
    testsupport::TmpDir tmp("cli_gen");
    const auto cfg = tmp.file("gen.json");
    write_file(cfg, kGenConfig);
    CHECK(run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", tmp.file("a")}) == 0);
    CHECK(run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", tmp.file("b")}) == 0);
    for (const char* name : {"pixel_train.sits", "pixel_val.sits", "grid_train.sits",
                             "grid_val.sits"}) {
        CHECK(sha1_file(tmp.file("a") + "/" + name) == sha1_file(tmp.file("b") + "/" + name));
    }
    // a different seed changes the bytes
    CHECK(run_cli({"gen-data", "--config", cfg, "--seed", "8", "--out", tmp.file("c")}) == 0);
    CHECK(sha1_file(tmp.file("a") + "/pixel_train.sits") !=
          sha1_file(tmp.file("c") + "/pixel_train.sits"));
    // thread count does not change the output bytes
    CHECK(run_cli({"gen-data", "--config", cfg, "--seed", "7", "--out", tmp.file("d"),
                   "--threads", "3"}) == 0);
    CHECK(sha1_file(tmp.file("a") + "/pixel_train.sits") ==
          sha1_file(tmp.file("d") + "/pixel_train.sits"));
}

TEST_CASE("manifest carries config hash and seed") {
    testsupport::TmpDir tmp("cli_manifest");
    const auto cfg = tmp.file("gen.json");
    write_file(cfg, kGenConfig);
    REQUIRE(run_cli({"gen-data", "--config", cfg, "--seed", "99", "--out", tmp.file("out")}) == 0);
    std::ifstream is(tmp.file("out") + "/manifest.json");
    REQUIRE(is.good());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(text.find(sha1_file(cfg)) != std::string::npos);
    CHECK(text.find("\"seed\": 99") != std::string::npos);
    CHECK(text.find("gen-data") != std::string::npos);
}

TEST_CASE("unknown flags and bad configs exit with code 1") {
    testsupport::TmpDir tmp("cli_err");
    CHECK(run_cli({"gen-data", "--bogus"}) == 1);
    CHECK(run_cli({"no-such-command"}) == 1);
    const auto cfg = tmp.file("bad.json");
    write_file(cfg, "{ not json");
    CHECK(run_cli({"gen-data", "--config", cfg, "--out", tmp.file("x")}) == 1);
    CHECK(run_cli({"gen-data", "--config", tmp.file("missing.json"), "--out", tmp.file("y")}) == 1);
}

TEST_CASE("refuses to reuse a non-empty output directory without --force") {
    testsupport::TmpDir tmp("cli_force");
    const auto cfg = tmp.file("gen.json");
    write_file(cfg, kGenConfig);
    REQUIRE(run_cli({"gen-data", "--config", cfg, "--out", tmp.file("out")}) == 0);
    CHECK(run_cli({"gen-data", "--config", cfg, "--out", tmp.file("out")}) == 1);
    CHECK(run_cli({"gen-data", "--config", cfg, "--out", tmp.file("out"), "--force"}) == 0);
}

TEST_CASE("pretrain, eval and export-features round trip through the CLI") {
    testsupport::TmpDir tmp("cli_train");
    const auto gen_cfg = tmp.file("gen.json");
    write_file(gen_cfg, kGenConfig);
    REQUIRE(run_cli({"gen-data", "--config", gen_cfg, "--seed", "5", "--out", tmp.file("data")}) ==
            0);

    const auto train_cfg = tmp.file("train.json");
    write_file(train_cfg, train_config(tmp.file("data"), 1));
    REQUIRE(run_cli({"pretrain", "--config", train_cfg, "--out", tmp.file("run")}) == 0);
    CHECK(fs::exists(tmp.file("run") + "/checkpoint.ckpt"));
    CHECK(fs::exists(tmp.file("run") + "/metrics.csv"));
    CHECK(fs::exists(tmp.file("run") + "/metrics.json"));
    {
        std::ifstream is(tmp.file("run") + "/metrics.csv");
        std::string first;
        std::getline(is, first);
        CHECK(first == "epoch,split,metric,value");
    }

    const auto eval_cfg = tmp.file("eval.json");
    write_file(eval_cfg, std::string(R"({"checkpoint": ")") + tmp.file("run") +
                             R"(/checkpoint.ckpt", "data": ")" + tmp.file("data") +
                             R"(/pixel_val.sits"})");
    CHECK(run_cli({"eval", "--config", eval_cfg, "--out", tmp.file("eval_out")}) == 0);
    CHECK(fs::exists(tmp.file("eval_out") + "/eval.json"));

    // schema mismatch: evaluate the checkpoint against a dataset with a
    // different channel count
    const auto gen2 = tmp.file("gen2.json");
    write_file(gen2, R"({"synth": {"classes": 3, "channels": 4, "t_min": 8, "t_max": 10,
                 "n_pix": 2}, "pixel_train": 4, "pixel_val": 4})");
    REQUIRE(run_cli({"gen-data", "--config", gen2, "--out", tmp.file("data2")}) == 0);
    const auto eval_bad = tmp.file("eval_bad.json");
    write_file(eval_bad, std::string(R"({"checkpoint": ")") + tmp.file("run") +
                             R"(/checkpoint.ckpt", "data": ")" + tmp.file("data2") +
                             R"(/pixel_val.sits"})");
    CHECK(run_cli({"eval", "--config", eval_bad, "--out", tmp.file("eval_bad_out")}) == 1);

    // a config-hash pin must match the checkpoint's producing config
    const auto eval_pin = tmp.file("eval_pin.json");
    write_file(eval_pin, std::string(R"({"checkpoint": ")") + tmp.file("run") +
                             R"(/checkpoint.ckpt", "data": ")" + tmp.file("data") +
                             R"(/pixel_val.sits", "expect_config_sha1": "deadbeef"})");
    CHECK(run_cli({"eval", "--config", eval_pin, "--out", tmp.file("eval_pin_out")}) == 1);

    // export-features: one block per stage with shape T x width
    const auto exp_cfg = tmp.file("export.json");
    write_file(exp_cfg, std::string(R"({"checkpoint": ")") + tmp.file("run") +
                            R"(/checkpoint.ckpt", "data": ")" + tmp.file("data") +
                            R"(/pixel_val.sits", "max_samples": 1})");
    REQUIRE(run_cli({"export-features", "--config", exp_cfg, "--out", tmp.file("feat")}) == 0);
    const auto val = read_dataset(tmp.file("data") + "/pixel_val.sits");
    {
        std::ifstream is(tmp.file("feat") + "/sample0_stage0.tensor", std::ios::binary);
        REQUIRE(is.good());
        Shape shape;
        std::vector<float> values;
        read_tensor_block(is, shape, values);
        CHECK(shape == Shape{val.pixel_samples[0].t_len, 8});
    }
    CHECK(!fs::exists(tmp.file("feat") + "/sample0_stage1.tensor"));  // one stage configured
}

TEST_CASE("bench subcommand writes records and slopes") {
    testsupport::TmpDir tmp("cli_bench");
    const auto cfg = tmp.file("bench.json");
    write_file(cfg, R"({
      "encoder": {"width": 8, "clusters": 2, "heads": 2, "stages": 1,
                  "ffn_expansion": 2, "token_mlp_hidden": 3},
      "t_list": [4, 8, 16, 32, 64], "repeats": 5
    })");
    REQUIRE(run_cli({"bench", "--config", cfg, "--out", tmp.file("out")}) == 0);
    CHECK(fs::exists(tmp.file("out") + "/bench.csv"));
    std::ifstream is(tmp.file("out") + "/slopes.json");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(text.find("exchanger") != std::string::npos);
    CHECK(text.find("self_attention") != std::string::npos);
}
