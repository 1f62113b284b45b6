#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "pxseg/cli.hpp"
#include "pxseg/datakit.hpp"
#include "test_util.hpp"

using namespace pxseg;
using testutil::TempDir;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    REQUIRE(os.good());
    os << text;
}

std::string read_text(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream is(line);
    std::string field;
    while (std::getline(is, field, ',')) fields.push_back(field);
    return fields;
}

const char* kTinySynth = R"({
  "n_volumes": 1,
  "slices_per_volume": 2,
  "height": 16,
  "width": 16,
  "n_classes": 4,
  "class_fractions": [0.10, 0.06, 0.04],
  "modality_count": 3,
  "noise_sigma": 0.05,
  "seed": 77
})";

const char* kTinyModel = R"({
  "in_channels": 3,
  "stages": [{"n_convs": 1, "width": 6}, {"n_convs": 1, "width": 8}],
  "tap_stages": [0, 1],
  "mlp_widths": [12],
  "n_classes": 4,
  "n_sample_pixels": 48,
  "sgd": {"learning_rate": 0.05, "momentum": 0.9, "weight_decay": 0.0005, "seed": 5},
  "iterations": 8
})";

const char* kRegions = R"([
  {"name": "whole", "labels": [1, 2, 3]},
  {"name": "rare", "labels": [3]}
])";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 1") {
    CHECK(cli_main({}) == 1);
    CHECK(cli_main({"frobnicate"}) == 1);
    CHECK(cli_main({"synth"}) == 1);                     // missing required options
    CHECK(cli_main({"train", "--config", "x"}) == 1);    // missing --data/--out
    CHECK(cli_main({"evaluate", "--pred", "a"}) == 1);   // missing --gt/--regions
    CHECK(cli_main({"synth", "--bogus-flag", "1"}) == 1);
}

TEST_CASE("data errors exit with code 2") {
    TempDir dir("cli_err");
    CHECK(cli_main({"synth", "--config", dir.file("absent.json"), "--out", dir.str()}) == 2);

    write_text(dir.file("broken.json"), "{not json");
    CHECK(cli_main({"synth", "--config", dir.file("broken.json"), "--out", dir.str()}) == 2);

    write_text(dir.file("unknown.json"), "{\"heigth\": 16}");
    CHECK(cli_main({"synth", "--config", dir.file("unknown.json"), "--out", dir.str()}) == 2);

    // an empty dataset directory cannot be trained on
    write_text(dir.file("model.json"), kTinyModel);
    CHECK(cli_main({"train", "--config", dir.file("model.json"), "--data", dir.str(),
                    "--out", dir.file("m.ckpt")}) == 2);

    // evaluate: one side a file, the other a directory
    write_text(dir.file("regions.json"), kRegions);
    write_text(dir.file("not_a_volume.pxvol"), "junk");
    CHECK(cli_main({"evaluate", "--pred", dir.file("not_a_volume.pxvol"), "--gt", dir.str(),
                    "--regions", dir.file("regions.json")}) == 2);
}

TEST_CASE("synth/train/predict/evaluate pipeline runs end to end") {
    TempDir dir("cli_pipe");
    write_text(dir.file("synth.json"), kTinySynth);
    write_text(dir.file("model.json"), kTinyModel);
    write_text(dir.file("regions.json"), kRegions);

    REQUIRE(cli_main({"synth", "--config", dir.file("synth.json"), "--out",
                      dir.file("data")}) == 0);
    const Volume gt = load_volume(dir.file("data") + "/vol_000.pxvol");
    CHECK(gt.channels == 3);
    CHECK(gt.depth == 2);
    CHECK(gt.height == 16);

    REQUIRE(cli_main({"train", "--config", dir.file("model.json"), "--data",
                      dir.file("data"), "--out", dir.file("model.ckpt"), "--loss-csv",
                      dir.file("loss.csv")}) == 0);
    const auto loss_lines = split_lines(read_text(dir.file("loss.csv")));
    REQUIRE(loss_lines.size() == 9); // header + 8 iterations
    CHECK(loss_lines[0] == "step,loss");
    CHECK(split_fields(loss_lines[1])[0] == "0");

    REQUIRE(cli_main({"predict", "--checkpoint", dir.file("model.ckpt"), "--volume",
                      dir.file("data") + "/vol_000.pxvol", "--out",
                      dir.file("pred.pxvol")}) == 0);
    const Volume pred = load_volume(dir.file("pred.pxvol"));
    CHECK(pred.channels == 4); // per-class probability planes
    CHECK(pred.depth == gt.depth);
    CHECK(pred.height == gt.height);
    CHECK(pred.width == gt.width);
    // invalid voxels are forced to background with certainty
    for (std::size_t i = 0; i < pred.valid.size(); ++i) {
        if (pred.valid[i]) continue;
        CHECK(pred.labels[i] == 0);
        CHECK(pred.image[i] == 1.0f); // class-0 probability plane
    }

    REQUIRE(cli_main({"evaluate", "--pred", dir.file("pred.pxvol"), "--gt",
                      dir.file("data") + "/vol_000.pxvol", "--regions",
                      dir.file("regions.json"), "--out", dir.file("metrics.csv")}) == 0);
    const auto metric_lines = split_lines(read_text(dir.file("metrics.csv")));
    REQUIRE(metric_lines.size() == 3); // header + 2 regions
    CHECK(metric_lines[0] ==
          "case,region,dice,sensitivity,specificity,precision,recall,hd95,asd,flags");
    CHECK(split_fields(metric_lines[1])[0] == "pred");
    CHECK(split_fields(metric_lines[1])[1] == "whole");
    CHECK(split_fields(metric_lines[2])[1] == "rare");
}

TEST_CASE("evaluate: a volume against itself scores perfect overlap") {
    TempDir dir("cli_self");
    write_text(dir.file("synth.json"), kTinySynth);
    write_text(dir.file("regions.json"), kRegions);
    REQUIRE(cli_main({"synth", "--config", dir.file("synth.json"), "--out",
                      dir.file("data")}) == 0);

    const std::string vol = dir.file("data") + "/vol_000.pxvol";
    REQUIRE(cli_main({"evaluate", "--pred", vol, "--gt", vol, "--regions",
                      dir.file("regions.json"), "--out", dir.file("self.csv")}) == 0);

    const auto lines = split_lines(read_text(dir.file("self.csv")));
    REQUIRE(lines.size() == 3);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = split_fields(lines[i]);
        REQUIRE(fields.size() >= 9);
        CHECK(fields[2] == "1"); // dice
        CHECK(fields[3] == "1"); // sensitivity
        CHECK(fields[7] == "0"); // hd95
        CHECK(fields[8] == "0"); // asd
    }

    // directory-vs-directory pairing works the same way
    REQUIRE(cli_main({"evaluate", "--pred", dir.file("data"), "--gt", dir.file("data"),
                      "--regions", dir.file("regions.json"), "--out",
                      dir.file("dirs.csv")}) == 0);
    const auto dir_lines = split_lines(read_text(dir.file("dirs.csv")));
    REQUIRE(dir_lines.size() == 3);
    CHECK(split_fields(dir_lines[1])[0] == "vol_000");
}

TEST_CASE("sample-stats: balanced plan yields equal per-class counts") {
    TempDir dir("cli_stats");
    write_text(dir.file("synth.json"), kTinySynth);
    write_text(dir.file("plan.json"),
               "{\"n_total\": 40, \"strategy\": \"class_balanced\", \"seed\": 3}");
    REQUIRE(cli_main({"synth", "--config", dir.file("synth.json"), "--out",
                      dir.file("data")}) == 0);
    REQUIRE(cli_main({"sample-stats", "--data", dir.file("data"), "--plan",
                      dir.file("plan.json"), "--out", dir.file("stats.csv")}) == 0);

    const auto lines = split_lines(read_text(dir.file("stats.csv")));
    REQUIRE(lines.size() == 9); // header + 2 slices x 4 classes
    CHECK(lines[0] == "volume,slice,label,count");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = split_fields(lines[i]);
        REQUIRE(fields.size() == 4);
        CHECK(fields[0] == "vol_000");
        CHECK(fields[3] == "10"); // 40 pixels over 4 present classes
    }

    write_text(dir.file("bad_plan.json"), "{\"n_total\": 40, \"strtegy\": \"uniform\"}");
    CHECK(cli_main({"sample-stats", "--data", dir.file("data"), "--plan",
                    dir.file("bad_plan.json"), "--out", dir.file("x.csv")}) == 2);
}

TEST_CASE("predict: channel mismatch between checkpoint and volume is a data error") {
    TempDir dir("cli_chan");
    write_text(dir.file("synth3.json"), kTinySynth);
    write_text(dir.file("model.json"), kTinyModel);
    // a second dataset with only 2 modalities
    std::string two_mod = kTinySynth;
    const auto pos = two_mod.find("\"modality_count\": 3");
    REQUIRE(pos != std::string::npos);
    two_mod.replace(pos, 19, "\"modality_count\": 2");
    write_text(dir.file("synth2.json"), two_mod);

    REQUIRE(cli_main({"synth", "--config", dir.file("synth3.json"), "--out",
                      dir.file("d3")}) == 0);
    REQUIRE(cli_main({"synth", "--config", dir.file("synth2.json"), "--out",
                      dir.file("d2")}) == 0);
    REQUIRE(cli_main({"train", "--config", dir.file("model.json"), "--data", dir.file("d3"),
                      "--out", dir.file("m.ckpt")}) == 0);

    CHECK(cli_main({"predict", "--checkpoint", dir.file("m.ckpt"), "--volume",
                    dir.file("d2") + "/vol_000.pxvol", "--out", dir.file("p.pxvol")}) == 2);
}

} // TEST_SUITE
