// Copyright 2026 The motiondiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Runs the command-line tool end to end and checks exit codes, settings
// resolution and the files it writes.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "motiondiff.hpp"

namespace motiondiff {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr together
};

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "motiondiff_cli_test"; }

  static CliResult run(const std::string& args, const std::string& env = "") {
    const fs::path log = dir() / "last_run.txt";
    const std::string cmd = "cd '" + dir().string() + "' && " + env + " '" + MOTIONDIFF_CLI_PATH + "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
  }

  static void write(const std::string& name, const std::string& text) { std::ofstream(dir() / name) << text; }

  // Shared tiny dataset and model, built once for the suite.
  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    write("tiny.json", R"({"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "d_text": 16, "vocab": 64,
      "max_frames": 24, "diffusion_steps": 10, "input_skip": true, "batch_size": 4, "clip_length": 12,
      "clip_stride": 6, "frames": 12, "min_frames": 10, "max_frames_data": 14, "per_class": 2,
      "extractor_d_model": 8, "extractor_layers": 1, "extractor_heads": 2, "extractor_d_ff": 8,
      "extractor_d_feat": 8, "extractor_d_word": 8, "extractor_max_frames": 24, "extractor_steps": 3,
      "multimodality_samples": 1, "candidates": 4, "log_every": 2})");
    setup_ok_ = run("make-synthetic --out data --config tiny.json").code == 0 &&
                run("train --data data --out model.ckpt --total-steps 4 --config tiny.json").code == 0;
  }

  void SetUp() override { ASSERT_TRUE(setup_ok_) << "suite setup failed: " << run("--help").output; }

  static bool setup_ok_;
};

bool Cli::setup_ok_ = false;

TEST_F(Cli, HelpAndParseErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("sample --ckpt model.ckpt").code, 2);  // --out missing
  EXPECT_EQ(run("sample --ckpt model.ckpt --out x.json --no-such-flag").code, 2);
  const auto r = run("sample --ckpt model.ckpt --out x.json --guidance abc");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--guidance"), std::string::npos) << r.output;
}

TEST_F(Cli, TrainingWritesCheckpointAndMetricLog) {
  EXPECT_TRUE(fs::exists(dir() / "model.ckpt"));
  std::ifstream log(dir() / "model.ckpt.log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("simple") && j.contains("vlb") && j.contains("grad_norm") && j.contains("lr"));
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  EXPECT_EQ(load_checkpoint<float>(dir() / "model.ckpt").step, 4);
}

TEST_F(Cli, ResumeContinuesTheStepCount) {
  fs::copy_file(dir() / "model.ckpt", dir() / "resume.ckpt", fs::copy_options::overwrite_existing);
  const auto r = run("train --data data --out resume.ckpt --resume resume.ckpt --total-steps 6 --config tiny.json");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(load_checkpoint<float>(dir() / "resume.ckpt").step, 6);
}

TEST_F(Cli, SettingsResolutionOrder) {
  write("guidance.json", R"({"guidance": 3.5, "sampling_steps": 2})");
  auto r = run("sample --ckpt model.ckpt --out s.json --config guidance.json --sampling-steps 3 --frames 8");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("guidance = 3.5  (config guidance.json)"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("sampling_steps = 3  (flag)"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("ddim_eta = 0.0  (default)"), std::string::npos) << r.output;

  r = run("sample --ckpt model.ckpt --out s.json --frames 8 --sampling-steps 2", "MOTION_DIFFUSE_CONFIG=guidance.json");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("guidance = 3.5  (config guidance.json)"), std::string::npos) << r.output;
}

TEST_F(Cli, ConfigFilesAreChecked) {
  write("unknown.json", R"({"guidance": 2.0, "guidence": 3.0})");
  auto r = run("sample --ckpt model.ckpt --out s.json --config unknown.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("guidence"), std::string::npos) << r.output;
  write("typed.json", R"({"sampling_steps": "many"})");
  EXPECT_EQ(run("sample --ckpt model.ckpt --out s.json --config typed.json").code, 2);
  EXPECT_EQ(run("sample --ckpt model.ckpt --out s.json --config absent.json").code, 2);
}

TEST_F(Cli, SampleWithSidecarAndSeveralJobs) {
  const auto r = run("sample --ckpt model.ckpt --text 'a person walks' --out out/s.json --sidecar --count 3 --jobs 2 "
                     "--sampling-steps 3 --frames 9");
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"s_000", "s_001", "s_002"}) {
    const auto m = load_motion(dir() / "out" / (std::string(name) + ".json"));
    EXPECT_EQ(m.frames(), 9);
    const auto side = read_json_file(dir() / "out" / (std::string(name) + ".pos.json"));
    EXPECT_EQ(side["frames"].size(), 9u);
  }
  // Per-sample seeds make the samples differ; the run is reproducible.
  const auto a = load_motion(dir() / "out/s_000.json"), b = load_motion(dir() / "out/s_001.json");
  EXPECT_NE(a.data, b.data);
  ASSERT_EQ(run("sample --ckpt model.ckpt --text 'a person walks' --out again/s.json --count 3 --jobs 1 "
                "--sampling-steps 3 --frames 9")
                .code,
            0);
  EXPECT_EQ(load_motion(dir() / "again/s_002.json").data, load_motion(dir() / "out/s_002.json").data);
}

TEST_F(Cli, SampleRejectsOversizedRequests) {
  EXPECT_EQ(run("sample --ckpt model.ckpt --out s.json --frames 100").code, 2);
  EXPECT_EQ(run("sample --ckpt model.ckpt --out s.json --count 0").code, 2);
  EXPECT_EQ(run("sample --ckpt model.ckpt --out s.json --method euler").code, 2);
}

TEST_F(Cli, EditPresetsKeepContext) {
  ASSERT_EQ(run("sample --ckpt model.ckpt --out ref.json --sampling-steps 2 --frames 10").code, 0);
  const auto ref = load_motion(dir() / "ref.json");
  auto r = run("edit --ckpt model.ckpt --ref ref.json --predict-after 4 --text jump --out pred.json --sampling-steps 2");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto pred = load_motion(dir() / "pred.json");
  EXPECT_EQ(Mat<double>(pred.data.topRows(4)), Mat<double>(ref.data.topRows(4)));

  r = run("edit --ckpt model.ckpt --ref ref.json --keep-head 2 --keep-tail 3 --out mid.json --sampling-steps 2 --sidecar");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto mid = load_motion(dir() / "mid.json");
  EXPECT_EQ(Mat<double>(mid.data.bottomRows(3)), Mat<double>(ref.data.bottomRows(3)));
  EXPECT_TRUE(fs::exists(dir() / "mid.pos.json"));

  write("mask.json", R"({"joints": [24]})");
  ASSERT_EQ(run("edit --ckpt model.ckpt --ref ref.json --mask mask.json --out masked.json --sampling-steps 2").code, 0);
  EXPECT_EQ(Mat<double>(load_motion(dir() / "masked.json").data.leftCols(3)), Mat<double>(ref.data.leftCols(3)));

  EXPECT_EQ(run("edit --ckpt model.ckpt --ref ref.json --out x.json").code, 2);
  EXPECT_EQ(run("edit --ckpt model.ckpt --ref ref.json --predict-after 4 --mask mask.json --out x.json").code, 2);
  EXPECT_EQ(run("edit --ckpt model.ckpt --ref ref.json --predict-after 10 --out x.json").code, 2);
  write("bad_mask.json", R"({"frames": [[0, 99]]})");
  EXPECT_EQ(run("edit --ckpt model.ckpt --ref ref.json --mask bad_mask.json --out x.json").code, 3);
}

TEST_F(Cli, EvalRequiresAnExtractor) {
  auto r = run("eval --ckpt model.ckpt --data data --out report.json --sampling-steps 2");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("train-extractor"), std::string::npos) << r.output;

  ASSERT_EQ(run("train-extractor --data data --out fx.bin --config tiny.json").code, 0);
  r = run("eval --ckpt model.ckpt --extractor fx.bin --data data --out report.json --sampling-steps 2 --config tiny.json");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = read_json_file(dir() / "report.json");
  for (const char* key : {"ape", "ave", "mclip", "fd", "r_precision", "multimodality", "mid"})
    EXPECT_TRUE(report.contains(key)) << key;
  EXPECT_TRUE(report["mid"].is_null());
}

TEST_F(Cli, FileErrorsExitWithThree) {
  EXPECT_EQ(run("sample --ckpt absent.ckpt --out s.json").code, 3);
  write("garbage.ckpt", "garbage garbage garbage garbage garbage garbage");
  EXPECT_EQ(run("sample --ckpt garbage.ckpt --out s.json").code, 3);
  EXPECT_EQ(run("train --data no_data --out m.ckpt").code, 3);
}

TEST_F(Cli, DivergentTrainingExitsWithFour) {
  const auto r = run("train --data data --out diverge.ckpt --total-steps 20 --lr 1e30 --grad-clip 0 --config tiny.json");
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("non-finite"), std::string::npos) << r.output;
}

}  // namespace
}  // namespace motiondiff
