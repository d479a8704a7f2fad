#include <doctest.h>

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "test_util.hpp"
#include "waiverlab/commands.hpp"
#include "waiverlab/error.hpp"
#include "waiverlab/positional.hpp"
#include "waiverlab/report.hpp"

using namespace waiverlab;
namespace fs = std::filesystem;

namespace {

RunSpec run_spec(Preset preset, const fs::path& out) {
  RunSpec s;
  s.config.regime = preset;
  s.config.seed = 7;
  s.len = 64;
  s.out = out;
  return s;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(WAIVERLAB_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("run with a self-only mask row records the intervention") {
  const test_util::TempDir dir("run_mask");
  RunSpec s = run_spec(Preset::causal_rope, dir.path() / "cap");
  s.mask_rows = {16};
  std::ostringstream log;
  cmd_run(s, log);
  CHECK(log.str().find("full-scale analog 128") != std::string::npos);

  const Capture cap = read_capture(s.out);
  CHECK(cap.metadata.interventions == std::vector<Intervention>{{"mask_row", 16, std::nullopt}});
  for (const auto& [l, h] : captured_heads(cap)) {
    const Tensor& w = cap.get(names::attn_weights(l, h));
    for (std::size_t j = 0; j < 64; ++j) CHECK(w.at(16, j) == (j == 16 ? 1.0f : 0.0f));
  }
  std::ostringstream check_log;
  CHECK(cmd_export_check(s.out, check_log).ok());

  AnalyzeSpec a;
  a.capture = s.out;
  a.out = dir.path() / "report";
  std::ostringstream alog;
  const auto out = cmd_analyze(a, alog);
  CHECK(out.report.intervened_positions == std::vector<std::size_t>{16});
  const std::string svg = test_util::read_text(a.out / "attn_scatter_layer0_head0.svg");
  CHECK(svg.find("intervened: 16") != std::string::npos);
  CHECK(fs::exists(a.out / "vnorm_layer1_head3.svg"));
  CHECK(fs::exists(a.out / "hidden_layer1_pos0.svg"));
  const std::string csv = test_util::read_text(a.out / "waiver_report.csv");
  CHECK(csv.rfind(kReportCsvHeader, 0) == 0);
}

TEST_CASE("run with a PE swap copies the source row bit for bit") {
  const test_util::TempDir dir("run_pe");
  RunSpec s = run_spec(Preset::global_learnable, dir.path() / "cap");
  s.pe_swap = PeSwapSpec{48, "first"};
  std::ostringstream log;
  cmd_run(s, log);
  const Capture cap = read_capture(s.out);
  const Tensor& pe = cap.get(names::kPeTable);
  for (std::size_t c = 0; c < pe.cols(); ++c) CHECK(std::bit_cast<std::uint32_t>(pe.at(48, c)) == std::bit_cast<std::uint32_t>(pe.at(0, c)));
  const auto fresh = init_random_model(s.config);
  for (std::size_t c = 0; c < pe.cols(); ++c) CHECK(pe.at(0, c) == fresh.pe->table.at(0, c));
  CHECK(cap.metadata.interventions == std::vector<Intervention>{{"pe_swap", 48, 0}});

  AnalyzeSpec a;
  a.capture = s.out;
  a.out = dir.path() / "report";
  std::ostringstream alog;
  cmd_analyze(a, alog);
  CHECK(fs::exists(a.out / "pe_norm.svg"));
  CHECK(alog.str().find("pe-swap row 48") != std::string::npos);
  const auto profile = pe_norm_profile(LearnablePE(pe));
  CHECK(profile[48].second == profile[0].second);
}

TEST_CASE("run is bitwise deterministic for a fixed seed") {
  const test_util::TempDir dir("determinism");
  std::ostringstream log;
  for (const char* name : {"a", "b"}) cmd_run(run_spec(Preset::causal_rope, dir.path() / name), log);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "a")) {
    ++files;
    CHECK(test_util::read_bytes(e.path()) == test_util::read_bytes(dir.path() / "b" / e.path().filename()));
  }
  CHECK(files > 10);
}

TEST_CASE("run spec validation") {
  const test_util::TempDir dir("validate");
  RunSpec s = run_spec(Preset::global_learnable, dir.path());
  s.mask_rows = {3};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = run_spec(Preset::causal_rope, dir.path());
  s.pe_swap = PeSwapSpec{1, "first"};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = run_spec(Preset::global_learnable, dir.path());
  s.pe_swap = PeSwapSpec{1, "middle"};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = run_spec(Preset::causal_rope, dir.path());
  s.mask_rows = {64};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = run_spec(Preset::causal_rope, dir.path());
  s.tokens = std::vector<std::size_t>{1, 2};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("first token special sets the start token") {
  RunSpec s = run_spec(Preset::causal_rope, "unused");
  s.first_token = FirstToken::special;
  const auto ids = run_tokens(s, 256);
  CHECK(ids[0] == kSpecialStartToken);
  for (std::size_t i = 1; i < ids.size(); ++i) CHECK(ids[i] >= kFirstRandomToken);
}

TEST_CASE("synth model reloads and reproduces the capture") {
  const test_util::TempDir dir("synth");
  SynthSpec s;
  s.config.seed = 3;
  s.out = dir.path();
  std::ostringstream log;
  const auto summary = cmd_synth(s, log);
  CHECK(summary.waiver_positions == std::vector<std::size_t>{0});
  CHECK(summary.sink >= 0.5);
  CHECK(summary.v_ratio <= 0.01);

  const Capture original = read_capture(dir.path() / "capture");
  const ModelWeights w = load_model(read_capture(dir.path() / "model"));
  std::vector<std::size_t> ids;
  for (float f : original.get(names::kTokenIds).data()) ids.push_back(static_cast<std::size_t>(f));
  const auto fr = forward(w, ids, build_causal_mask(ids.size()), true);
  for (const auto& [name, t] : fr.capture.tensors()) CHECK(t.bit_equal(original.get(name)));
}

TEST_CASE("analyze reports missing tensors by name") {
  const test_util::TempDir dir("incomplete");
  Capture cap;
  cap.metadata.regime = "causal";
  cap.add(names::attn_weights(0, 0), Tensor::identity(3));
  write_capture(cap, dir.path() / "cap");
  AnalyzeSpec a;
  a.capture = dir.path() / "cap";
  a.out = dir.path() / "out";
  std::ostringstream log;
  try {
    cmd_analyze(a, log);
    FAIL("expected IncompleteCaptureError");
  } catch (const IncompleteCaptureError& e) {
    CHECK(std::string(e.what()).find("layer0.head0.v") != std::string::npos);
  }
}

TEST_CASE("export-check rejects a capture that violates causality") {
  const test_util::TempDir dir("export_check");
  Capture cap;
  cap.metadata.regime = "causal";
  cap.metadata.source = "export";
  cap.metadata.model_name = "x";
  cap.add(names::attn_weights(0, 0), Tensor::from_rows({{0.5f, 0.5f}, {0.5f, 0.5f}}));
  cap.add(names::value(0, 0), Tensor::identity(2));
  write_capture(cap, dir.path());
  std::ostringstream log;
  const auto r = cmd_export_check(dir.path(), log);
  CHECK_FALSE(r.ok());
  CHECK(log.str().find("future key") != std::string::npos);
}

TEST_CASE("CLI exit codes") {
  const test_util::TempDir dir("cli");
  const std::string out = (dir.path() / "x").string();
  CHECK(cli("synth --vocab 4 --out " + out) == 2);
  CHECK(cli("run --preset global --mask-row 3 --out " + out) == 2);
  CHECK(cli("run --bogus-flag") == 2);
  CHECK(cli("analyze --capture " + (dir.path() / "missing").string() + " --out " + out) == 1);
  CHECK(cli("run --len 8 --mask-row 2 --out " + out) == 0);
  CHECK(cli("export-check " + out) == 0);
  CHECK(cli("analyze --capture " + out + " --out " + (dir.path() / "r").string()) == 0);
}
