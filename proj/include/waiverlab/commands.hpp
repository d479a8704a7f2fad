#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "waiverlab/capture.hpp"
#include "waiverlab/metrics.hpp"
#include "waiverlab/transformer.hpp"

namespace waiverlab {

// Token id that plays the role of a model's start token (128000 / 101).
inline constexpr std::size_t kSpecialStartToken = 1;
// Ids below this are reserved; random sequences draw from [kFirstRandomToken, vocab).
inline constexpr std::size_t kFirstRandomToken = 2;
// Full-scale sequence length the desk-scale indices are mapped from.
inline constexpr std::size_t kFullScaleLength = 512;

enum class FirstToken { random, special };

struct PeSwapSpec {
  std::size_t target = 0;
  std::string source = "first";  // "first", "last", or a decimal index
};

struct RunSpec {
  ModelConfig config;  // regime, dims and seed
  std::size_t len = 64;
  std::optional<std::vector<std::size_t>> tokens;
  FirstToken first_token = FirstToken::random;
  std::vector<std::size_t> mask_rows;
  std::optional<PeSwapSpec> pe_swap;
  std::optional<std::filesystem::path> model_dir;
  std::filesystem::path out;

  // Throws ConfigError on an inconsistent spec.
  void validate() const;
};

// Token ids for a run: the fixed list, or a seeded random draw with the
// first token optionally replaced by kSpecialStartToken.
std::vector<std::size_t> run_tokens(const RunSpec& spec, std::size_t vocab_size);

Capture cmd_run(const RunSpec& spec, std::ostream& log);

struct AnalyzeSpec {
  std::filesystem::path capture;
  std::filesystem::path out;
  WaiverThresholds thresholds;
  std::optional<std::size_t> layer;
  std::optional<std::size_t> head;
  std::optional<std::size_t> query_row;  // default: last position
  std::size_t hidden_position = 0;
};

struct AnalyzeOutput {
  WaiverReport report;
  std::vector<std::filesystem::path> files;
};

AnalyzeOutput cmd_analyze(const AnalyzeSpec& spec, std::ostream& log);

struct SynthSpec {
  ModelConfig config;
  std::size_t waiver_token = kSpecialStartToken;
  std::size_t waiver_position = 0;
  std::size_t len = 64;
  std::filesystem::path out;
};

struct SynthSummary {
  double sink = 0.0;
  double v_ratio = 0.0;  // v_l2(j*) / median v_l2, worst head of layer 0
  double max_loo_delta = 0.0;
  double max_contribution_share = 0.0;
  std::vector<std::size_t> waiver_positions;  // layer 0
};

// Writes <out>/model (weights) and <out>/capture (forward of a seeded sequence).
SynthSummary cmd_synth(const SynthSpec& spec, std::ostream& log);

struct ExportCheckResult {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

ExportCheckResult cmd_export_check(const std::filesystem::path& dir, std::ostream& log);

}  // namespace waiverlab
