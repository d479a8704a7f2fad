// waiverlab: run toy forwards with interventions, analyze captures, build the
// synthetic waiver model, and validate capture directories.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "waiverlab/commands.hpp"
#include "waiverlab/error.hpp"

namespace {

using namespace waiverlab;

struct ModelFlags {
  std::string preset = "causal";
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn = 128;
  std::size_t vocab = 256;
  std::size_t max_len = 64;
  double rope_base = 10000.0;
  std::uint64_t seed = 0;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "causal (RoPE, causal mask) or global (learnable PE, global mask)")
        ->check(CLI::IsMember({"causal", "global"}));
    app->add_option("--d-model", d_model, "model width");
    app->add_option("--heads", heads, "attention heads");
    app->add_option("--layers", layers, "transformer blocks");
    app->add_option("--ffn", ffn, "FFN hidden width");
    app->add_option("--vocab", vocab, "vocabulary size");
    app->add_option("--max-len", max_len, "learnable PE rows (global preset)");
    app->add_option("--rope-base", rope_base, "rotary frequency base (causal preset)");
    app->add_option("--seed", seed, "weight/token seed (WAIVERLAB_SEED overrides)");
  }

  ModelConfig config() const {
    ModelConfig c;
    c.regime = preset_from_string(preset);
    c.d_model = d_model;
    c.num_heads = heads;
    if (heads == 0 || d_model % heads != 0) {
      throw ConfigError("--d-model " + std::to_string(d_model) + " is not divisible by --heads " +
                        std::to_string(heads));
    }
    c.head_dim = d_model / heads;
    c.num_layers = layers;
    c.ffn_hidden = ffn;
    c.vocab_size = vocab;
    c.max_len = max_len;
    c.rope_base = rope_base;
    c.seed = seed;
    if (const char* env = std::getenv("WAIVERLAB_SEED")) {
      try {
        c.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("WAIVERLAB_SEED is not an unsigned integer: ") + env);
      }
    }
    c.validate();
    return c;
  }
};

std::vector<std::size_t> parse_token_list(const std::string& s) {
  std::vector<std::size_t> ids;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--tokens: '" + item + "' is not a token id");
    }
  }
  if (ids.empty()) throw ConfigError("--tokens is empty");
  return ids;
}

PeSwapSpec parse_pe_swap(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw ConfigError("--pe-swap expects TARGET:SOURCE, got '" + s + "'");
  PeSwapSpec spec;
  try {
    spec.target = std::stoul(s.substr(0, colon));
  } catch (const std::exception&) {
    throw ConfigError("--pe-swap target is not an index: '" + s + "'");
  }
  spec.source = s.substr(colon + 1);
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"waiverlab: attention-sink and waiver-element laboratory"};
  app.require_subcommand(1, 1);

  ModelFlags run_model;
  std::size_t run_len = 64;
  std::string run_tokens_arg, run_first = "random", run_pe_swap, run_model_dir, run_out = "capture";
  std::vector<std::size_t> run_mask_rows;
  auto* run = app.add_subcommand("run", "toy forward with optional intervention; writes a capture");
  run_model.attach(run);
  run->add_option("--len", run_len, "sequence length");
  run->add_option("--tokens", run_tokens_arg, "fixed comma-separated token ids");
  run->add_option("--first-token", run_first, "random or special (id 1)")->check(CLI::IsMember({"random", "special"}));
  run->add_option("--mask-row", run_mask_rows, "make row K self-only at every layer (causal)");
  run->add_option("--pe-swap", run_pe_swap, "TARGET:SOURCE, SOURCE = first|last|index (global)");
  run->add_option("--model", run_model_dir, "load weights from a model directory instead of seeding");
  run->add_option("--out", run_out, "capture directory");

  AnalyzeSpec analyze_spec;
  std::string analyze_capture, analyze_out = "analysis";
  std::optional<std::size_t> analyze_layer, analyze_head, analyze_query;
  auto* analyze = app.add_subcommand("analyze", "waiver report CSV and SVG figures from a capture");
  analyze->add_option("--capture", analyze_capture, "capture directory")->required();
  analyze->add_option("--out", analyze_out, "output directory");
  analyze->add_option("--sink-threshold", analyze_spec.thresholds.sink_threshold, "attention_sink threshold");
  analyze->add_option("--vnorm-quantile", analyze_spec.thresholds.vnorm_quantile, "low_v_norm quantile");
  analyze->add_option("--layer", analyze_layer, "only plot this layer");
  analyze->add_option("--head", analyze_head, "only plot this head");
  analyze->add_option("--query-row", analyze_query, "query row for attention scatter (default: last)");
  analyze->add_option("--hidden-position", analyze_spec.hidden_position, "position for hidden-state plots");

  ModelFlags synth_model;
  SynthSpec synth_spec;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "build the synthetic waiver model and capture a forward");
  synth_model.layers = 2;
  synth_model.attach(synth);
  synth->add_option("--waiver-token", synth_spec.waiver_token, "token id that becomes the waiver");
  synth->add_option("--waiver-position", synth_spec.waiver_position, "position of the waiver token");
  synth->add_option("--len", synth_spec.len, "sequence length");
  synth->add_option("--out", synth_out, "output directory (model/ and capture/)");

  std::string check_dir;
  auto* check = app.add_subcommand("export-check", "validate a capture directory");
  check->add_option("dir", check_dir, "capture directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) {
      RunSpec spec;
      spec.config = run_model.config();
      spec.len = run_len;
      if (!run_tokens_arg.empty()) {
        spec.tokens = parse_token_list(run_tokens_arg);
        if (run->count("--len") == 0) spec.len = spec.tokens->size();
      }
      spec.first_token = run_first == "special" ? FirstToken::special : FirstToken::random;
      spec.mask_rows = run_mask_rows;
      if (!run_pe_swap.empty()) spec.pe_swap = parse_pe_swap(run_pe_swap);
      if (!run_model_dir.empty()) spec.model_dir = run_model_dir;
      spec.out = run_out;
      cmd_run(spec, std::cout);
    } else if (analyze->parsed()) {
      analyze_spec.capture = analyze_capture;
      analyze_spec.out = analyze_out;
      analyze_spec.layer = analyze_layer;
      analyze_spec.head = analyze_head;
      analyze_spec.query_row = analyze_query;
      cmd_analyze(analyze_spec, std::cout);
    } else if (synth->parsed()) {
      synth_spec.config = synth_model.config();
      synth_spec.out = synth_out;
      cmd_synth(synth_spec, std::cout);
    } else if (check->parsed()) {
      return cmd_export_check(check_dir, std::cout).ok() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
