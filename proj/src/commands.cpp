#include "waiverlab/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <set>

#include "waiverlab/attention.hpp"
#include "waiverlab/error.hpp"
#include "waiverlab/report.hpp"

namespace waiverlab {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTokenStream = 0x9e3779b97f4a7c15ull;

std::size_t resolve_pe_source(const PeSwapSpec& swap, std::size_t max_len) {
  if (swap.source == "first") return 0;
  if (swap.source == "last") return max_len - 1;
  try {
    std::size_t used = 0;
    const auto v = std::stoul(swap.source, &used);
    if (used == swap.source.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("pe-swap source must be 'first', 'last' or an index, got '" + swap.source + "'");
}

void write_text(const fs::path& path, const std::string& text, std::vector<fs::path>& files) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
  files.push_back(path);
}

std::size_t full_scale_index(std::size_t desk, std::size_t len) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(desk) * kFullScaleLength / len));
}

ModelWeights build_weights(const RunSpec& spec) {
  if (spec.model_dir) {
    ModelWeights w = load_model(read_capture(*spec.model_dir));
    if (w.config.regime != spec.config.regime) {
      throw ConfigError("model in " + spec.model_dir->string() + " is " + to_string(w.config.regime) +
                        ", run requested " + to_string(spec.config.regime));
    }
    return w;
  }
  return init_random_model(spec.config);
}

}  // namespace

void RunSpec::validate() const {
  config.validate();
  if (len == 0) throw ConfigError("--len must be at least 1");
  if (tokens && tokens->size() != len) {
    throw ConfigError("--tokens has " + std::to_string(tokens->size()) + " ids but --len is " + std::to_string(len));
  }
  if (!mask_rows.empty() && !config.causal()) throw ConfigError("--mask-row requires the causal preset");
  if (pe_swap && config.causal()) throw ConfigError("--pe-swap requires the global preset");
  for (std::size_t k : mask_rows) {
    if (k >= len) throw ConfigError("--mask-row " + std::to_string(k) + " is outside a sequence of length " +
                                    std::to_string(len));
  }
  if (!config.causal() && len > config.max_len) {
    throw ConfigError("--len " + std::to_string(len) + " exceeds max_len " + std::to_string(config.max_len));
  }
  if (pe_swap) {
    const std::size_t src = resolve_pe_source(*pe_swap, config.max_len);
    if (pe_swap->target >= config.max_len || src >= config.max_len) {
      throw ConfigError("--pe-swap indices must be below max_len " + std::to_string(config.max_len));
    }
  }
  if (first_token == FirstToken::special && config.vocab_size <= kSpecialStartToken) {
    throw ConfigError("vocabulary too small for the special start token");
  }
  if (!tokens && config.vocab_size <= kFirstRandomToken) {
    throw ConfigError("vocabulary too small for random tokens");
  }
}

std::vector<std::size_t> run_tokens(const RunSpec& spec, std::size_t vocab_size) {
  std::vector<std::size_t> ids;
  if (spec.tokens) {
    ids = *spec.tokens;
  } else {
    std::mt19937_64 gen(spec.config.seed ^ kTokenStream);
    ids.resize(spec.len);
    for (auto& id : ids) id = kFirstRandomToken + static_cast<std::size_t>(gen() % (vocab_size - kFirstRandomToken));
  }
  if (spec.first_token == FirstToken::special) ids[0] = kSpecialStartToken;
  return ids;
}

Capture cmd_run(const RunSpec& spec, std::ostream& log) {
  spec.validate();
  ModelWeights weights = build_weights(spec);
  const auto& cfg = weights.config;

  if (spec.pe_swap) {
    const std::size_t src = resolve_pe_source(*spec.pe_swap, cfg.max_len);
    weights.pe = swap_pe_row(*weights.pe, spec.pe_swap->target, src);
    log << "pe-swap: row " << spec.pe_swap->target << " <- row " << src << " (full-scale analog "
        << full_scale_index(spec.pe_swap->target, cfg.max_len) << " <- "
        << full_scale_index(src, cfg.max_len) << " at max_len " << kFullScaleLength << ")\n";
  }

  const auto ids = run_tokens(spec, cfg.vocab_size);
  MaskMatrix mask = cfg.causal() ? build_causal_mask(ids.size()) : build_global_mask(ids.size());
  for (std::size_t k : spec.mask_rows) {
    mask = modify_mask_row(mask, k);
    log << "mask-row: position " << k << " self-only at every layer (full-scale analog "
        << full_scale_index(k, ids.size()) << " of L=" << kFullScaleLength << ")\n";
  }

  ForwardResult result = forward(weights, ids, mask, true);
  Capture& cap = result.capture;
  cap.metadata.extra["token_source"] =
      spec.tokens ? "fixed" : (spec.first_token == FirstToken::special ? "special_first" : "random");
  cap.metadata.extra["desk_scale"] = {{"length", ids.size()}, {"full_scale_length", kFullScaleLength}};
  write_capture(cap, spec.out);
  log << "run: " << to_string(cfg.regime) << ", L=" << ids.size() << ", " << cfg.num_layers << " layers x "
      << cfg.num_heads << " heads -> " << spec.out.string() << "\n";
  return cap;
}

AnalyzeOutput cmd_analyze(const AnalyzeSpec& spec, std::ostream& log) {
  const Capture cap = read_capture(spec.capture);
  const auto heads = captured_heads(cap);

  std::vector<std::string> missing;
  if (heads.empty()) missing.push_back("layer{i}.head{h}.attn_weights");
  for (const auto& [l, h] : heads) {
    if (!cap.contains(names::value(l, h))) missing.push_back(names::value(l, h));
  }
  if (spec.layer || spec.head) {
    const bool any = std::any_of(heads.begin(), heads.end(), [&](const auto& lh) {
      return (!spec.layer || lh.first == *spec.layer) && (!spec.head || lh.second == *spec.head);
    });
    if (!any) {
      missing.push_back(names::attn_weights(spec.layer.value_or(0), spec.head.value_or(0)));
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IncompleteCaptureError("capture " + spec.capture.string() + " is missing: " + list);
  }

  AnalyzeOutput result;
  result.report = detect_waivers(cap, spec.thresholds);
  const WaiverReport& report = result.report;
  const auto& intervened = report.intervened_positions;

  std::error_code ec;
  fs::create_directories(spec.out, ec);
  if (ec) throw IoError("cannot create output directory " + spec.out.string() + ": " + ec.message());

  {
    const fs::path csv = spec.out / "waiver_report.csv";
    std::ofstream out(csv, std::ios::trunc);
    write_report_csv(report, out);
    if (!out) throw IoError("failed writing " + csv.string());
    result.files.push_back(csv);
  }

  for (const auto& [l, h] : heads) {
    if ((spec.layer && l != *spec.layer) || (spec.head && h != *spec.head)) continue;
    const Tensor& w = cap.get(names::attn_weights(l, h));
    const std::size_t query = spec.query_row.value_or(w.rows() - 1);
    const std::string tag = "layer" + std::to_string(l) + "_head" + std::to_string(h);
    write_text(spec.out / ("attn_scatter_" + tag + ".svg"),
               render_svg(attention_scatter_plot(w, query, intervened, "attention, " + tag)), result.files);

    std::vector<double> norms;
    for (const auto& r : report.rows) {
      if (r.layer == l && r.head == h) norms.push_back(r.v_l2);
    }
    write_text(spec.out / ("vnorm_" + tag + ".svg"),
               render_svg(norm_profile_plot(norms, intervened, "V L2 norms, " + tag, "L2 norm")), result.files);
  }

  if (cap.contains(names::kPeTable)) {
    LearnablePE pe(cap.get(names::kPeTable));
    std::vector<double> norms;
    for (const auto& [pos, n] : pe_norm_profile(pe)) norms.push_back(n);
    std::vector<std::size_t> marked;
    for (const auto& iv : cap.metadata.interventions) {
      if (iv.kind == "pe_swap") {
        marked.push_back(iv.position);
        log << "pe-swap row " << iv.position << ": L2 " << norms.at(iv.position);
        if (iv.source) log << " (source row " << *iv.source << ": " << norms.at(*iv.source) << ")";
        log << "\n";
      }
    }
    write_text(spec.out / "pe_norm.svg",
               render_svg(norm_profile_plot(norms, marked, "learnable PE L2 norms", "L2 norm")), result.files);
  }

  std::set<std::size_t> layers;
  for (const auto& [l, h] : heads) layers.insert(l);
  for (std::size_t l : layers) {
    if (spec.layer && l != *spec.layer) continue;
    if (!cap.contains(names::hidden(l))) continue;
    const Tensor& hidden = cap.get(names::hidden(l));
    if (spec.hidden_position >= hidden.rows()) continue;
    const std::string tag = "layer" + std::to_string(l) + "_pos" + std::to_string(spec.hidden_position);
    write_text(spec.out / ("hidden_" + tag + ".svg"),
               render_svg(hidden_dims_plot(hidden, spec.hidden_position, "hidden state, " + tag)), result.files);
  }

  log << "analyze: regime " << report.regime << ", sink_threshold " << report.thresholds.sink_threshold
      << ", vnorm_quantile " << report.thresholds.vnorm_quantile << "\n";
  for (std::size_t l : layers) {
    log << "  layer " << l << " waivers:";
    const auto pos = report.waiver_positions(l);
    if (pos.empty()) log << " none";
    for (std::size_t p : pos) log << " " << p << " (" << report.heads_flagging(l, p) << "/" << report.num_heads << " heads)";
    log << "\n";
  }
  if (!intervened.empty()) {
    log << "  intervened positions:";
    for (std::size_t p : intervened) log << " " << p;
    log << "\n";
  }
  return result;
}

SynthSummary cmd_synth(const SynthSpec& spec, std::ostream& log) {
  if (spec.len == 0) throw ConfigError("--len must be at least 1");
  if (!spec.config.causal() && spec.len > spec.config.max_len) {
    throw ConfigError("--len exceeds max_len");
  }
  if (spec.waiver_position >= spec.len) throw ConfigError("--waiver-position outside the sequence");
  const ModelWeights weights = build_synthetic_waiver_model(spec.config, spec.waiver_token);
  write_capture(save_model(weights), spec.out / "model");

  const auto ids = synthetic_sequence(spec.config, spec.waiver_token, spec.waiver_position, spec.len,
                                      spec.config.seed ^ kTokenStream);
  const MaskMatrix mask = spec.config.causal() ? build_causal_mask(ids.size()) : build_global_mask(ids.size());
  ForwardResult fr = forward(weights, ids, mask, true);
  fr.capture.metadata.model_name = "synthetic_waiver_" + to_string(spec.config.regime);
  fr.capture.metadata.extra["waiver_token"] = spec.waiver_token;
  fr.capture.metadata.extra["waiver_position"] = spec.waiver_position;
  write_capture(fr.capture, spec.out / "capture");

  SynthSummary s;
  s.sink = 1.0;
  const auto regime = regime_from_string(spec.config.attention_regime());
  const std::size_t j = spec.waiver_position;
  for (std::size_t h = 0; h < spec.config.num_heads; ++h) {
    const Tensor& w = fr.capture.get(names::attn_weights(0, h));
    const Tensor& v = fr.capture.get(names::value(0, h));
    s.sink = std::min(s.sink, sink_score(w, j, regime));
    std::vector<double> l2s;
    for (const auto& e : v_norm_profile(v)) l2s.push_back(e.l2);
    const double median = quantile(l2s, 0.5);
    s.v_ratio = std::max(s.v_ratio, median > 0 ? l2s[j] / median : 0.0);
    for (const auto& d : leave_one_out_delta(w, v, j))
      if (d) s.max_loo_delta = std::max(s.max_loo_delta, *d);
    for (const auto& c : contribution_share(w, v, j))
      if (c) s.max_contribution_share = std::max(s.max_contribution_share, *c);
  }
  s.waiver_positions = detect_waivers(fr.capture).waiver_positions(0);

  log << "synth: waiver token " << spec.waiver_token << " at position " << j << ", L=" << spec.len << "\n"
      << "  min sink_score over layer-0 heads: " << s.sink << "\n"
      << "  max v_l2(j*)/median: " << s.v_ratio << "\n"
      << "  max leave-one-out delta: " << s.max_loo_delta << "\n"
      << "  max contribution share of j*: " << s.max_contribution_share << "\n"
      << "  layer-0 waiver positions:";
  for (std::size_t p : s.waiver_positions) log << " " << p;
  log << "\n  wrote " << (spec.out / "model").string() << " and " << (spec.out / "capture").string() << "\n";
  return s;
}

ExportCheckResult cmd_export_check(const fs::path& dir, std::ostream& log) {
  ExportCheckResult r;
  Capture cap;
  try {
    cap = read_capture(dir);
  } catch (const Error& e) {
    r.errors.push_back(e.what());
    log << "export-check: FAIL\n  error: " << e.what() << "\n";
    return r;
  }

  const auto& meta = cap.metadata;
  if (meta.regime != "causal" && meta.regime != "global") {
    r.errors.push_back("metadata.regime must be 'causal' or 'global', got '" + meta.regime + "'");
  }
  if (meta.source != "toy" && meta.source != "export") {
    r.warnings.push_back("metadata.source is '" + meta.source + "', expected 'toy' or 'export'");
  }
  if (meta.model_name.empty()) r.warnings.push_back("metadata.model_name is empty");

  const auto heads = captured_heads(cap);
  if (heads.empty()) r.errors.push_back("no layer{i}.head{h}.attn_weights tensors");
  std::optional<std::size_t> len;
  for (const auto& [l, h] : heads) {
    const std::string wn = names::attn_weights(l, h);
    const Tensor& w = cap.get(wn);
    if (w.rank() != 2 || w.rows() != w.cols()) {
      r.errors.push_back(wn + " is not square: " + shape_to_string(w.shape()));
      continue;
    }
    if (len && *len != w.rows()) r.errors.push_back(wn + " length differs from other heads");
    len = w.rows();
    if (!cap.contains(names::value(l, h))) {
      r.errors.push_back("missing " + names::value(l, h));
    } else {
      const Tensor& v = cap.get(names::value(l, h));
      if (v.rank() != 2 || v.rows() != w.rows()) r.errors.push_back(names::value(l, h) + " row count mismatch");
    }
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s = 0.0;
      for (float x : w.row(i)) {
        s += x;
        if (x < 0.0f) r.errors.push_back(wn + " has a negative weight in row " + std::to_string(i));
      }
      if (std::fabs(s - 1.0) > 1e-5) {
        r.errors.push_back(wn + " row " + std::to_string(i) + " sums to " + std::to_string(s));
        break;
      }
    }
    if (meta.regime == "causal") {
      std::set<std::size_t> self_only;
      for (const auto& iv : meta.interventions)
        if (iv.kind == "mask_row") self_only.insert(iv.position);
      for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = i + 1; j < w.cols(); ++j) {
          if (w.at(i, j) != 0.0f) {
            r.errors.push_back(wn + " attends to a future key at (" + std::to_string(i) + "," + std::to_string(j) + ")");
            i = w.rows();
            break;
          }
        }
      }
      for (std::size_t k : self_only) {
        if (k < w.rows() && w.at(k, k) != 1.0f) {
          r.errors.push_back(wn + " row " + std::to_string(k) + " is not one-hot despite a mask_row intervention");
        }
      }
    }
  }
  for (const auto& [l, h] : heads) {
    if (!cap.contains(names::hidden(l))) {
      r.warnings.push_back("no " + names::hidden(l) + " (hidden-state plots unavailable)");
      break;
    }
  }
  if (meta.regime == "global" && !cap.contains(names::kPeTable)) {
    r.warnings.push_back("global capture without pe.table (PE norm profile unavailable)");
  }
  for (const auto& iv : meta.interventions) {
    if (iv.kind != "pe_swap") continue;
    if (!cap.contains(names::kPeTable) || !iv.source) {
      r.errors.push_back("pe_swap intervention without pe.table or source index");
      continue;
    }
    const Tensor& t = cap.get(names::kPeTable);
    if (iv.position >= t.rows() || *iv.source >= t.rows()) {
      r.errors.push_back("pe_swap indices outside pe.table");
      continue;
    }
    const Tensor a({t.cols()}, std::vector<float>(t.row(iv.position).begin(), t.row(iv.position).end()));
    const Tensor b({t.cols()}, std::vector<float>(t.row(*iv.source).begin(), t.row(*iv.source).end()));
    if (!a.bit_equal(b)) {
      r.errors.push_back("pe.table row " + std::to_string(iv.position) + " does not equal row " +
                         std::to_string(*iv.source) + " despite a pe_swap intervention");
    }
  }

  log << "export-check: " << (r.ok() ? "OK" : "FAIL") << " (" << cap.tensors().size() << " tensors, "
      << heads.size() << " heads, regime " << meta.regime << ", source " << meta.source << ")\n";
  for (const auto& e : r.errors) log << "  error: " << e << "\n";
  for (const auto& w : r.warnings) log << "  warning: " << w << "\n";
  return r;
}

}  // namespace waiverlab
