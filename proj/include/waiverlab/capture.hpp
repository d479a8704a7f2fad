#pragma once

// On-disk capture format shared with external producers.
//
//   <dir>/manifest.json   metadata block + one entry per tensor
//   <dir>/<name>.bin      raw little-endian IEEE-754 f32, row-major, no header
//
// Manifest layout:
//   {
//     "format": "waiverlab-capture", "version": 1,
//     "metadata": { "regime": "causal"|"global", "model_name": ..., "source": "toy"|"export",
//                   "interventions": [ {"kind": "mask_row", "position": k},
//                                      {"kind": "pe_swap", "position": t, "source": s}, ... ],
//                   "model_config": {...}, "extra": {...} },
//     "tensors": [ {"name": ..., "shape": [...], "dtype": "f32", "file": "<name>.bin"}, ... ]
//   }
//
// Tensor names are '.'-joined segments of [a-z0-9_].

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "waiverlab/tensor.hpp"

namespace waiverlab {

struct Intervention {
  std::string kind;  // "mask_row", "pe_swap", or producer-defined
  std::size_t position = 0;
  std::optional<std::size_t> source;
  bool operator==(const Intervention&) const = default;
};

struct CaptureMetadata {
  std::string regime;  // "causal" or "global"
  std::string model_name;
  std::string source = "toy";
  std::vector<Intervention> interventions;
  nlohmann::json model_config = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();

  // Positions touched by any intervention, sorted and unique.
  std::vector<std::size_t> intervened_positions() const;
};

bool valid_tensor_name(std::string_view name);

class Capture {
 public:
  CaptureMetadata metadata;

  // Throws ManifestError on an invalid name or a duplicate.
  void add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  // Throws IncompleteCaptureError naming the missing tensor.
  const Tensor& get(const std::string& name) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

namespace names {
std::string attn_weights(std::size_t layer, std::size_t head);
std::string value(std::size_t layer, std::size_t head);
std::string query(std::size_t layer, std::size_t head);
std::string key(std::size_t layer, std::size_t head);
std::string hidden(std::size_t layer);
std::string ffn_out(std::size_t layer);
inline constexpr const char* kEmbeddingOut = "emb.out";
inline constexpr const char* kPeTable = "pe.table";
inline constexpr const char* kTokenEmbedding = "emb.token";
inline constexpr const char* kTypeEmbedding = "emb.type";
inline constexpr const char* kTokenIds = "input.token_ids";
}  // namespace names

// Replaces manifest.json and every *.bin in `dir`, so the directory holds
// exactly what the manifest lists.
void write_capture(const Capture& capture, const std::filesystem::path& dir);
Capture read_capture(const std::filesystem::path& dir);

nlohmann::json metadata_to_json(const CaptureMetadata& meta);
CaptureMetadata metadata_from_json(const nlohmann::json& j);

}  // namespace waiverlab
