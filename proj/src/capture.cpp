#include "waiverlab/capture.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <regex>
#include <set>

#include "waiverlab/error.hpp"

namespace waiverlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "waiverlab-capture";
constexpr int kVersion = 1;

void encode_le(std::span<const float> values, std::vector<char>& bytes) {
  bytes.resize(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    bytes[4 * i + 0] = static_cast<char>(u & 0xffu);
    bytes[4 * i + 1] = static_cast<char>((u >> 8) & 0xffu);
    bytes[4 * i + 2] = static_cast<char>((u >> 16) & 0xffu);
    bytes[4 * i + 3] = static_cast<char>((u >> 24) & 0xffu);
  }
}

std::vector<float> decode_le(const std::vector<char>& bytes) {
  std::vector<float> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto b = [&](std::size_t k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])); };
    values[i] = std::bit_cast<float>(b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24));
  }
  return values;
}

std::string file_for(const std::string& name) { return name + ".bin"; }

}  // namespace

std::vector<std::size_t> CaptureMetadata::intervened_positions() const {
  std::set<std::size_t> s;
  for (const auto& iv : interventions) s.insert(iv.position);
  return {s.begin(), s.end()};
}

bool valid_tensor_name(std::string_view name) {
  static const std::regex grammar("^[a-z0-9_]+(\\.[a-z0-9_]+)*$");
  return std::regex_match(name.begin(), name.end(), grammar);
}

void Capture::add(const std::string& name, Tensor tensor) {
  if (!valid_tensor_name(name)) throw ManifestError("invalid tensor name '" + name + "'");
  if (tensor.empty()) throw ManifestError("tensor '" + name + "' is empty");
  if (!tensors_.emplace(name, std::move(tensor)).second) {
    throw ManifestError("tensor name collision: '" + name + "'");
  }
}

const Tensor& Capture::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw IncompleteCaptureError("capture is missing tensor '" + name + "'");
  return it->second;
}

namespace names {
std::string attn_weights(std::size_t layer, std::size_t head) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + ".attn_weights";
}
std::string value(std::size_t layer, std::size_t head) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + ".v";
}
std::string query(std::size_t layer, std::size_t head) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + ".q";
}
std::string key(std::size_t layer, std::size_t head) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + ".k";
}
std::string hidden(std::size_t layer) { return "layer" + std::to_string(layer) + ".hidden"; }
std::string ffn_out(std::size_t layer) { return "layer" + std::to_string(layer) + ".ffn_out"; }
}  // namespace names

json metadata_to_json(const CaptureMetadata& meta) {
  json ivs = json::array();
  for (const auto& iv : meta.interventions) {
    json e = {{"kind", iv.kind}, {"position", iv.position}};
    if (iv.source) e["source"] = *iv.source;
    ivs.push_back(std::move(e));
  }
  return json{{"regime", meta.regime},     {"model_name", meta.model_name},     {"source", meta.source},
              {"interventions", ivs},      {"model_config", meta.model_config}, {"extra", meta.extra}};
}

CaptureMetadata metadata_from_json(const json& j) {
  if (!j.is_object()) throw ManifestError("manifest 'metadata' must be an object");
  CaptureMetadata meta;
  try {
    meta.regime = j.value("regime", "");
    meta.model_name = j.value("model_name", "");
    meta.source = j.value("source", "");
    if (j.contains("interventions")) {
      for (const auto& e : j.at("interventions")) {
        Intervention iv;
        iv.kind = e.at("kind").get<std::string>();
        iv.position = e.at("position").get<std::size_t>();
        if (e.contains("source") && !e.at("source").is_null()) iv.source = e.at("source").get<std::size_t>();
        meta.interventions.push_back(std::move(iv));
      }
    }
    if (j.contains("model_config")) meta.model_config = j.at("model_config");
    if (j.contains("extra")) meta.extra = j.at("extra");
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed metadata: ") + e.what());
  }
  return meta;
}

void write_capture(const Capture& capture, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create capture directory " + dir.string() + ": " + ec.message());

  std::vector<fs::path> stale;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && (entry.path().extension() == ".bin" || entry.path().filename() == "manifest.json")) {
      stale.push_back(entry.path());
    }
  }
  for (const auto& p : stale) fs::remove(p, ec);
  if (ec) throw IoError("cannot clear capture directory " + dir.string() + ": " + ec.message());

  json entries = json::array();
  std::vector<char> bytes;
  for (const auto& [name, tensor] : capture.tensors()) {
    const fs::path path = dir / file_for(name);
    encode_le(tensor.data(), bytes);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing tensor '" + name + "' to " + path.string());
    entries.push_back({{"name", name}, {"shape", tensor.shape()}, {"dtype", "f32"}, {"file", file_for(name)}});
  }

  const json manifest = {{"format", kFormat},
                         {"version", kVersion},
                         {"metadata", metadata_to_json(capture.metadata)},
                         {"tensors", entries}};
  const fs::path mpath = dir / "manifest.json";
  std::ofstream out(mpath, std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + mpath.string());
}

Capture read_capture(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw LoadError("cannot open manifest " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError("manifest " + mpath.string() + " is not valid JSON: " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") || !manifest.at("tensors").is_array()) {
    throw ManifestError("manifest " + mpath.string() + " has no 'tensors' array");
  }
  if (manifest.contains("format") && manifest.at("format") != kFormat) {
    throw ManifestError("manifest format is not '" + std::string(kFormat) + "'");
  }

  Capture capture;
  if (manifest.contains("metadata")) capture.metadata = metadata_from_json(manifest.at("metadata"));

  for (const auto& e : manifest.at("tensors")) {
    std::string name, dtype, file;
    Shape shape;
    try {
      name = e.at("name").get<std::string>();
      dtype = e.at("dtype").get<std::string>();
      file = e.value("file", file_for(name));
      shape = e.at("shape").get<Shape>();
    } catch (const json::exception& ex) {
      throw ManifestError(std::string("malformed tensor entry: ") + ex.what());
    }
    if (dtype != "f32") throw UnsupportedDtypeError("tensor '" + name + "': unsupported dtype '" + dtype + "'");
    if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](std::size_t d) { return d == 0; })) {
      throw ManifestError("tensor '" + name + "': invalid shape " + shape_to_string(shape));
    }
    if (file.find('/') != std::string::npos || file.find('\\') != std::string::npos) {
      throw ManifestError("tensor '" + name + "': file must be a plain relative name, got '" + file + "'");
    }
    std::size_t expected = 4;
    for (auto d : shape) expected *= d;

    const fs::path path = dir / file;
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw LoadError("tensor '" + name + "': missing file " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected) {
      throw LengthMismatchError("tensor '" + name + "': expected " + std::to_string(expected) + " bytes for shape " +
                                shape_to_string(shape) + ", file has " + std::to_string(bytes.size()));
    }
    capture.add(name, Tensor(shape, decode_le(bytes)));
  }
  return capture;
}

}  // namespace waiverlab
