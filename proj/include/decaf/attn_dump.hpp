#pragma once

// Attention-dump container: a JSON metadata sidecar plus a raw blob of
// per-layer attention tensors (f32 little-endian, layer-major, then
// head, row, col). See docs/formats.md.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "decaf/error.hpp"

namespace decaf {

inline constexpr int kFormatVersion = 1;
inline constexpr double kRowSumTolerance = 1e-4;

enum class Modality { video, frame };
enum class PromptKind { object, background };

inline const char* to_string(Modality m) { return m == Modality::video ? "video" : "frame"; }
inline const char* to_string(PromptKind k) {
  return k == PromptKind::object ? "object" : "background";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "video") return Modality::video;
  if (s == "frame") return Modality::frame;
  throw FormatError("unknown modality '" + s + "'");
}

inline PromptKind parse_prompt_kind(const std::string& s) {
  if (s == "object") return PromptKind::object;
  if (s == "background") return PromptKind::background;
  throw FormatError("unknown prompt_kind '" + s + "'");
}

/// Token grid of the visual block: frames x patch rows x patch cols.
struct TokenGrid {
  std::size_t frames = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t count() const { return frames * height * width; }
  bool operator==(const TokenGrid&) const = default;
};

/// Per-layer multi-head attention captured from one forward pass.
///
/// `layers[l]` holds heads x seq_len x seq_len values, row = query token,
/// column = key token. Token layout is
/// [prefix (visual_start tokens)][visual block][text_count trailing tokens].
struct AttentionStack {
  std::vector<std::vector<float>> layers;
  int first_stored_layer = 0;
  int num_model_layers = 0;
  std::size_t num_heads = 0;
  std::size_t seq_len = 0;
  std::size_t visual_start = 0;
  std::size_t visual_count = 0;
  std::size_t text_count = 0;
  std::size_t query_index = 0;
  TokenGrid grid;
  Modality modality = Modality::video;
  PromptKind prompt_kind = PromptKind::object;
  std::optional<int> frame_index;
  std::string capture_notes;

  std::size_t layer_size() const { return num_heads * seq_len * seq_len; }

  float at(std::size_t layer, std::size_t head, std::size_t row, std::size_t col) const {
    return layers[layer][(head * seq_len + row) * seq_len + col];
  }
  float& at(std::size_t layer, std::size_t head, std::size_t row, std::size_t col) {
    return layers[layer][(head * seq_len + row) * seq_len + col];
  }

  int last_layer() const { return first_stored_layer + static_cast<int>(layers.size()) - 1; }

  bool operator==(const AttentionStack&) const = default;
};

namespace detail {

inline void check_layout(const AttentionStack& s) {
  if (s.num_heads == 0 || s.seq_len == 0) throw ValidationError("empty attention tensor");
  if (s.layers.empty()) throw ValidationError("attention stack has no layers");
  if (s.first_stored_layer < 0) throw ValidationError("negative first_stored_layer");
  if (s.num_model_layers < s.first_stored_layer + static_cast<int>(s.layers.size()))
    throw ValidationError("num_model_layers smaller than stored layer range");
  if (s.grid.frames == 0 || s.grid.height == 0 || s.grid.width == 0)
    throw ValidationError("token grid has a zero dimension");
  if (s.visual_count != s.grid.count())
    throw ValidationError("visual_count " + std::to_string(s.visual_count) +
                          " does not match grid product " + std::to_string(s.grid.count()));
  if (s.modality == Modality::frame) {
    if (s.grid.frames != 1) throw ValidationError("frame dumps must have a single-frame grid");
    if (!s.frame_index) throw ValidationError("frame dump without frame_index");
    if (*s.frame_index < 0) throw ValidationError("negative frame_index");
  }
  if (s.visual_start + s.visual_count + s.text_count != s.seq_len)
    throw ValidationError("visual_start + visual_count + text_count != seq_len");
  if (s.query_index >= s.seq_len) throw ValidationError("query_index out of range");
  if (s.query_index >= s.visual_start && s.query_index < s.visual_start + s.visual_count)
    throw ValidationError("query_index lies inside the visual block");
}

inline void check_values(const AttentionStack& s) {
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    if (s.layers[l].size() != s.layer_size())
      throw ValidationError("layer " + std::to_string(l) + " has wrong element count");
    for (std::size_t h = 0; h < s.num_heads; ++h) {
      for (std::size_t r = 0; r < s.seq_len; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < s.seq_len; ++c) {
          const float v = s.at(l, h, r, c);
          if (!std::isfinite(v))
            throw ValidationError("non-finite value at (layer " + std::to_string(l) + ", head " +
                                  std::to_string(h) + ", row " + std::to_string(r) + ")");
          if (v < 0.0f)
            throw ValidationError("negative value at (layer " + std::to_string(l) + ", head " +
                                  std::to_string(h) + ", row " + std::to_string(r) + ")");
          sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
          std::ostringstream msg;
          msg << "row-sum violation at (layer " << l << ", head " << h << ", row " << r
              << "): sum " << sum;
          throw ValidationError(msg.str());
        }
      }
    }
  }
}

inline std::uint32_t float_bits_le(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return bits;
}

inline void append_f32le(std::vector<char>& out, float v) {
  const std::uint32_t bits = float_bits_le(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float load_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const char* data, std::size_t n) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw FormatError("write failed for " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

inline std::size_t get_count(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_unsigned())
    throw FormatError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::string get_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw FormatError(std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

inline void check_header(const nlohmann::json& meta, const char* kind) {
  if (!meta.is_object()) throw FormatError("metadata is not a JSON object");
  if (get_count(meta, "format_version") != static_cast<std::size_t>(kFormatVersion))
    throw FormatError("unsupported format_version");
  if (get_string(meta, "kind") != kind)
    throw FormatError(std::string("expected kind '") + kind + "'");
  if (get_string(meta, "dtype") != "f32le") throw FormatError("unsupported dtype");
}

inline std::filesystem::path blob_path_for(const std::filesystem::path& json_path) {
  if (json_path.extension() == ".bin")
    throw ValidationError("container metadata path must not end in .bin");
  auto blob = json_path;
  blob.replace_extension(".bin");
  return blob;
}

}  // namespace detail

/// Throws ValidationError if the stack violates any layout or value invariant.
inline void validate(const AttentionStack& stack) {
  detail::check_layout(stack);
  detail::check_values(stack);
}

/// Writes `<path>` (JSON metadata) and a sibling `.bin` blob.
inline void write_dump(const AttentionStack& stack, const std::filesystem::path& path) {
  validate(stack);
  const auto blob_path = detail::blob_path_for(path);

  std::vector<char> blob;
  blob.reserve(stack.layers.size() * stack.layer_size() * 4);
  for (const auto& layer : stack.layers)
    for (float v : layer) detail::append_f32le(blob, v);

  nlohmann::ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["kind"] = "attention_stack";
  meta["dtype"] = "f32le";
  meta["blob"] = blob_path.filename().string();
  meta["num_layers"] = stack.layers.size();
  meta["first_stored_layer"] = stack.first_stored_layer;
  meta["num_model_layers"] = stack.num_model_layers;
  meta["num_heads"] = stack.num_heads;
  meta["seq_len"] = stack.seq_len;
  meta["visual_start"] = stack.visual_start;
  meta["visual_count"] = stack.visual_count;
  meta["text_count"] = stack.text_count;
  meta["query_index"] = stack.query_index;
  meta["grid"] = {stack.grid.frames, stack.grid.height, stack.grid.width};
  meta["modality"] = to_string(stack.modality);
  meta["prompt_kind"] = to_string(stack.prompt_kind);
  meta["frame_index"] = stack.frame_index ? nlohmann::ordered_json(*stack.frame_index)
                                          : nlohmann::ordered_json(nullptr);
  meta["capture_notes"] = stack.capture_notes;

  const std::string text = meta.dump(2) + "\n";
  detail::write_file_bytes(blob_path, blob.data(), blob.size());
  detail::write_file_bytes(path, text.data(), text.size());
}

/// Parses and validates a container written by write_dump.
inline AttentionStack read_dump(const std::filesystem::path& path) {
  const auto meta = detail::read_json_file(path);
  AttentionStack s;
  std::size_t num_layers = 0;
  try {
    detail::check_header(meta, "attention_stack");
    num_layers = detail::get_count(meta, "num_layers");
    s.first_stored_layer = static_cast<int>(detail::get_count(meta, "first_stored_layer"));
    s.num_model_layers = static_cast<int>(detail::get_count(meta, "num_model_layers"));
    s.num_heads = detail::get_count(meta, "num_heads");
    s.seq_len = detail::get_count(meta, "seq_len");
    s.visual_start = detail::get_count(meta, "visual_start");
    s.visual_count = detail::get_count(meta, "visual_count");
    s.text_count = detail::get_count(meta, "text_count");
    s.query_index = detail::get_count(meta, "query_index");
    const auto& grid = meta.at("grid");
    if (!grid.is_array() || grid.size() != 3) throw FormatError("grid must have 3 entries");
    for (const auto& g : grid)
      if (!g.is_number_unsigned()) throw FormatError("grid entries must be non-negative integers");
    s.grid = {grid[0].get<std::size_t>(), grid[1].get<std::size_t>(), grid[2].get<std::size_t>()};
    s.modality = parse_modality(detail::get_string(meta, "modality"));
    s.prompt_kind = parse_prompt_kind(detail::get_string(meta, "prompt_kind"));
    const auto& fi = meta.at("frame_index");
    if (fi.is_null()) {
      s.frame_index.reset();
    } else if (fi.is_number_unsigned()) {
      s.frame_index = fi.get<int>();
    } else {
      throw FormatError("frame_index must be null or a non-negative integer");
    }
    if (meta.contains("capture_notes") && meta.at("capture_notes").is_string())
      s.capture_notes = meta.at("capture_notes").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  // Layout checks need the layer vector to exist; fill placeholders first.
  s.layers.assign(num_layers, {});
  try {
    detail::check_layout(s);
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  const auto blob_path = path.parent_path() / detail::get_string(meta, "blob");
  const auto blob = detail::read_file_bytes(blob_path);
  const std::size_t expected = num_layers * s.layer_size() * 4;
  if (blob.size() != expected)
    throw FormatError(blob_path.string() + ": truncated or oversized blob: expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(blob.size()));

  const char* p = blob.data();
  for (auto& layer : s.layers) {
    layer.resize(s.layer_size());
    for (float& v : layer) {
      v = detail::load_f32le(p);
      p += 4;
    }
  }
  detail::check_values(s);
  return s;
}

/// Ties the four families of dumps (object/background x video/frame) to one video.
struct DumpManifest {
  struct Key {
    Modality modality = Modality::video;
    PromptKind prompt_kind = PromptKind::object;
    std::optional<int> frame_index;

    auto operator<=>(const Key&) const = default;
  };

  std::string video_id;
  std::vector<int> sampled_frame_indices;
  int original_frame_count = 0;
  std::size_t frame_height = 0;
  std::size_t frame_width = 0;
  std::string object_category;
  std::map<Key, std::filesystem::path> entries;

  const std::filesystem::path& path_for(Modality m, PromptKind k,
                                        std::optional<int> frame = std::nullopt) const {
    const auto it = entries.find({m, k, frame});
    if (it == entries.end()) throw ValidationError("manifest has no entry for requested slot");
    return it->second;
  }
};

inline std::string slot_name(const DumpManifest::Key& k) {
  std::string s = std::string(to_string(k.modality)) + "/" + to_string(k.prompt_kind);
  if (k.frame_index) s += "[" + std::to_string(*k.frame_index) + "]";
  return s;
}

/// Checks slot coverage and frame-index monotonicity.
inline void validate(const DumpManifest& m) {
  if (m.original_frame_count <= 0) throw ValidationError("original_frame_count must be positive");
  if (m.sampled_frame_indices.empty()) throw ValidationError("no sampled frames");
  for (std::size_t i = 0; i < m.sampled_frame_indices.size(); ++i) {
    const int f = m.sampled_frame_indices[i];
    if (f < 0 || f >= m.original_frame_count)
      throw ValidationError("sampled frame index " + std::to_string(f) + " out of range");
    if (i > 0 && f <= m.sampled_frame_indices[i - 1])
      throw ValidationError("sampled_frame_indices must be strictly increasing");
  }
  std::vector<DumpManifest::Key> required = {
      {Modality::video, PromptKind::object, std::nullopt},
      {Modality::video, PromptKind::background, std::nullopt}};
  for (int f : m.sampled_frame_indices) {
    required.push_back({Modality::frame, PromptKind::object, f});
    required.push_back({Modality::frame, PromptKind::background, f});
  }
  for (const auto& key : required)
    if (!m.entries.contains(key)) throw ValidationError("missing manifest entry " + slot_name(key));
  if (m.entries.size() != required.size())
    throw ValidationError("manifest has entries for frames that were not sampled");
}

inline DumpManifest read_manifest(const std::filesystem::path& path) {
  const auto j = detail::read_json_file(path);
  DumpManifest m;
  const auto base = path.parent_path();
  try {
    if (!j.is_object()) throw FormatError("manifest is not a JSON object");
    if (detail::get_count(j, "format_version") != static_cast<std::size_t>(kFormatVersion))
      throw FormatError("unsupported format_version");
    m.video_id = detail::get_string(j, "video_id");
    m.object_category = j.value("object_category", std::string{});
    m.original_frame_count = static_cast<int>(detail::get_count(j, "original_frame_count"));
    const auto& size = j.at("frame_size");
    if (!size.is_array() || size.size() != 2) throw FormatError("frame_size must be [H, W]");
    m.frame_height = size[0].get<std::size_t>();
    m.frame_width = size[1].get<std::size_t>();
    for (const auto& f : j.at("sampled_frame_indices")) {
      if (!f.is_number_integer()) throw FormatError("sampled_frame_indices must be integers");
      m.sampled_frame_indices.push_back(f.get<int>());
    }
    for (const auto& e : j.at("entries")) {
      DumpManifest::Key key;
      key.modality = parse_modality(detail::get_string(e, "modality"));
      key.prompt_kind = parse_prompt_kind(detail::get_string(e, "prompt_kind"));
      if (e.contains("frame_index") && !e.at("frame_index").is_null())
        key.frame_index = e.at("frame_index").get<int>();
      if (key.modality == Modality::frame && !key.frame_index)
        throw FormatError("frame entry without frame_index");
      if (key.modality == Modality::video && key.frame_index)
        throw FormatError("video entry must not carry frame_index");
      const auto file = base / detail::get_string(e, "path");
      if (!m.entries.emplace(key, file).second)
        throw FormatError("duplicate manifest entry " + slot_name(key));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    validate(m);
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (const auto& [key, file] : m.entries)
    if (!std::filesystem::exists(file))
      throw FormatError(path.string() + ": dump for " + slot_name(key) + " not found: " +
                        file.string());
  return m;
}

/// Writes the manifest with entry paths made relative to the manifest's directory.
inline void write_manifest(const DumpManifest& m, const std::filesystem::path& path) {
  validate(m);
  const auto base = path.parent_path();
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["video_id"] = m.video_id;
  j["object_category"] = m.object_category;
  j["original_frame_count"] = m.original_frame_count;
  j["frame_size"] = {m.frame_height, m.frame_width};
  j["sampled_frame_indices"] = m.sampled_frame_indices;
  auto entries = nlohmann::ordered_json::array();
  for (const auto& [key, file] : m.entries) {
    nlohmann::ordered_json e;
    e["modality"] = to_string(key.modality);
    e["prompt_kind"] = to_string(key.prompt_kind);
    if (key.frame_index) e["frame_index"] = *key.frame_index;
    e["path"] = (file.is_absolute() ? std::filesystem::relative(file, base) : file)
                    .generic_string();
    entries.push_back(std::move(e));
  }
  j["entries"] = std::move(entries);
  const std::string text = j.dump(2) + "\n";
  detail::write_file_bytes(path, text.data(), text.size());
}

}  // namespace decaf
