#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rhythmvec/autograd.hpp"

namespace rhythmvec {

/// Serialized model: config, named float64 parameter arrays, provenance.
///
/// On disk: the magic line "RVEC1\n", a little-endian u64 header length, a
/// JSON header {kind, config, inventory, training_meta, parameters:[{name,
/// rows, cols}]}, then each parameter's values as little-endian float64 in
/// row-major order.
struct ModelCheckpoint {
  std::string kind;
  nlohmann::json config;
  std::vector<std::string> inventory;
  nn::ParameterStore parameters;
  nlohmann::json training_meta;
};

inline constexpr std::string_view kCheckpointMagic = "RVEC1\n";

std::string serialize_checkpoint(const ModelCheckpoint& checkpoint);
/// Throws ParseError on a bad magic string, truncation, or malformed header.
ModelCheckpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rhythmvec
