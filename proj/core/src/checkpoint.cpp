#include "rhythmvec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "rhythmvec/error.hpp"

namespace rhythmvec {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)]))
         << (8 * i);
  }
  return v;
}

}  // namespace

std::string serialize_checkpoint(const ModelCheckpoint& ck) {
  nlohmann::json header;
  header["kind"] = ck.kind;
  header["config"] = ck.config;
  header["inventory"] = ck.inventory;
  header["training_meta"] = ck.training_meta;
  auto& params = header["parameters"] = nlohmann::json::array();
  for (const auto& p : ck.parameters.all()) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  const std::string text = header.dump();

  std::string out(kCheckpointMagic);
  put_u64(out, text.size());
  out += text;
  for (const auto& p : ck.parameters.all()) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        put_u64(out, std::bit_cast<std::uint64_t>(p.value(r, c)));
      }
    }
  }
  return out;
}

ModelCheckpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw ParseError("checkpoint: missing RVEC1 magic");
  }
  std::size_t at = kCheckpointMagic.size();
  if (bytes.size() < at + 8) throw ParseError("checkpoint: truncated header length");
  const std::uint64_t header_len = get_u64(bytes, at);
  at += 8;
  if (bytes.size() - at < header_len) throw ParseError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(at, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header: ") + e.what());
  }
  at += header_len;

  ModelCheckpoint ck;
  try {
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
    ck.inventory = header.at("inventory").get<std::vector<std::string>>();
    ck.training_meta = header.at("training_meta");
    for (const auto& entry : header.at("parameters")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const auto count = static_cast<std::size_t>(rows * cols);
      if (rows < 0 || cols < 0 || bytes.size() - at < 8 * count) {
        throw ParseError("checkpoint: truncated parameter data");
      }
      nn::Matrix value(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          value(r, c) = std::bit_cast<double>(get_u64(bytes, at));
          at += 8;
        }
      }
      ck.parameters.add(entry.at("name").get<std::string>(), std::move(value));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (at != bytes.size()) throw ParseError("checkpoint: trailing bytes after parameter data");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(checkpoint);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace rhythmvec
