#include "wmnav/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "wmnav/dataset.hpp"
#include "wmnav/error.hpp"

namespace wmnav {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are stored in host order");

namespace {

constexpr char kMagic[] = "WMNAV1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

}  // namespace

void checkpoint_write(const NamedTensors& tensors, const fs::path& path) {
  std::set<std::string> seen;
  json header = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    WMNAV_REQUIRE(seen.insert(name).second, "duplicate tensor name '" + name + "'");
    const std::size_t bytes = t.size() * sizeof(float);
    header.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"byte_len", bytes}});
    offset += bytes;
  }
  std::string payload;
  payload.reserve(offset);
  for (const auto& [name, t] : tensors)
    payload.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  const std::uint32_t crc = crc32_bytes(payload.data(), payload.size());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, kMagicLen);
  out << header.dump() << "\n\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw Error("short write to checkpoint " + path.string());
}

NamedTensors checkpoint_read(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("missing checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (blob.size() < kMagicLen || blob.compare(0, kMagicLen, kMagic) != 0) throw FormatError("bad magic" + where);
  const std::size_t eol = blob.find('\n', kMagicLen);
  if (eol == std::string::npos || eol + 1 >= blob.size() || blob[eol + 1] != '\n')
    throw FormatError("malformed header" + where);
  json header;
  try {
    header = json::parse(blob.begin() + static_cast<std::ptrdiff_t>(kMagicLen), blob.begin() + static_cast<std::ptrdiff_t>(eol));
  } catch (const json::exception& e) {
    throw FormatError("malformed header" + where + ": " + e.what());
  }
  if (!header.is_array()) throw FormatError("header is not a list" + where);

  const std::size_t start = eol + 2;
  if (blob.size() < start + 4) throw IntegrityError("truncated payload" + where);
  const std::size_t payload_len = blob.size() - start - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, blob.data() + blob.size() - 4, 4);

  NamedTensors out;
  std::size_t expect_offset = 0;
  for (const auto& e : header) {
    std::string name;
    Shape shape;
    std::size_t offset = 0, bytes = 0;
    try {
      name = e.at("name").get<std::string>();
      shape = e.at("shape").get<Shape>();
      offset = e.at("offset").get<std::size_t>();
      bytes = e.at("byte_len").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw FormatError("malformed header entry" + where + ": " + ex.what());
    }
    for (int d : shape)
      if (d < 0) throw IntegrityError("tensor '" + name + "' has a negative dimension" + where);
    if (bytes != shape_numel(shape) * sizeof(float))
      throw IntegrityError("tensor '" + name + "' byte_len " + std::to_string(bytes) + " does not match shape " +
                           shape_str(shape) + where);
    if (offset != expect_offset || offset + bytes > payload_len)
      throw IntegrityError("tensor '" + name + "' offset/length outside the payload" + where);
    expect_offset += bytes;
    Tensor t(shape);
    std::memcpy(t.data(), blob.data() + start + offset, bytes);
    out.emplace_back(std::move(name), std::move(t));
  }
  if (expect_offset != payload_len) throw IntegrityError("payload length disagrees with header" + where);
  if (crc32_bytes(blob.data() + start, payload_len) != stored) throw ChecksumError("payload CRC mismatch" + where);
  return out;
}

NamedTensors snapshot(const std::vector<Parameter*>& params) {
  NamedTensors out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.emplace_back(p->name, p->value);
  return out;
}

bool has_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IntegrityError("checkpoint has no tensor '" + name + "'");
}

void restore(const NamedTensors& tensors, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const Tensor& t = find_tensor(tensors, p->name);
    if (t.shape() != p->value.shape())
      throw IntegrityError("tensor '" + p->name + "' has shape " + shape_str(t.shape()) + ", expected " +
                           shape_str(p->value.shape()));
    p->value = t;
    p->zero_grad();
  }
}

}  // namespace wmnav
