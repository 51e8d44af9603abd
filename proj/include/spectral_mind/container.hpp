#pragma once

// Binary container envelope shared by all persisted artifacts:
//
//   offset 0   8 bytes   magic (identifies the artifact type)
//   offset 8   4 bytes   header length L, unsigned little-endian
//   offset 12  L bytes   UTF-8 JSON header
//   offset 12+L          payload, IEEE-754 float32 little-endian, row-major
//
// The header must carry "payload_count" (number of float32 values).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spectral_mind/error.hpp"

namespace smind {

using json = nlohmann::json;

namespace magic {
inline constexpr std::string_view recording = "SMINDRC1";
inline constexpr std::string_view epochs = "SMINDEP1";
inline constexpr std::string_view spectrograms = "SMINDSP1";
inline constexpr std::string_view model = "SMINDMD1";
}  // namespace magic

inline constexpr int kSchemaVersion = 1;

struct Container {
  json header;
  std::vector<float> payload;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

inline void write_container(const std::string& path, std::string_view magic_tag, json header,
                            std::span<const float> payload) {
  header["payload_count"] = payload.size();
  const std::string text = header.dump();
  std::string head;
  head.reserve(12 + text.size());
  head.append(magic_tag.data(), magic_tag.size());
  detail::put_u32(head, static_cast<std::uint32_t>(text.size()));
  head += text;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(head.data(), static_cast<std::streamsize>(head.size()));

  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
  } else {
    std::string buf;
    buf.reserve(payload.size() * 4);
    for (float f : payload) detail::put_u32(buf, std::bit_cast<std::uint32_t>(f));
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

inline Container read_container(const std::string& path, std::string_view magic_tag) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());

  const auto fail = [&](std::size_t offset, const std::string& what) {
    return DataError(path + ": offset " + std::to_string(offset) + ": " + what);
  };

  if (bytes.size() < 12) throw fail(0, "file too short for container preamble");
  if (std::memcmp(bytes.data(), magic_tag.data(), 8) != 0)
    throw fail(0, "bad magic, expected '" + std::string(magic_tag) + "'");
  const std::uint32_t hlen = detail::get_u32(bytes.data() + 8);
  if (12 + std::size_t(hlen) > bytes.size()) throw fail(8, "header length exceeds file size");

  Container c;
  try {
    c.header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const json::exception& e) {
    throw fail(12, std::string("malformed JSON header: ") + e.what());
  }
  if (!c.header.is_object()) throw fail(12, "header is not a JSON object");
  if (!c.header.contains("schema_version") || c.header["schema_version"] != kSchemaVersion)
    throw fail(12, "header field 'schema_version' missing or unsupported");
  if (!c.header.contains("payload_count") || !c.header["payload_count"].is_number_unsigned())
    throw fail(12, "header field 'payload_count' missing");

  const std::size_t count = c.header["payload_count"].get<std::size_t>();
  const std::size_t start = 12 + hlen;
  if (bytes.size() - start != count * 4)
    throw fail(start, "payload holds " + std::to_string((bytes.size() - start) / 4) +
                          " floats, header declares " + std::to_string(count));
  c.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    c.payload[i] = std::bit_cast<float>(detail::get_u32(bytes.data() + start + 4 * i));
  return c;
}

// Header accessor that names the offending field on failure.
template <class T>
T header_field(const json& header, const char* name, const std::string& path) {
  if (!header.contains(name))
    throw DataError(path + ": offset 12: header field '" + name + "' missing");
  try {
    return header.at(name).get<T>();
  } catch (const json::exception&) {
    throw DataError(path + ": offset 12: header field '" + name + "' has wrong type");
  }
}

}  // namespace smind
