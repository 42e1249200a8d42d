#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sst/networks.hpp"

// Checkpoint container: 8-byte magic, little-endian u32 header length, JSON
// header (format_version, kind, config, ordered tensor manifest), then the
// tensor payloads as raw little-endian f32 in manifest order. Running
// statistics are stored alongside trainable parameters, so save/load round
// trips reproduce inference bit for bit.

namespace sst {

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'T', 'C', 'K', 'P', 'T', '\x01'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

template <typename S>
inline void save_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& config,
                            const std::vector<ParamRef<S>>& params) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const ParamRef<S>& p : params)
    manifest.push_back({{"name", p.name},
                        {"shape", {p.value->n, p.value->c, p.value->h, p.value->w}},
                        {"dtype", "f32"}});
  const std::string header = nlohmann::json{{"format_version", kCheckpointVersion},
                                            {"kind", kind},
                                            {"config", config},
                                            {"tensors", manifest}}
                                 .dump();
  std::string blob;
  blob.reserve(8 + 4 + header.size());
  blob.append(kCheckpointMagic, 8);
  detail::put_u32(blob, static_cast<std::uint32_t>(header.size()));
  blob += header;
  for (const ParamRef<S>& p : params)
    for (S v : p.value->v) detail::put_f32(blob, static_cast<float>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  f.flush();
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// Header plus byte offset of the payload; used both for validation-and-load
// and for kind dispatch without loading tensors.
struct CheckpointHeader {
  nlohmann::json header;
  std::size_t payload_offset = 0;
};

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[8];
  if (!f.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("read_checkpoint: " + path + " is not a checkpoint (bad magic)");
  unsigned char lenb[4];
  if (!f.read(reinterpret_cast<char*>(lenb), 4)) throw std::runtime_error("read_checkpoint: truncated header length");
  const std::uint32_t len = detail::get_u32(lenb);
  if (len == 0 || len > (64u << 20)) throw std::runtime_error("read_checkpoint: implausible header length");
  std::string hs(len, '\0');
  if (!f.read(hs.data(), len)) throw std::runtime_error("read_checkpoint: truncated header");
  CheckpointHeader out;
  try {
    out.header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("read_checkpoint: header is not valid JSON: " + std::string(e.what()));
  }
  if (out.header.value("format_version", -1) != kCheckpointVersion)
    throw std::runtime_error("read_checkpoint: unsupported format_version");
  out.payload_offset = 8 + 4 + static_cast<std::size_t>(len);
  return out;
}

template <typename S>
inline void load_checkpoint(const std::string& path, const std::string& kind, const nlohmann::json& config,
                            const std::vector<ParamRef<S>>& params) {
  const CheckpointHeader ch = read_checkpoint_header(path);
  const std::string stored_kind = ch.header.value("kind", "");
  if (stored_kind != kind)
    throw std::runtime_error("load_checkpoint: kind mismatch: file holds '" + stored_kind + "', expected '" + kind +
                             "'");
  if (ch.header.at("config") != config)
    throw std::runtime_error("load_checkpoint: config mismatch: file holds " + ch.header.at("config").dump() +
                             ", expected " + config.dump());
  const nlohmann::json& manifest = ch.header.at("tensors");
  if (manifest.size() != params.size())
    throw std::runtime_error("load_checkpoint: tensor count mismatch: file holds " +
                             std::to_string(manifest.size()) + ", model has " + std::to_string(params.size()));
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  f.seekg(static_cast<std::streamoff>(ch.payload_offset));
  std::vector<unsigned char> buf;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nlohmann::json& m = manifest[i];
    const ParamRef<S>& p = params[i];
    if (m.at("name").get<std::string>() != p.name)
      throw std::runtime_error("load_checkpoint: tensor " + std::to_string(i) + " is '" +
                               m.at("name").get<std::string>() + "', expected '" + p.name + "'");
    const auto shape = m.at("shape").get<std::vector<int>>();
    if (shape.size() != 4 || shape[0] != p.value->n || shape[1] != p.value->c || shape[2] != p.value->h ||
        shape[3] != p.value->w)
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + p.name + "'");
    if (m.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("load_checkpoint: unsupported dtype for '" + p.name + "'");
    buf.resize(p.value->v.size() * 4);
    if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw std::runtime_error("load_checkpoint: truncated payload at '" + p.name + "'");
    for (std::size_t j = 0; j < p.value->v.size(); ++j) p.value->v[j] = static_cast<S>(detail::get_f32(&buf[j * 4]));
  }
  if (f.peek() != std::ifstream::traits_type::eof())
    throw std::runtime_error("load_checkpoint: trailing data after payload");
}

// Typed wrappers. Loading rebuilds the network from the stored config (with a
// throwaway init seed; every parameter is overwritten from the file).

template <typename S>
inline void save_generator(GeneratorNet<S>& net, const std::string& path) {
  save_checkpoint(path, "generator", net.config().to_json(), net.params());
}

template <typename S = float>
inline GeneratorNet<S> load_generator(const std::string& path) {
  const CheckpointHeader ch = read_checkpoint_header(path);
  if (ch.header.value("kind", "") != "generator")
    throw std::runtime_error("load_generator: " + path + " holds '" + ch.header.value("kind", "") + "'");
  const GeneratorConfig cfg = GeneratorConfig::from_json(ch.header.at("config"));
  Rng rng(0);
  GeneratorNet<S> net(cfg, rng);
  load_checkpoint(path, "generator", cfg.to_json(), net.params());
  return net;
}

template <typename S>
inline void save_discriminator(DiscriminatorNet<S>& net, const std::string& path) {
  save_checkpoint(path, "discriminator", net.config().to_json(), net.params());
}

template <typename S = float>
inline DiscriminatorNet<S> load_discriminator(const std::string& path) {
  const CheckpointHeader ch = read_checkpoint_header(path);
  if (ch.header.value("kind", "") != "discriminator")
    throw std::runtime_error("load_discriminator: " + path + " holds '" + ch.header.value("kind", "") + "'");
  const DiscriminatorConfig cfg = DiscriminatorConfig::from_json(ch.header.at("config"));
  Rng rng(0);
  DiscriminatorNet<S> net(cfg, rng);
  load_checkpoint(path, "discriminator", cfg.to_json(), net.params());
  return net;
}

template <typename S>
inline void save_classifier(ClassifierNet<S>& net, const std::string& path) {
  save_checkpoint(path, "classifier", net.config().to_json(), net.params());
}

template <typename S = float>
inline ClassifierNet<S> load_classifier(const std::string& path) {
  const CheckpointHeader ch = read_checkpoint_header(path);
  if (ch.header.value("kind", "") != "classifier")
    throw std::runtime_error("load_classifier: " + path + " holds '" + ch.header.value("kind", "") + "'");
  const ClassifierConfig cfg = ClassifierConfig::from_json(ch.header.at("config"));
  Rng rng(0);
  ClassifierNet<S> net(cfg, rng);
  load_checkpoint(path, "classifier", cfg.to_json(), net.params());
  return net;
}

}  // namespace sst
