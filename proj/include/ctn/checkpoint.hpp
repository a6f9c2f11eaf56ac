#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ctn/adam.hpp"
#include "ctn/config_io.hpp"
#include "ctn/model.hpp"

namespace ctn {

// Checkpoint wire format:
//   bytes 0..3   magic "CTN1"
//   bytes 4..7   u32 little-endian header length
//   header       UTF-8 JSON: format_version, dtype, merged flag, model
//                config, ordered tensor directory (name/shape/dtype/offset)
//   payload      raw little-endian IEEE-754 tensors in directory order

inline constexpr char kCheckpointMagic[4] = {'C', 'T', 'N', '1'};
inline constexpr int kCheckpointVersion = 1;

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct CheckpointInfo {
  json header;
  std::uint32_t header_len = 0;
  std::string dtype;
  bool merged = false;
  ModelConfig config;
};

/// Optimizer moments keyed by parameter name, restored on load when present.
template <typename T>
struct OptimizerSnapshot {
  long step_count = 0;
  std::vector<std::pair<std::string, Tensor<T>>> first_moment;
  std::vector<std::pair<std::string, Tensor<T>>> second_moment;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "truncated header length");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path, Adam<T>* optimizer = nullptr,
                     const std::vector<Param<T>*>* optimizer_params = nullptr,
                     const StateDict<T>* state_hint = nullptr) {
  StateDict<T> sd = state_hint ? *state_hint : model.state();
  json header;
  header["format_version"] = kCheckpointVersion;
  header["dtype"] = dtype_name<T>();
  header["merged"] = model.merged();
  header["config"] = to_json(model.config());

  struct Entry {
    std::string name;
    const Tensor<T>* tensor;
  };
  std::vector<Entry> entries;
  for (auto& [name, p] : sd.params) entries.push_back({name, &p->value});
  for (auto& [name, t] : sd.buffers) entries.push_back({name, t});
  if (optimizer && optimizer_params) {
    header["optimizer"] = {{"t", optimizer->step_count()}, {"lr", double(optimizer->lr())}};
    for (std::size_t i = 0; i < optimizer_params->size(); ++i) {
      entries.push_back({"optim.m." + sd.params[i].first, &optimizer->slots()[i].m});
      entries.push_back({"optim.v." + sd.params[i].first, &optimizer->slots()[i].v});
    }
  }

  json dir = json::array();
  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    dir.push_back({{"name", e.name},
                   {"shape", e.tensor->shape()},
                   {"dtype", dtype_name<T>()},
                   {"offset", offset}});
    offset += e.tensor->numel() * sizeof(T);
  }
  header["tensors"] = dir;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 4);
  const std::string htext = header.dump();
  detail::write_u32(os, static_cast<std::uint32_t>(htext.size()));
  os.write(htext.data(), std::streamsize(htext.size()));
  for (const Entry& e : entries)
    os.write(reinterpret_cast<const char*>(e.tensor->data()),
             std::streamsize(e.tensor->numel() * sizeof(T)));
  if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline CheckpointInfo peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::Format, "bad checkpoint magic");
  const std::uint32_t hlen = detail::read_u32(is);
  CheckpointInfo info;
  info.header_len = hlen;
  std::string htext(hlen, '\0');
  is.read(htext.data(), hlen);
  if (!is) throw CheckpointError(CheckpointError::Kind::Truncated, "truncated header");
  try {
    info.header = json::parse(htext);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::Format,
                          std::string("unparsable header: ") + e.what());
  }
  const int version = info.header.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::Version,
                          "unsupported format version " + std::to_string(version));
  info.dtype = info.header.value("dtype", "");
  info.merged = info.header.value("merged", false);
  info.config = model_config_from_json(info.header.at("config"));
  return info;
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  std::optional<OptimizerSnapshot<T>> optimizer;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  CheckpointInfo info = peek_checkpoint(path);
  if (info.dtype != dtype_name<T>())
    throw CheckpointError(CheckpointError::Kind::Format,
                          "checkpoint dtype " + info.dtype + " does not match " +
                              dtype_name<T>());

  LoadedCheckpoint<T> out{Model<T>(info.config), std::nullopt};
  if (info.merged) out.model.mark_merged_skeleton();
  StateDict<T> sd = out.model.state();

  std::vector<std::pair<std::string, Tensor<T>*>> expected;
  for (auto& [name, p] : sd.params) expected.emplace_back(name, &p->value);
  for (auto& [name, t] : sd.buffers) expected.emplace_back(name, t);

  const std::uint64_t payload_base = 8 + info.header_len;
  std::ifstream is(path, std::ios::binary);
  is.seekg(std::streamoff(payload_base));

  OptimizerSnapshot<T> snap;
  bool has_optimizer = info.header.contains("optimizer");
  if (has_optimizer) snap.step_count = info.header["optimizer"].value("t", 0L);

  std::size_t matched = 0;
  for (const json& e : info.header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    std::size_t numel = 1;
    for (std::size_t s : shape) numel *= s;
    Tensor<T>* dst = nullptr;
    bool optim_first = false, optim_second = false;
    std::string bare = name;
    if (name.rfind("optim.m.", 0) == 0) {
      optim_first = true;
      bare = name.substr(8);
    } else if (name.rfind("optim.v.", 0) == 0) {
      optim_second = true;
      bare = name.substr(8);
    } else {
      for (auto& [ename, t] : expected)
        if (ename == name) {
          dst = t;
          ++matched;
          break;
        }
      if (!dst)
        throw CheckpointError(CheckpointError::Kind::NameMismatch,
                              "checkpoint tensor '" + name + "' has no home in the model");
      if (dst->shape() != shape)
        throw CheckpointError(CheckpointError::Kind::Format,
                              "tensor '" + name + "' shape mismatch");
    }
    Tensor<T> scratch;
    if (!dst) {
      scratch = Tensor<T>(shape);
      dst = &scratch;
    }
    is.seekg(std::streamoff(payload_base + e.at("offset").get<std::uint64_t>()));
    is.read(reinterpret_cast<char*>(dst->data()), std::streamsize(numel * sizeof(T)));
    if (!is)
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            "truncated payload at tensor '" + name + "'");
    if (optim_first) snap.first_moment.emplace_back(bare, std::move(scratch));
    if (optim_second) snap.second_moment.emplace_back(bare, std::move(scratch));
  }
  if (matched != expected.size())
    throw CheckpointError(CheckpointError::Kind::NameMismatch,
                          "checkpoint is missing " + std::to_string(expected.size() - matched) +
                              " model tensors");
  out.model.mark_stats_loaded();
  if (has_optimizer) out.optimizer = std::move(snap);
  return out;
}

}  // namespace ctn
