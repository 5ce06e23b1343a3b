#pragma once

// Model checkpoint: a JSON object carrying the architecture, seed and training-config hash, with
// the flat parameter vector as base64 of little-endian IEEE-754 doubles.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <sodium.h>

#include "metaopf/corpus_io.hpp"
#include "metaopf/error.hpp"
#include "metaopf/mlp.hpp"

namespace metaopf {

struct Checkpoint {
  MlpArch arch;
  Params params;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string method;
  int topology_id = -1;  // set for per-task models
};

inline std::string encode_doubles(const Params& p) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(p.size()) * 8);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(p[i]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  const int variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_ENCODED_LEN(bytes.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

inline Params decode_doubles(const std::string& text, Eigen::Index expected) {
  std::vector<unsigned char> bytes(text.size());
  std::size_t len = 0;
  if (sodium_base642bin(bytes.data(), bytes.size(), text.data(), text.size(), nullptr, &len, nullptr,
                        sodium_base64_VARIANT_ORIGINAL) != 0)
    throw InputError("checkpoint parameters are not valid base64");
  if (len != static_cast<std::size_t>(expected) * 8) throw InputError("checkpoint parameter count mismatch");
  Params p(expected);
  for (Eigen::Index i = 0; i < expected; ++i) {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i) * 8 + b]) << (8 * b);
    p[i] = std::bit_cast<double>(u);
  }
  return p;
}

inline nlohmann::json to_json(const MlpArch& a) {
  return {{"input_dim", a.input_dim},
          {"hidden", a.hidden},
          {"output_dim", a.output_dim},
          {"hidden_activation", "relu"},
          {"output_activation", "sigmoid"}};
}

inline MlpArch arch_from_json(const nlohmann::json& j) {
  MlpArch a{j.at("input_dim"), j.at("hidden").get<std::vector<int>>(), j.at("output_dim")};
  a.validate();
  return a;
}

inline nlohmann::json to_json(const Checkpoint& c) {
  return {{"format", "metaopf-checkpoint"},
          {"version", 1},
          {"method", c.method},
          {"topology_id", c.topology_id},
          {"arch", to_json(c.arch)},
          {"seed", c.seed},
          {"config_hash", c.config_hash},
          {"n_params", c.params.size()},
          {"params", encode_doubles(c.params)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "metaopf-checkpoint") throw InputError("not a checkpoint");
    Checkpoint c;
    c.arch = arch_from_json(j.at("arch"));
    c.method = j.at("method");
    c.topology_id = j.at("topology_id");
    c.seed = j.at("seed");
    c.config_hash = j.at("config_hash");
    const Eigen::Index n = j.at("n_params");
    if (n != c.arch.param_count()) throw InputError("checkpoint size does not match its architecture");
    c.params = decode_doubles(j.at("params"), n);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& p) {
  write_text_file(p, to_json(c).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return checkpoint_from_json(read_json_file(p)); }

}  // namespace metaopf
