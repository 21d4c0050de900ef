#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "afford/adam.hpp"
#include "afford/dataset.hpp"
#include "afford/model.hpp"

namespace afford {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

// Model checkpoint: magic "AFRD", format version, a JSON config block (dims,
// hyperparameters, normalization statistics, training metadata), then named
// parameter blobs as little-endian 32-bit reals with explicit shapes.
// Optimizer moments ride along as 64-bit blobs when present.
struct ModelCheckpoint {
  ModelConfig config;
  ActionFamily family = ActionFamily::push;
  ChannelStats stats;
  ModelParams params;
  nlohmann::json extra;  // seed, iteration counts, dataset hash, ...
  bool has_optimizer = false;
  long adam_step = 0;
  std::vector<std::vector<double>> adam_m, adam_v;  // aligned with params

  AffordanceModel to_model() const { return AffordanceModel(config, params, stats, family); }
};

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ofstream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
}

template <class T>
T read_pod(std::ifstream& in, const char* what) {
  T v{};
  read_bytes(in, &v, sizeof(T), what);
  return v;
}

inline void write_blob_header(std::ofstream& out, const std::string& name, std::uint8_t dtype,
                              const std::vector<int>& shape) {
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  write_bytes(out, name.data(), name.size());
  write_pod<std::uint8_t>(out, dtype);
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (int d : shape) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
}

}  // namespace detail

inline nlohmann::json stats_to_json(const ChannelStats& s) {
  return {{"action_shift", s.action_shift},
          {"action_scale", s.action_scale},
          {"effect_shift", s.effect_shift},
          {"effect_scale", s.effect_scale}};
}

inline ChannelStats stats_from_json(const nlohmann::json& j) {
  ChannelStats s;
  s.action_shift = j.at("action_shift").get<std::vector<float>>();
  s.action_scale = j.at("action_scale").get<std::vector<float>>();
  s.effect_shift = j.at("effect_shift").get<std::vector<float>>();
  s.effect_scale = j.at("effect_scale").get<std::vector<float>>();
  return s;
}

inline void save_checkpoint(const ModelCheckpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  out.write("AFRD", 4);
  detail::write_pod<std::uint32_t>(out, 1u);

  nlohmann::json meta = {{"config", ck.config.to_json()},
                         {"family", family_name(ck.family)},
                         {"normalization", stats_to_json(ck.stats)},
                         {"extra", ck.extra},
                         {"has_optimizer", ck.has_optimizer},
                         {"adam_step", ck.adam_step}};
  const std::string meta_str = meta.dump();
  detail::write_pod<std::uint64_t>(out, meta_str.size());
  detail::write_bytes(out, meta_str.data(), meta_str.size());

  std::uint32_t n_blobs = static_cast<std::uint32_t>(ck.params.items().size());
  if (ck.has_optimizer) n_blobs += 2 * static_cast<std::uint32_t>(ck.params.items().size());
  detail::write_pod<std::uint32_t>(out, n_blobs);
  for (const auto& item : ck.params.items()) {
    detail::write_blob_header(out, item.name, 0, item.tensor.shape);
    detail::write_bytes(out, item.tensor.data.data(), item.tensor.data.size() * sizeof(float));
  }
  if (ck.has_optimizer) {
    require(ck.adam_m.size() == ck.params.items().size() &&
                ck.adam_v.size() == ck.params.items().size(),
            "optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < ck.params.items().size(); ++i) {
      const auto& item = ck.params.items()[i];
      detail::write_blob_header(out, "adam.m." + item.name, 1, item.tensor.shape);
      detail::write_bytes(out, ck.adam_m[i].data(), ck.adam_m[i].size() * sizeof(double));
      detail::write_blob_header(out, "adam.v." + item.name, 1, item.tensor.shape);
      detail::write_bytes(out, ck.adam_v[i].data(), ck.adam_v[i].size() * sizeof(double));
    }
  }
  require(static_cast<bool>(out), "write failed for '" + path + "'");
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "AFRD", 4) != 0)
    throw std::runtime_error("bad checkpoint magic in '" + path + "'");
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  const auto meta_len = detail::read_pod<std::uint64_t>(in, "meta length");
  std::string meta_str(meta_len, '\0');
  detail::read_bytes(in, meta_str.data(), meta_len, "meta");
  const nlohmann::json meta = nlohmann::json::parse(meta_str);

  ModelCheckpoint ck;
  ck.config = ModelConfig::from_json(meta.at("config"));
  ck.family = family_from_name(meta.at("family").get<std::string>());
  ck.stats = stats_from_json(meta.at("normalization"));
  ck.extra = meta.value("extra", nlohmann::json::object());
  ck.has_optimizer = meta.value("has_optimizer", false);
  ck.adam_step = meta.value("adam_step", 0L);

  // Template parameter list fixes the expected blob names and shapes.
  ck.params = ModelParams::init(ck.config, 0);
  if (ck.has_optimizer) {
    ck.adam_m.resize(ck.params.items().size());
    ck.adam_v.resize(ck.params.items().size());
  }

  const auto n_blobs = detail::read_pod<std::uint32_t>(in, "blob count");
  for (std::uint32_t bi = 0; bi < n_blobs; ++bi) {
    const auto name_len = detail::read_pod<std::uint16_t>(in, "blob name length");
    std::string name(name_len, '\0');
    detail::read_bytes(in, name.data(), name_len, "blob name");
    const auto dtype = detail::read_pod<std::uint8_t>(in, "blob dtype");
    const auto ndim = detail::read_pod<std::uint8_t>(in, "blob rank");
    std::vector<int> shape(ndim);
    long count = 1;
    for (auto& d : shape) {
      d = static_cast<int>(detail::read_pod<std::uint32_t>(in, "blob dims"));
      count *= d;
    }
    if (dtype == 0) {
      Tensor t = Tensor::zeros(shape);
      detail::read_bytes(in, t.data.data(), t.data.size() * sizeof(float), name.c_str());
      Tensor& dst = ck.params.at(name);
      if (!dst.same_shape(t))
        throw std::runtime_error("checkpoint blob '" + name + "' has shape " +
                                 Tensor::shape_str(t.shape) + ", expected " +
                                 Tensor::shape_str(dst.shape));
      dst = std::move(t);
    } else if (dtype == 1) {
      std::vector<double> buf(static_cast<std::size_t>(count));
      detail::read_bytes(in, buf.data(), buf.size() * sizeof(double), name.c_str());
      const bool is_m = name.rfind("adam.m.", 0) == 0;
      const bool is_v = name.rfind("adam.v.", 0) == 0;
      if (!is_m && !is_v) throw std::runtime_error("unknown 64-bit blob '" + name + "'");
      const std::size_t idx = ck.params.index_of(name.substr(7));
      (is_m ? ck.adam_m : ck.adam_v)[idx] = std::move(buf);
    } else {
      throw std::runtime_error("unknown blob dtype " + std::to_string(int(dtype)));
    }
  }
  return ck;
}

// FNV-1a over a file's bytes; used to stamp reports and manifests with the
// identity of their inputs.
inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for hashing");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i)
      h = (h ^ static_cast<unsigned char>(buf[i])) * 1099511628211ULL;
    if (!in) break;
  }
  return h;
}

inline std::uint64_t fnv1a_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

}  // namespace afford
