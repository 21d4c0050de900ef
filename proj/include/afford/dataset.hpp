#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "afford/rng.hpp"
#include "afford/scene.hpp"
#include "afford/tensor.hpp"

namespace afford {

enum class ActionFamily { push, grasp, rotate };

inline const char* family_name(ActionFamily f) {
  switch (f) {
    case ActionFamily::push: return "push";
    case ActionFamily::grasp: return "grasp";
    case ActionFamily::rotate: return "rotate";
  }
  return "?";
}

inline ActionFamily family_from_name(const std::string& n) {
  if (n == "push") return ActionFamily::push;
  if (n == "grasp") return ActionFamily::grasp;
  if (n == "rotate") return ActionFamily::rotate;
  throw std::invalid_argument("unknown action family: " + n);
}

// Channel widths per family. Push uses planar displacement; grasp carries the
// height change; rotate carries the yaw change.
inline int family_action_dim(ActionFamily) { return 2; }
inline int family_effect_dim(ActionFamily f) { return f == ActionFamily::push ? 2 : 3; }

enum class Primitive { push_plain, push_rollable, grasp, rotate };

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::push_plain: return "push_plain";
    case Primitive::push_rollable: return "push_rollable";
    case Primitive::grasp: return "grasp";
    case Primitive::rotate: return "rotate";
  }
  return "?";
}

inline Primitive primitive_from_name(const std::string& n) {
  if (n == "push_plain") return Primitive::push_plain;
  if (n == "push_rollable") return Primitive::push_rollable;
  if (n == "grasp") return Primitive::grasp;
  if (n == "rotate") return Primitive::rotate;
  throw std::invalid_argument("unknown primitive: " + n);
}

struct ActionCommand {
  Primitive primitive = Primitive::push_plain;
  double theta = 0.0;         // push approach angle in [0, 2*pi)
  double fraction = 1.0;      // executed portion in (0, 1]
  double rotate_angle = 0.0;  // rotate only

  void validate() const {
    require(fraction > 0.0 && fraction <= 1.0,
            "fraction " + std::to_string(fraction) + " outside (0, 1]");
    require(theta >= 0.0 && theta < 2.0 * M_PI + 1e-12, "theta outside [0, 2*pi)");
  }
};

struct TrajectorySample {
  float t = 0.0f;
  std::vector<float> action;
  std::vector<float> effect;
};

// One recorded interaction: phase-stamped action and effect samples plus the
// initial depth observation of the scene.
struct InteractionTrajectory {
  std::vector<TrajectorySample> samples;
  DepthImage depth;
  ObjectSpec object;
  Vec2 start;
  ActionCommand command;

  Vec2 final_displacement() const {
    const auto& e = samples.back().effect;
    return {e[0], e[1]};
  }

  void validate(int action_dim, int effect_dim) const {
    require(!samples.empty(), "trajectory has no samples");
    require(samples.front().t == 0.0f, "first phase must be 0");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      require(static_cast<int>(s.action.size()) == action_dim &&
                  static_cast<int>(s.effect.size()) == effect_dim,
              "sample dims do not match the configured channel dims");
      if (i > 0) require(s.t > samples[i - 1].t, "phases must be strictly increasing");
    }
    if (command.fraction == 1.0) require(samples.back().t == 1.0f, "full execution must end at phase 1");
  }
};

struct Dataset {
  ActionFamily family = ActionFamily::push;
  int samples_per_traj = 25;
  std::vector<InteractionTrajectory> trajectories;

  int action_dim() const { return family_action_dim(family); }
  int effect_dim() const { return family_effect_dim(family); }
  std::size_t size() const { return trajectories.size(); }
};

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
};

// Seeded shuffle then 80/10/10 partition.
inline DatasetSplit split(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  require(n >= 10, "split requires at least 10 trajectories, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(Rng::derive(seed, 0x5eedULL));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);
  const std::size_t n_val = n / 10, n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

// k ~ uniform{1..obs_max} samples drawn without replacement.
inline std::vector<std::size_t> sample_observations(const InteractionTrajectory& traj, Rng& rng,
                                                    int obs_max) {
  require(obs_max >= 1, "obs_max must be >= 1");
  const std::size_t n = traj.samples.size();
  const std::size_t k = std::min<std::size_t>(1 + rng.index(static_cast<std::size_t>(obs_max)), n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> sample_targets(const InteractionTrajectory& traj, Rng& rng,
                                               int n_targets) {
  require(n_targets >= 1, "n_targets must be >= 1");
  std::vector<std::size_t> out(static_cast<std::size_t>(n_targets));
  for (auto& i : out) i = rng.index(traj.samples.size());
  return out;
}

// Per-dimension affine normalization fitted on the training split only.
// Values are mapped into [0.05, 0.95] over the training range.
struct ChannelStats {
  std::vector<float> action_shift, action_scale;
  std::vector<float> effect_shift, effect_scale;

  static ChannelStats fit(const Dataset& ds, const std::vector<std::size_t>& train_idx) {
    require(!train_idx.empty(), "cannot fit normalization on an empty split");
    const int ad = ds.action_dim(), ed = ds.effect_dim();
    std::vector<double> amin(ad, 1e30), amax(ad, -1e30), emin(ed, 1e30), emax(ed, -1e30);
    for (std::size_t ti : train_idx) {
      for (const auto& s : ds.trajectories.at(ti).samples) {
        for (int d = 0; d < ad; ++d) {
          amin[d] = std::min(amin[d], static_cast<double>(s.action[d]));
          amax[d] = std::max(amax[d], static_cast<double>(s.action[d]));
        }
        for (int d = 0; d < ed; ++d) {
          emin[d] = std::min(emin[d], static_cast<double>(s.effect[d]));
          emax[d] = std::max(emax[d], static_cast<double>(s.effect[d]));
        }
      }
    }
    ChannelStats st;
    auto fill = [](const std::vector<double>& lo, const std::vector<double>& hi,
                   std::vector<float>& shift, std::vector<float>& scale) {
      for (std::size_t d = 0; d < lo.size(); ++d) {
        const double span = std::max(hi[d] - lo[d], 1e-6);
        const double sc = span / 0.9;
        scale.push_back(static_cast<float>(sc));
        shift.push_back(static_cast<float>(lo[d] - 0.05 * sc));
      }
    };
    fill(amin, amax, st.action_shift, st.action_scale);
    fill(emin, emax, st.effect_shift, st.effect_scale);
    return st;
  }

  template <class V>
  std::vector<float> normalize_action(const V& v) const {
    return apply(v, action_shift, action_scale);
  }
  template <class V>
  std::vector<float> normalize_effect(const V& v) const {
    return apply(v, effect_shift, effect_scale);
  }
  std::vector<float> denorm_effect(const std::vector<float>& v) const {
    return invert(v, effect_shift, effect_scale);
  }
  std::vector<float> denorm_action(const std::vector<float>& v) const {
    return invert(v, action_shift, action_scale);
  }
  // Scale factors alone, for standard deviations.
  std::vector<float> effect_std_denorm(const std::vector<float>& v) const {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * effect_scale[i];
    return out;
  }
  std::vector<float> action_std_denorm(const std::vector<float>& v) const {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * action_scale[i];
    return out;
  }

 private:
  template <class V>
  static std::vector<float> apply(const V& v, const std::vector<float>& shift,
                                  const std::vector<float>& scale) {
    require(v.size() == shift.size(), "normalization: dim mismatch");
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      out[i] = static_cast<float>((static_cast<double>(v[i]) - shift[i]) / scale[i]);
    return out;
  }
  static std::vector<float> invert(const std::vector<float>& v, const std::vector<float>& shift,
                                   const std::vector<float>& scale) {
    require(v.size() == shift.size(), "normalization: dim mismatch");
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      out[i] = static_cast<float>(static_cast<double>(v[i]) * scale[i] + shift[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Persistence. One trajectory per line, space-separated key=value fields with
// comma-separated numeric lists; shortest exact float formatting.

namespace detail {

inline void put_float(std::string& out, float v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline void put_double(std::string& out, double v) {
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline void put_list(std::string& out, const char* key, const float* v, std::size_t n) {
  out += ' ';
  out += key;
  out += '=';
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ',';
    put_float(out, v[i]);
  }
}

struct FieldReader {
  std::string_view line;
  std::size_t pos = 0;

  // Expects fields in a fixed order; the key is part of the format.
  std::string_view field(const char* key) {
    while (pos < line.size() && line[pos] == ' ') ++pos;
    const std::string_view k(key);
    if (line.compare(pos, k.size(), k) != 0 || pos + k.size() >= line.size() ||
        line[pos + k.size()] != '=')
      throw std::runtime_error("dataset parse error: expected field '" + std::string(key) + "'");
    pos += k.size() + 1;
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ') ++pos;
    return line.substr(start, pos - start);
  }

  double num(const char* key) { return parse_double(field(key), key); }

  long integer(const char* key) {
    const auto f = field(key);
    long v = 0;
    auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size())
      throw std::runtime_error("dataset parse error: bad integer in field '" + std::string(key) + "'");
    return v;
  }

  std::vector<float> list(const char* key, std::size_t expect) {
    const auto f = field(key);
    std::vector<float> out;
    out.reserve(expect);
    const char* p = f.data();
    const char* end = f.data() + f.size();
    while (p < end) {
      float v = 0.0f;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc())
        throw std::runtime_error("dataset parse error: bad number in field '" + std::string(key) + "'");
      out.push_back(v);
      p = res.ptr;
      if (p < end) {
        if (*p != ',')
          throw std::runtime_error("dataset parse error: expected ',' in field '" + std::string(key) + "'");
        ++p;
      }
    }
    if (out.size() != expect)
      throw std::runtime_error("dataset parse error: field '" + std::string(key) + "' has " +
                               std::to_string(out.size()) + " values, expected " +
                               std::to_string(expect));
    return out;
  }

  static double parse_double(std::string_view f, const char* key) {
    double v = 0.0;
    auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size())
      throw std::runtime_error("dataset parse error: bad number in field '" + std::string(key) + "'");
    return v;
  }
};

}  // namespace detail

inline void save(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  std::string line;
  line += "afford_dataset v=1 family=";
  line += family_name(ds.family);
  line += " count=" + std::to_string(ds.size());
  line += " samples=" + std::to_string(ds.samples_per_traj);
  line += " action_dim=" + std::to_string(ds.action_dim());
  line += " effect_dim=" + std::to_string(ds.effect_dim());
  line += '\n';
  out << line;
  const int ad = ds.action_dim(), ed = ds.effect_dim();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& tr = ds.trajectories[i];
    line.clear();
    line += "id=" + std::to_string(i);
    line += " shape=";
    line += shape_name(tr.object.shape);
    line += " size=";
    detail::put_double(line, tr.object.size);
    line += " yaw=";
    detail::put_double(line, tr.object.yaw);
    line += " x=";
    detail::put_double(line, tr.start.x);
    line += " y=";
    detail::put_double(line, tr.start.y);
    line += " primitive=";
    line += primitive_name(tr.command.primitive);
    line += " theta=";
    detail::put_double(line, tr.command.theta);
    line += " fraction=";
    detail::put_double(line, tr.command.fraction);
    line += " rotate_angle=";
    detail::put_double(line, tr.command.rotate_angle);
    line += " n=" + std::to_string(tr.samples.size());
    std::vector<float> ts, as, es;
    for (const auto& s : tr.samples) {
      ts.push_back(s.t);
      as.insert(as.end(), s.action.begin(), s.action.end());
      es.insert(es.end(), s.effect.begin(), s.effect.end());
    }
    detail::put_list(line, "t", ts.data(), ts.size());
    detail::put_list(line, "a", as.data(), as.size());
    detail::put_list(line, "e", es.data(), es.size());
    detail::put_list(line, "depth", tr.depth.data.data.data(), tr.depth.data.data.size());
    line += '\n';
    out << line;
    (void)ad;
    (void)ed;
  }
  require(static_cast<bool>(out), "write failed for '" + path + "'");
}

inline Dataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::string header;
  if (!std::getline(in, header) || header.empty())
    throw std::runtime_error("empty dataset file '" + path + "'");
  detail::FieldReader hr{header};
  {
    // magic token has no '=' so handle it directly
    const std::string magic = "afford_dataset ";
    if (header.rfind("afford_dataset", 0) != 0)
      throw std::runtime_error("dataset parse error: bad magic in header");
    hr.pos = magic.size() - 1;
  }
  const long version = hr.integer("v");
  if (version != 1)
    throw std::runtime_error("dataset parse error: unsupported version " + std::to_string(version));
  Dataset ds;
  ds.family = family_from_name(std::string(hr.field("family")));
  const long count = hr.integer("count");
  ds.samples_per_traj = static_cast<int>(hr.integer("samples"));
  const long action_dim = hr.integer("action_dim");
  const long effect_dim = hr.integer("effect_dim");
  if (action_dim != ds.action_dim() || effect_dim != ds.effect_dim())
    throw std::runtime_error("dataset parse error: channel dims do not match family '" +
                             std::string(family_name(ds.family)) + "'");
  ds.trajectories.reserve(static_cast<std::size_t>(count));
  std::string line;
  for (long i = 0; i < count; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error("dataset file truncated: expected " + std::to_string(count) +
                               " trajectories, got " + std::to_string(i));
    detail::FieldReader r{line};
    InteractionTrajectory tr;
    const long id = r.integer("id");
    if (id != i) throw std::runtime_error("dataset parse error: id " + std::to_string(id) +
                                          " out of order at line " + std::to_string(i + 2));
    tr.object.shape = shape_from_name(std::string(r.field("shape")));
    tr.object.size = r.num("size");
    tr.object.yaw = r.num("yaw");
    tr.start.x = r.num("x");
    tr.start.y = r.num("y");
    tr.command.primitive = primitive_from_name(std::string(r.field("primitive")));
    tr.command.theta = r.num("theta");
    tr.command.fraction = r.num("fraction");
    tr.command.rotate_angle = r.num("rotate_angle");
    const long n = r.integer("n");
    const auto ts = r.list("t", static_cast<std::size_t>(n));
    const auto as = r.list("a", static_cast<std::size_t>(n) * ds.action_dim());
    const auto es = r.list("e", static_cast<std::size_t>(n) * ds.effect_dim());
    const auto depth = r.list("depth", static_cast<std::size_t>(kImageSize) * kImageSize * kImageChannels);
    tr.samples.resize(static_cast<std::size_t>(n));
    for (long j = 0; j < n; ++j) {
      auto& s = tr.samples[static_cast<std::size_t>(j)];
      s.t = ts[static_cast<std::size_t>(j)];
      s.action.assign(as.begin() + j * ds.action_dim(), as.begin() + (j + 1) * ds.action_dim());
      s.effect.assign(es.begin() + j * ds.effect_dim(), es.begin() + (j + 1) * ds.effect_dim());
    }
    tr.depth.data.data = depth;
    tr.validate(ds.action_dim(), ds.effect_dim());
    ds.trajectories.push_back(std::move(tr));
  }
  if (ds.trajectories.empty()) throw std::runtime_error("empty dataset: file lists zero trajectories");
  return ds;
}

inline void save_split(const DatasetSplit& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open '" + path + "' for writing");
  auto dump = [&out](const char* name, const std::vector<std::size_t>& idx) {
    out << name;
    for (auto i : idx) out << ' ' << i;
    out << '\n';
  };
  dump("train", s.train);
  dump("validation", s.validation);
  dump("test", s.test);
}

}  // namespace afford
