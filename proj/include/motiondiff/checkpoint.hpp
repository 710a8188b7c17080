// Copyright 2026 The motiondiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//   offset 0   8 bytes  magic "MDIFFCK\0"
//          8   u32      format version
//         12   u32      scalar width in bytes (4 = float, 8 = double)
//         16   u64      header length H
//         24   H bytes  UTF-8 JSON header; header["groups"] lists every tensor
//                       group as {"name", "tensors": [{"name","rows","cols"}]}
//         ..            tensor data, group by group, tensor by tensor,
//                       row-major
//   last 8 bytes u64    FNV-1a hash of every preceding byte
//
// Readers verify the whole file before returning anything, so a corrupted or
// incompatible file never leaves a caller with partially loaded state.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "motiondiff/trainer.hpp"

namespace motiondiff {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'D', 'I', 'F', 'F', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
struct TensorGroup {
  std::string name;
  std::vector<std::string> names;
  std::vector<Mat<S>> tensors;
};

template <class S>
struct Container {
  nlohmann::json header;
  std::vector<TensorGroup<S>> groups;

  const TensorGroup<S>& group(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return g;
    throw ParseError("checkpoint has no tensor group '" + name + "'");
  }
};

namespace detail {

inline std::uint64_t fnv1a_bytes(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
void put(std::string& buf, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

template <class T>
T get(const std::string& buf, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > buf.size()) throw ParseError(what + ": file truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

/// Serializes and writes via a temporary file renamed into place.
template <class S>
void write_container(const std::filesystem::path& path, nlohmann::json header, const std::vector<TensorGroup<S>>& groups) {
  nlohmann::json desc = nlohmann::json::array();
  for (const auto& g : groups) {
    if (g.names.size() != g.tensors.size()) throw Error("tensor group '" + g.name + "' has mismatched names");
    nlohmann::json ts = nlohmann::json::array();
    for (std::size_t i = 0; i < g.tensors.size(); ++i)
      ts.push_back({{"name", g.names[i]}, {"rows", g.tensors[i].rows()}, {"cols", g.tensors[i].cols()}});
    desc.push_back({{"name", g.name}, {"tensors", ts}});
  }
  header["groups"] = desc;
  const std::string text = header.dump();

  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(sizeof(S)));
  detail::put<std::uint64_t>(buf, text.size());
  buf += text;
  for (const auto& g : groups)
    for (const auto& t : g.tensors) buf.append(reinterpret_cast<const char*>(t.data()), sizeof(S) * static_cast<std::size_t>(t.size()));
  detail::put<std::uint64_t>(buf, detail::fnv1a_bytes(buf.data(), buf.size()));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <class S>
Container<S> read_container(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + where);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kCheckpointMagic) + 24 || std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw ParseError(where + ": not a checkpoint file");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get<std::uint32_t>(buf, pos, where);
  if (version != kCheckpointVersion)
    throw VersionError(where + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  const auto width = detail::get<std::uint32_t>(buf, pos, where);
  if (width != sizeof(S))
    throw VersionError(where + ": checkpoint stores " + std::to_string(width) + "-byte scalars, expected " +
                       std::to_string(sizeof(S)));
  std::size_t tail = buf.size() - sizeof(std::uint64_t);
  std::size_t check_pos = tail;
  if (detail::get<std::uint64_t>(buf, check_pos, where) != detail::fnv1a_bytes(buf.data(), tail))
    throw ParseError(where + ": checksum mismatch (file corrupted)");

  const auto hlen = detail::get<std::uint64_t>(buf, pos, where);
  if (hlen > tail - pos) throw ParseError(where + ": header length exceeds file size");
  Container<S> c;
  try {
    c.header = nlohmann::json::parse(buf.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad header: " + e.what());
  }
  pos += hlen;
  try {
    const nlohmann::json& header = c.header;
    for (const auto& gd : header.at("groups")) {
      TensorGroup<S> g;
      g.name = gd.at("name").get<std::string>();
      for (const auto& td : gd.at("tensors")) {
        const auto rows = td.at("rows").get<Index>(), cols = td.at("cols").get<Index>();
        if (rows < 0 || cols < 0) throw ParseError(where + ": negative tensor shape");
        const std::size_t bytes = sizeof(S) * static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
        if (bytes > tail - pos) throw ParseError(where + ": tensor data truncated");
        Mat<S> m(rows, cols);
        std::memcpy(m.data(), buf.data() + pos, bytes);
        pos += bytes;
        g.names.push_back(td.at("name").get<std::string>());
        g.tensors.push_back(std::move(m));
      }
      c.groups.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad tensor table: " + e.what());
  }
  if (pos != tail) throw ParseError(where + ": trailing bytes after tensor data");
  return c;
}

namespace detail {

template <class S>
TensorGroup<S> named_group(const std::string& group, const nn::ParamRefs<S>& params, const std::vector<Mat<S>>& values) {
  TensorGroup<S> g{group, {}, values};
  for (auto* p : params) g.names.push_back(p->name);
  return g;
}

template <class S>
std::vector<Mat<S>> checked_values(const Container<S>& c, const std::string& group, const nn::ParamRefs<S>& params) {
  const auto& g = c.group(group);
  if (g.tensors.size() != params.size())
    throw ParseError("checkpoint group '" + group + "' has " + std::to_string(g.tensors.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (g.names[i] != params[i]->name)
      throw ParseError("checkpoint tensor '" + g.names[i] + "' where '" + params[i]->name + "' was expected");
    if (g.tensors[i].rows() != params[i]->value.rows() || g.tensors[i].cols() != params[i]->value.cols())
      throw ParseError("checkpoint tensor '" + g.names[i] + "' has the wrong shape");
  }
  return g.tensors;
}

inline nlohmann::json normalizer_json(const Normalizer& n) {
  return {{"mean", std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size())},
          {"std", std::vector<double>(n.std.data(), n.std.data() + n.std.size())}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("std").get<std::vector<double>>();
  if (mean.size() != sd.size()) throw ParseError("normalizer mean/std sizes differ");
  Normalizer n;
  n.mean = Eigen::Map<const RowVec<double>>(mean.data(), static_cast<Index>(mean.size()));
  n.std = Eigen::Map<const RowVec<double>>(sd.data(), static_cast<Index>(sd.size()));
  return n;
}

}  // namespace detail

template <class S>
void save_checkpoint(const TrainingState<S>& st, const std::filesystem::path& path) {
  auto params = const_cast<MotionModel<S>&>(st.model).parameters();
  nlohmann::json header = {{"kind", "motion_model"},
                           {"model", st.model.config()},
                           {"train", st.config},
                           {"step", st.step},
                           {"adam_count", st.adam.count},
                           {"normalizer", detail::normalizer_json(st.model.normalizer())}};
  write_container<S>(path, header,
                     {detail::named_group<S>("params", params, st.model.parameter_values()),
                      detail::named_group<S>("ema", params, st.ema), detail::named_group<S>("adam_m", params, st.adam.m),
                      detail::named_group<S>("adam_v", params, st.adam.v)});
}

/// Rebuilds a complete training state; throws without side effects on any
/// inconsistency.
template <class S>
TrainingState<S> load_checkpoint(const std::filesystem::path& path) {
  const Container<S> c = read_container<S>(path);
  const std::string where = path.string();
  const nlohmann::json& header = c.header;
  try {
    if (header.at("kind").get<std::string>() != "motion_model")
      throw ParseError(where + ": not a motion model checkpoint (kind '" + header.at("kind").get<std::string>() + "')");
    const auto model_cfg = header.at("model").get<ModelConfig>();
    const auto train_cfg = header.at("train").get<TrainConfig>();
    MotionModel<S> model(model_cfg, 0);
    model.set_normalizer(detail::normalizer_from_json(header.at("normalizer")));
    auto params = model.parameters();
    model.load_parameter_values(detail::checked_values(c, "params", params));
    TrainingState<S> st(std::move(model), train_cfg);
    params = st.model.parameters();
    st.ema = detail::checked_values(c, "ema", params);
    st.adam.m = detail::checked_values(c, "adam_m", params);
    st.adam.v = detail::checked_values(c, "adam_v", params);
    st.adam.count = header.at("adam_count").get<std::int64_t>();
    st.step = header.at("step").get<std::int64_t>();
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad checkpoint header: " + e.what());
  }
}

/// Model ready for sampling; EMA weights unless `use_ema` is false.
template <class S>
MotionModel<S> load_model(const std::filesystem::path& path, bool use_ema = true) {
  TrainingState<S> st = load_checkpoint<S>(path);
  return use_ema ? st.ema_model() : st.model;
}

}  // namespace motiondiff
