// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipo/denoiser.hpp"
#include "ipo/errors.hpp"
#include "ipo/schedule.hpp"

namespace ipo {

/// Schedule parameters as stored next to a checkpoint.
struct ScheduleParams {
  int steps = 100;
  ScheduleKind kind = ScheduleKind::linear;
  double beta_min = 1e-3;
  double beta_max = 0.2;

  bool operator==(const ScheduleParams&) const = default;

  NoiseSchedule build() const { return build_schedule(steps, kind, beta_min, beta_max); }
};

struct Checkpoint {
  MlpDenoiser model;
  ScheduleParams schedule;
};

inline nlohmann::json arch_to_json(const DenoiserArch& a) {
  return {{"input_dim", a.input_dim},
          {"condition_dim", a.condition_dim},
          {"hidden_sizes", a.hidden_sizes},
          {"time_embedding_size", a.time_embedding_size}};
}

inline nlohmann::json schedule_to_json(const ScheduleParams& s) {
  return {{"T", s.steps}, {"kind", std::string(to_string(s.kind))}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}};
}

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace detail

/// Writes <stem>.bin (little-endian float64 parameters, tensors concatenated)
/// and <stem>.json (tensor table with byte offsets, arch, schedule).
inline void save_checkpoint(const std::filesystem::path& stem, const MlpDenoiser& model,
                            const ScheduleParams& schedule) {
  const auto bin_path = std::filesystem::path(stem.string() + ".bin");
  const auto json_path = std::filesystem::path(stem.string() + ".json");
  {
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + bin_path.string());
    for (double p : model.params()) {
      const std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(p));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : model.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset_bytes", t.offset * sizeof(double)},
                       {"size_bytes", t.size * sizeof(double)}});
  }
  const nlohmann::json manifest = {{"format", "ipo-checkpoint-v1"},
                                   {"dtype", "float64-le"},
                                   {"data_file", bin_path.filename().string()},
                                   {"num_params", model.num_params()},
                                   {"tensors", tensors},
                                   {"arch", arch_to_json(model.arch())},
                                   {"schedule", schedule_to_json(schedule)}};
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  out << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  const auto json_path = std::filesystem::path(stem.string() + ".json");
  std::ifstream in(json_path);
  if (!in) throw MissingArtifact("missing checkpoint manifest " + json_path.string());
  const auto manifest = nlohmann::json::parse(in);

  DenoiserArch arch;
  const auto& a = manifest.at("arch");
  arch.input_dim = a.at("input_dim").get<std::size_t>();
  arch.condition_dim = a.at("condition_dim").get<std::size_t>();
  arch.hidden_sizes = a.at("hidden_sizes").get<std::vector<std::size_t>>();
  arch.time_embedding_size = a.at("time_embedding_size").get<std::size_t>();
  ScheduleParams sched;
  const auto& s = manifest.at("schedule");
  sched.steps = s.at("T").get<int>();
  sched.kind = schedule_kind_from_string(s.at("kind").get<std::string>());
  sched.beta_min = s.at("beta_min").get<double>();
  sched.beta_max = s.at("beta_max").get<double>();

  Checkpoint ck{MlpDenoiser(arch), sched};
  const auto bin_path = json_path.parent_path() / manifest.at("data_file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw MissingArtifact("missing checkpoint data " + bin_path.string());
  auto params = ck.model.params();
  if (manifest.at("num_params").get<std::size_t>() != params.size()) {
    throw std::runtime_error("checkpoint parameter count does not match its arch");
  }
  for (auto& p : params) {
    std::uint64_t bits = 0;
    if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw std::runtime_error("truncated checkpoint data " + bin_path.string());
    }
    p = std::bit_cast<double>(detail::to_little_endian(bits));
  }
  return ck;
}

}  // namespace ipo
