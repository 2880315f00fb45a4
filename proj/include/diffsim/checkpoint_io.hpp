#pragma once
// Binary checkpoint container: named f64 arrays behind a magic/version header
// and a shape table. Integer state (iteration counts, rng words) is stored as
// bit patterns so round trips are exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "algo.hpp"
#include "env.hpp"

namespace diffsim::ckpt {

inline constexpr char kMagic[8] = {'D', 'S', 'I', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::map<std::string, std::vector<double>> arrays;

  std::vector<double>& at(const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw CheckpointError("checkpoint: missing entry '" + name + "'");
    return it->second;
  }

  // fails with a shape diff if the stored length differs from what the
  // current model expects
  std::vector<double>& expect(const std::string& name, std::size_t count) {
    auto& a = at(name);
    if (a.size() != count)
      throw CheckpointError("checkpoint: entry '" + name + "' has " +
                            std::to_string(a.size()) + " values, model needs " +
                            std::to_string(count));
    return a;
  }
};

inline double pack_u64(std::uint64_t x) { return std::bit_cast<double>(x); }
inline std::uint64_t unpack_u64(double x) {
  return std::bit_cast<std::uint64_t>(x);
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for write: " + path);
  out.write(kMagic, sizeof(kMagic));
  auto put_u32 = [&](std::uint32_t x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(x));
  };
  auto put_u64 = [&](std::uint64_t x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(x));
  };
  put_u32(kVersion);
  put_u32(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& [name, data] : c.arrays) {
    put_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(data.size());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("short write to checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  auto get_u32 = [&]() {
    std::uint32_t x = 0;
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    return x;
  };
  auto get_u64 = [&]() {
    std::uint64_t x = 0;
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    return x;
  };
  const std::uint32_t version = get_u32();
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const std::uint32_t n = get_u32();
  Checkpoint c;
  for (std::uint32_t k = 0; k < n; ++k) {
    const std::uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint64_t count = get_u64();
    std::vector<double> data(count);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint: " + path);
    c.arrays.emplace(std::move(name), std::move(data));
  }
  return c;
}

namespace detail {

inline void put_opt(Checkpoint& c, const std::string& prefix,
                    const nets::AdamW& o) {
  c.arrays[prefix + ".m"] = o.m;
  c.arrays[prefix + ".v"] = o.v;
  c.arrays[prefix + ".step"] = {pack_u64(static_cast<std::uint64_t>(o.step_count))};
}

inline void get_opt(Checkpoint& c, const std::string& prefix, nets::AdamW& o,
                    std::size_t n_params) {
  auto& m = c.at(prefix + ".m");
  auto& v = c.at(prefix + ".v");
  if (!m.empty() && m.size() != n_params)
    throw CheckpointError("checkpoint: entry '" + prefix + ".m' has " +
                          std::to_string(m.size()) + " values, model needs " +
                          std::to_string(n_params));
  if (v.size() != m.size())
    throw CheckpointError("checkpoint: optimizer moment shapes disagree in '" +
                          prefix + "'");
  o.m = m;
  o.v = v;
  o.step_count =
      static_cast<long>(unpack_u64(c.expect(prefix + ".step", 1)[0]));
}

}  // namespace detail

// Full trainer state: parameters, optimizer moments, temperature, metrics
// accumulators, and every environment's dynamic state + rng position, so a
// resumed run continues bit-for-bit.
template <class Task>
Checkpoint snapshot_trainer(algo::Trainer<Task>& tr) {
  Checkpoint c;
  c.arrays["meta"] = {
      static_cast<double>(tr.iteration()),
      static_cast<double>(tr.env_steps()),
      tr.temperature().log_alpha,
      tr.last_return_mean(),
      tr.last_return_std(),
  };
  c.arrays["policy"] = tr.policy_params();
  detail::put_opt(c, "opt.actor", tr.actor_opt());
  for (std::size_t k = 0; k < tr.critic_params().size(); ++k) {
    c.arrays["critic." + std::to_string(k)] = tr.critic_params()[k];
    detail::put_opt(c, "opt.critic." + std::to_string(k), tr.critic_opts()[k]);
  }
  detail::put_opt(c, "opt.alpha", tr.temperature().opt);
  auto& envs = tr.envs();
  for (int i = 0; i < envs.size(); ++i) {
    const std::string p = "env." + std::to_string(i);
    std::vector<double> scalars;
    auto st = envs.state(i);
    Task::visit(st, [&](double& x) { scalars.push_back(x); });
    c.arrays[p + ".state"] = std::move(scalars);
    c.arrays[p + ".cursor"] = {static_cast<double>(envs.cursor(i))};
    c.arrays[p + ".rng"] = {pack_u64(envs.stream(i).key()),
                            pack_u64(envs.stream(i).counter())};
    c.arrays[p + ".ep_return"] = {tr.episode_returns()[i]};
  }
  return c;
}

template <class Task>
void restore_trainer(algo::Trainer<Task>& tr, Checkpoint c) {
  auto& meta = c.expect("meta", 5);
  tr.policy_params() = c.expect("policy", tr.policy_params().size());
  detail::get_opt(c, "opt.actor", tr.actor_opt(), tr.policy_params().size());
  for (std::size_t k = 0; k < tr.critic_params().size(); ++k) {
    tr.critic_params()[k] = c.expect("critic." + std::to_string(k),
                                     tr.critic_params()[k].size());
    detail::get_opt(c, "opt.critic." + std::to_string(k), tr.critic_opts()[k],
                    tr.critic_params()[k].size());
  }
  detail::get_opt(c, "opt.alpha", tr.temperature().opt, 1);
  auto& envs = tr.envs();
  for (int i = 0; i < envs.size(); ++i) {
    const std::string p = "env." + std::to_string(i);
    auto& st = envs.state(i);
    std::size_t n = 0;
    Task::visit(st, [&](double&) { ++n; });
    auto& scalars = c.expect(p + ".state", n);
    std::size_t j = 0;
    Task::visit(st, [&](double& x) { x = scalars[j++]; });
    envs.cursor(i) = static_cast<int>(c.expect(p + ".cursor", 1)[0]);
    auto& rng = c.expect(p + ".rng", 2);
    envs.stream(i).restore(unpack_u64(rng[0]), unpack_u64(rng[1]));
    tr.episode_returns()[i] = c.expect(p + ".ep_return", 1)[0];
  }
  tr.iteration() = static_cast<int>(meta[0]);
  tr.env_steps() = static_cast<long>(meta[1]);
  tr.temperature().log_alpha = meta[2];
  tr.last_return_mean() = meta[3];
  tr.last_return_std() = meta[4];
}

}  // namespace diffsim::ckpt
