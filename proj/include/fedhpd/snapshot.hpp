#pragma once

#include <filesystem>
#include <iosfwd>

#include "fedhpd/nn.hpp"
#include "fedhpd/policy.hpp"

namespace fedhpd {

/// Parameter snapshot layout (all little-endian):
///   "FHPD", u32 version, u32 layer count,
///   per layer: u32 input_dim, u32 output_dim, u32 activation tag,
///   u64 parameter count, f64 parameters,
///   u32 head tag (0 = bare network), u32 log_std count, f64 log_std values.
inline constexpr std::uint32_t kSnapshotVersion = 1;

void write_snapshot(std::ostream& out, const Mlp<double>& net);
Mlp<double> read_network_snapshot(std::istream& in);

void write_snapshot(std::ostream& out, const Policy& policy);
Policy read_policy_snapshot(std::istream& in);

void save_policy(const std::filesystem::path& path, const Policy& policy);
Policy load_policy(const std::filesystem::path& path);

}  // namespace fedhpd
